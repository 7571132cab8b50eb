// SPDX-License-Identifier: Apache-2.0
#include "ceil/model_store.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ceil/catalog.hpp"
#include "ceil/projection.hpp"

namespace ceilc {

namespace {

constexpr int kVersion = 1;

static_assert(sizeof(float) == 4);

struct ManifestEntry {
  std::string name;
  std::vector<int> shape;
  long long offset = 0;  // bytes into the payload
  long long elems = 0;
  bool trainable = false;
};

struct ModelFile {
  std::string arch_text;
  MetaList meta;
  std::vector<ManifestEntry> manifest;
  std::vector<char> payload;
};

std::string shape_to_str(const std::vector<int>& shape) {
  std::string s;
  for (size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s;
}

std::vector<int> shape_from_str(const std::string& s) {
  std::vector<int> shape;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, 'x')) shape.push_back(std::stoi(part));
  return shape;
}

std::string float_to_str(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

// Deterministic tensor order: graph layer order, parameters first, then the
// optimizer state under "opt." in the same order.
std::vector<std::string> param_order(const NetworkGraph& net) {
  std::vector<std::string> order;
  for (const auto& l : net.layers)
    for (const char* suffix : {".w", ".b", ".s1", ".s2"}) {
      std::string key = l.name + suffix;
      if (net.params.count(key)) order.push_back(key);
    }
  // anything not tied to a layer (defensive) in sorted order
  for (const auto& [key, p] : net.params)
    if (std::find(order.begin(), order.end(), key) == order.end()) order.push_back(key);
  return order;
}

void write_file(const ModelFile& mf, const std::string& path) {
  if constexpr (std::endian::native != std::endian::little)
    throw IoError("model files require a little-endian host");
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp);
    f << "CEIL " << kVersion << "\n";
    f << "endian=little\n";
    f << "[arch]\n" << mf.arch_text;
    f << "[meta]\n";
    for (const auto& [k, v] : mf.meta) f << k << "=" << v << "\n";
    f << "[tensors]\n";
    for (const auto& e : mf.manifest)
      f << e.name << " " << shape_to_str(e.shape) << " " << e.offset << " " << e.elems << " "
        << (e.trainable ? 1 : 0) << "\n";
    f << "[payload " << mf.payload.size() << "]\n";
    f.write(mf.payload.data(), static_cast<std::streamsize>(mf.payload.size()));
    if (!f) throw IoError("write failed on " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ModelFile read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw FormatError(path + ": empty file");
  {
    std::istringstream is(line);
    std::string magic;
    int version = -1;
    is >> magic >> version;
    if (magic != "CEIL") throw FormatError(path + ": bad magic '" + magic + "'");
    if (version != kVersion)
      throw FormatError(path + ": unsupported version " + std::to_string(version));
  }
  if (!std::getline(f, line) || line != "endian=little")
    throw FormatError(path + ": missing endian declaration");
  if (!std::getline(f, line) || line != "[arch]") throw FormatError(path + ": missing [arch]");

  ModelFile mf;
  std::ostringstream arch;
  while (std::getline(f, line)) {
    if (line == "[meta]") break;
    arch << line << "\n";
  }
  mf.arch_text = arch.str();
  while (std::getline(f, line)) {
    if (line == "[tensors]") break;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path + ": bad meta line '" + line + "'");
    mf.meta.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  long long payload_bytes = -1;
  while (std::getline(f, line)) {
    if (line.rfind("[payload ", 0) == 0) {
      payload_bytes = std::stoll(line.substr(9));
      break;
    }
    std::istringstream is(line);
    ManifestEntry e;
    std::string shape;
    int trainable;
    if (!(is >> e.name >> shape >> e.offset >> e.elems >> trainable))
      throw FormatError(path + ": bad manifest line '" + line + "'");
    e.shape = shape_from_str(shape);
    e.trainable = trainable != 0;
    mf.manifest.push_back(std::move(e));
  }
  if (payload_bytes < 0) throw FormatError(path + ": missing [payload] section");
  mf.payload.resize(static_cast<size_t>(payload_bytes));
  if (!f.read(mf.payload.data(), payload_bytes))
    throw CorruptionError(path + ": payload shorter than the declared " +
                          std::to_string(payload_bytes) + " bytes");
  char extra;
  if (f.read(&extra, 1))
    throw CorruptionError(path + ": trailing bytes after the declared payload");
  for (const auto& e : mf.manifest) {
    long long count = 1;
    for (int d : e.shape) count *= d;
    if (count != e.elems)
      throw CorruptionError(path + ": manifest entry '" + e.name + "' shape/element mismatch");
    if (e.offset < 0 || e.offset + e.elems * 4 > payload_bytes)
      throw CorruptionError(path + ": manifest entry '" + e.name + "' exceeds the payload");
  }
  return mf;
}

ModelFile build(const NetworkGraph& net, const std::map<std::string, Tensor>* momentum,
                const MetaList& meta) {
  ModelFile mf;
  mf.arch_text = arch_to_text(net);
  mf.meta = meta;
  auto add_tensor = [&](const std::string& name, const Tensor& t, bool trainable) {
    ManifestEntry e;
    e.name = name;
    e.shape = t.shape();
    e.elems = t.size();
    e.offset = static_cast<long long>(mf.payload.size());
    mf.payload.resize(mf.payload.size() + static_cast<size_t>(t.size()) * 4);
    std::memcpy(mf.payload.data() + e.offset, t.data(), static_cast<size_t>(t.size()) * 4);
    e.trainable = trainable;
    mf.manifest.push_back(std::move(e));
  };
  auto order = param_order(net);
  for (const auto& key : order) {
    const Param& p = net.params.at(key);
    add_tensor(key, p.value, p.trainable);
  }
  if (momentum)
    for (const auto& key : order) {
      auto it = momentum->find(key);
      if (it != momentum->end()) add_tensor("opt." + key, it->second, false);
    }
  return mf;
}

Tensor tensor_of(const ModelFile& mf, const ManifestEntry& e) {
  Tensor t(e.shape);
  std::memcpy(t.data(), mf.payload.data() + e.offset, static_cast<size_t>(e.elems) * 4);
  return t;
}

std::string meta_of(const ModelFile& mf, const std::string& key) {
  for (const auto& [k, v] : mf.meta)
    if (k == key) return v;
  return "";
}

NetworkGraph net_of(const ModelFile& mf) {
  NetworkGraph net = arch_from_text(mf.arch_text);
  for (const auto& e : mf.manifest) {
    if (e.name.rfind("opt.", 0) == 0) continue;
    net.params[e.name] = Param{tensor_of(mf, e), e.trainable};
  }
  net.validate();
  return net;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path, const MetaList& extra) {
  MetaList meta{{"kind", "checkpoint"},
                {"epoch", std::to_string(ckpt.epoch)},
                {"stage", std::to_string(ckpt.stage)},
                {"val_accuracy", float_to_str(ckpt.val_accuracy)}};
  meta.insert(meta.end(), extra.begin(), extra.end());
  write_file(build(ckpt.net, &ckpt.momentum, meta), path);
}

Checkpoint load_checkpoint(const std::string& path) {
  ModelFile mf = read_file(path);
  if (meta_of(mf, "kind") != "checkpoint")
    throw FormatError(path + ": not a checkpoint file");
  Checkpoint ckpt;
  ckpt.net = net_of(mf);
  for (const auto& e : mf.manifest)
    if (e.name.rfind("opt.", 0) == 0) ckpt.momentum[e.name.substr(4)] = tensor_of(mf, e);
  ckpt.epoch = std::stoi(meta_of(mf, "epoch"));
  ckpt.stage = std::stoi(meta_of(mf, "stage"));
  ckpt.val_accuracy = std::stof(meta_of(mf, "val_accuracy"));
  return ckpt;
}

void save_network(const NetworkGraph& net, const std::string& path, const MetaList& extra) {
  MetaList meta{{"kind", "model"}};
  meta.insert(meta.end(), extra.begin(), extra.end());
  write_file(build(net, nullptr, meta), path);
}

NetworkGraph load_network(const std::string& path) {
  ModelFile mf = read_file(path);
  return net_of(mf);
}

void export_folded(const NetworkGraph& net_with_projections, const std::string& path,
                   bool allow_explicit_lift, const MetaList& extra) {
  NetworkGraph folded = fold_network(net_with_projections, allow_explicit_lift);
  MetaList meta{{"kind", "model"}, {"folded", "1"}};
  meta.insert(meta.end(), extra.begin(), extra.end());
  write_file(build(folded, nullptr, meta), path);
}

long long file_param_elements(const std::string& path) {
  ModelFile mf = read_file(path);
  long long total = 0;
  for (const auto& e : mf.manifest)
    if (e.name.rfind("opt.", 0) != 0) total += e.elems;
  return total;
}

std::string file_meta(const std::string& path, const std::string& key) {
  return meta_of(read_file(path), key);
}

}  // namespace ceilc
