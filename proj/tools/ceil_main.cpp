// SPDX-License-Identifier: Apache-2.0
//
// ceil: compress CNN feature maps below a memory ceiling with learnable
// channel projections, then fold the lifts away for inference.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ceil/catalog.hpp"
#include "ceil/dataset.hpp"
#include "ceil/model_store.hpp"
#include "ceil/planner.hpp"
#include "ceil/projection.hpp"
#include "ceil/report.hpp"
#include "ceil/synth.hpp"
#include "ceil/trainer.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::array<int, 3> parse_input_shape(const std::string& s) {
  int c, h, w;
  char x1, x2;
  std::istringstream is(s);
  if (!(is >> c >> x1 >> h >> x2 >> w) || x1 != 'x' || x2 != 'x' || c <= 0 || h <= 0 || w <= 0)
    throw ceilc::ParamError("--input must look like CxHxW, got '" + s + "'");
  return {c, h, w};
}

std::string percent(double ratio) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", ratio * 100.0);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ceilc::IoError("cannot write " + path);
  f << text;
}

ceilc::TrainConfig load_train_config(const std::string& path) {
  ceilc::TrainConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream f(path);
  if (!f) throw ceilc::IoError("cannot read config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ceilc::FormatError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    auto strip = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    key = strip(key);
    val = strip(val);
    try {
      if (key == "lr")
        cfg.lr = std::stof(val);
      else if (key == "epochs_per_insertion")
        cfg.epochs_per_insertion = std::stoi(val);
      else if (key == "final_epochs")
        cfg.final_epochs = std::stoi(val);
      else if (key == "baseline_epochs")
        cfg.baseline_epochs = std::stoi(val);
      else if (key == "batch_size")
        cfg.batch_size = std::stoi(val);
      else if (key == "plateau_patience")
        cfg.plateau_patience = std::stoi(val);
      else if (key == "plateau_factor")
        cfg.plateau_factor = std::stof(val);
      else if (key == "seed")
        cfg.seed = static_cast<std::uint32_t>(std::stoul(val));
      else if (key == "momentum")
        cfg.momentum = std::stof(val);
      else if (key == "val_fraction")
        cfg.val_fraction = std::stod(val);
      else if (key == "tie_projections")
        cfg.tie_projections = std::stoi(val) != 0;
      else if (key == "init")
        cfg.init = val;
      else
        throw ceilc::FormatError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    } catch (const ceilc::Error&) {
      throw;
    } catch (...) {
      throw ceilc::FormatError(path + ":" + std::to_string(lineno) + ": bad value '" + val + "'");
    }
  }
  return cfg;
}

ceilc::DatasetPair load_dataset(const std::string& name, const std::string& data_dir,
                                std::uint32_t seed) {
  if (data_dir.empty())
    throw ceilc::ParamError("no data directory: pass --data-dir or set CEIL_DATA_DIR");
  if (name == "mnist") return ceilc::load_mnist(data_dir);
  if (name == "cifar10") return ceilc::load_cifar10(data_dir);
  if (name == "digits") {
    // procedural stand-in dataset in MNIST format; generated on first use
    if (!fs::exists(fs::path(data_dir) / "train-images-idx3-ubyte")) {
      int n_train = 12000, n_test = 2000;
      if (const char* e = std::getenv("CEIL_DIGITS_TRAIN")) n_train = std::atoi(e);
      if (const char* e = std::getenv("CEIL_DIGITS_TEST")) n_test = std::atoi(e);
      fs::create_directories(data_dir);
      ceilc::write_digit_dataset(data_dir, n_train, n_test, seed);
    }
    return ceilc::load_mnist(data_dir);
  }
  throw ceilc::ParamError("unknown dataset '" + name + "' (expected mnist, cifar10 or digits)");
}

std::string default_arch_for(const std::string& dataset) {
  if (dataset == "cifar10") return "cifar-cnn";
  return "mnist-cnn";
}

json plan_to_json(const ceilc::CeilingPlan& plan, const std::string& arch,
                  const std::string& input) {
  json j;
  j["arch"] = arch;
  j["input"] = input;
  j["ceiling_elements"] = plan.ceiling_elements;
  j["ceiling_factor"] = plan.ceiling_factor;
  j["overall_compression"] = plan.overall_compression;
  j["original_total"] = plan.original_total;
  j["planned_total"] = plan.planned_total;
  json assignments = json::object();
  json predicted = json::object();
  for (const auto& [site, a] : plan.assignments) {
    assignments[site] = a.k;
    json p;
    p["compressed_elements"] = a.compressed_elements;
    p["consumer"] = a.consumer;
    p["overhead_ok"] = a.overhead_ok;
    p["param_delta"] = a.param_delta;
    predicted[site] = p;
  }
  j["assignments"] = assignments;
  j["predicted"] = predicted;
  j["warnings"] = plan.warnings;
  return j;
}

ceilc::CeilingPlan plan_from_json(const json& j) {
  ceilc::CeilingPlan plan;
  plan.ceiling_elements = j.at("ceiling_elements").get<long long>();
  plan.ceiling_factor = j.at("ceiling_factor").get<double>();
  plan.overall_compression = j.value("overall_compression", 1.0);
  plan.original_total = j.value("original_total", 0LL);
  plan.planned_total = j.value("planned_total", 0LL);
  for (const auto& [site, k] : j.at("assignments").items()) {
    ceilc::PlanAssignment a;
    a.k = k.get<int>();
    if (j.contains("predicted") && j.at("predicted").contains(site)) {
      const auto& p = j.at("predicted").at(site);
      a.compressed_elements = p.value("compressed_elements", 0LL);
      a.consumer = p.value("consumer", "");
      a.overhead_ok = p.value("overhead_ok", true);
      a.param_delta = p.value("param_delta", 0LL);
    }
    plan.assignments[site] = a;
  }
  if (j.contains("warnings"))
    for (const auto& w : j.at("warnings")) plan.warnings.push_back(w.get<std::string>());
  return plan;
}

// after-state of a compressed/loaded net: per-site ranks from the s1 shapes
ceilc::CeilingPlan plan_of_network(const ceilc::NetworkGraph& net,
                                   const ceilc::FeatureMapInventory& inv, long long ceiling) {
  ceilc::CeilingPlan plan;
  plan.ceiling_elements = ceiling > 0 ? ceiling : inv.max_elements();
  plan.ceiling_factor =
      static_cast<double>(inv.max_elements()) / static_cast<double>(plan.ceiling_elements);
  for (const auto& e : inv.entries) {
    const ceilc::LayerSpec* proj = net.find(ceilc::projection_layer_name(e.site));
    if (!proj) continue;
    ceilc::PlanAssignment a;
    a.k = proj->rank;
    a.compressed_elements = static_cast<long long>(a.k) * e.m * e.n;
    plan.assignments[e.site] = a;
  }
  plan.original_total = inv.total_elements();
  plan.planned_total = 0;
  for (const auto& e : inv.entries) plan.planned_total += plan.planned_elements(e);
  plan.overall_compression =
      static_cast<double>(plan.original_total) / static_cast<double>(plan.planned_total);
  return plan;
}

struct CommonTrainFlags {
  std::string config_path;
  double lr = -1.0;
  int baseline_epochs = -1, epochs_per_insertion = -1, final_epochs = -1, batch_size = -1;
  long long seed = -1;
  std::string init;

  ceilc::TrainConfig resolve() const {
    ceilc::TrainConfig cfg = load_train_config(config_path);
    if (lr > 0) cfg.lr = static_cast<float>(lr);
    if (baseline_epochs >= 0) cfg.baseline_epochs = baseline_epochs;
    if (epochs_per_insertion >= 0) cfg.epochs_per_insertion = epochs_per_insertion;
    if (final_epochs >= 0) cfg.final_epochs = final_epochs;
    if (batch_size > 0) cfg.batch_size = batch_size;
    if (seed >= 0) cfg.seed = static_cast<std::uint32_t>(seed);
    if (!init.empty()) cfg.init = init;
    return cfg;
  }
  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value training config file");
    cmd->add_option("--lr", lr, "learning rate");
    cmd->add_option("--epochs", baseline_epochs, "baseline training epochs");
    cmd->add_option("--epochs-per-insertion", epochs_per_insertion,
                    "epochs after each projection insertion");
    cmd->add_option("--final-epochs", final_epochs, "end-to-end epochs after the last insertion");
    cmd->add_option("--batch-size", batch_size, "minibatch size");
    cmd->add_option("--seed", seed, "rng seed");
    cmd->add_option("--init", init, "projection init: svd|pca|random");
  }
};

int run(int argc, char** argv) {
  CLI::App app{"feature-map ceiling compression toolkit"};
  app.require_subcommand(1);

  std::string env_data_dir;
  if (const char* env = std::getenv("CEIL_DATA_DIR")) env_data_dir = env;

  // ---- profile ----
  auto* profile_cmd = app.add_subcommand("profile", "stored feature-map inventory and ratios");
  std::string p_arch, p_input, p_format = "csv", p_out;
  profile_cmd->add_option("--arch", p_arch, "catalog name or arch file")->required();
  profile_cmd->add_option("--input", p_input, "input shape CxHxW");
  profile_cmd->add_option("--format", p_format, "csv|svg");
  profile_cmd->add_option("--out", p_out, "write the report here instead of stdout");

  // ---- plan ----
  auto* plan_cmd = app.add_subcommand("plan", "ceiling plan and compression report");
  std::string l_arch, l_input, l_format = "csv", l_out, l_report;
  double l_factor = 0.0;
  long long l_elements = 0;
  plan_cmd->add_option("--arch", l_arch, "catalog name or arch file")->required();
  plan_cmd->add_option("--input", l_input, "input shape CxHxW");
  plan_cmd->add_option("--ceiling-factor", l_factor, "largest map / ceiling");
  plan_cmd->add_option("--ceiling-elements", l_elements, "ceiling in elements");
  plan_cmd->add_option("--out", l_out, "write the plan as JSON");
  plan_cmd->add_option("--format", l_format, "report format csv|svg");
  plan_cmd->add_option("--report", l_report, "write the report here");

  // ---- train-baseline ----
  auto* tb_cmd = app.add_subcommand("train-baseline", "train the uncompressed reference net");
  std::string tb_dataset, tb_data_dir = env_data_dir, tb_arch, tb_out;
  CommonTrainFlags tb_flags;
  tb_cmd->add_option("--dataset", tb_dataset, "mnist|cifar10|digits")->required();
  tb_cmd->add_option("--data-dir", tb_data_dir, "dataset directory (or CEIL_DATA_DIR)");
  tb_cmd->add_option("--arch", tb_arch, "catalog name or arch file");
  tb_cmd->add_option("--out", tb_out, "checkpoint path")->required();
  tb_flags.attach(tb_cmd);

  // ---- compress ----
  auto* cp_cmd = app.add_subcommand("compress", "insert projections per plan and fine-tune");
  std::string cp_ckpt, cp_plan, cp_dataset, cp_data_dir = env_data_dir, cp_out;
  CommonTrainFlags cp_flags;
  cp_cmd->add_option("--ckpt", cp_ckpt, "baseline checkpoint")->required();
  cp_cmd->add_option("--plan", cp_plan, "plan JSON from `plan`")->required();
  cp_cmd->add_option("--dataset", cp_dataset, "mnist|cifar10|digits")->required();
  cp_cmd->add_option("--data-dir", cp_data_dir, "dataset directory (or CEIL_DATA_DIR)");
  cp_cmd->add_option("--out", cp_out, "compressed checkpoint path")->required();
  cp_flags.attach(cp_cmd);

  // ---- fold ----
  auto* fd_cmd = app.add_subcommand("fold", "fold lifts into consumers and export the model");
  std::string fd_ckpt, fd_out;
  bool fd_explicit = false;
  fd_cmd->add_option("--ckpt", fd_ckpt, "checkpoint with projections")->required();
  fd_cmd->add_option("--out", fd_out, "model path")->required();
  fd_cmd->add_flag("--allow-explicit-lift", fd_explicit,
                   "keep the lift as a layer where no convolution can absorb it");

  // ---- eval ----
  auto* ev_cmd = app.add_subcommand("eval", "accuracy of a checkpoint or folded model");
  std::string ev_ckpt, ev_model, ev_dataset, ev_data_dir = env_data_dir;
  ev_cmd->add_option("--ckpt", ev_ckpt, "checkpoint path");
  ev_cmd->add_option("--model", ev_model, "folded model path");
  ev_cmd->add_option("--dataset", ev_dataset, "mnist|cifar10|digits")->required();
  ev_cmd->add_option("--data-dir", ev_data_dir, "dataset directory (or CEIL_DATA_DIR)");

  // ---- report ----
  auto* rp_cmd = app.add_subcommand("report", "before/after bar chart with the ceiling line");
  std::string rp_before, rp_after, rp_out;
  rp_cmd->add_option("--ckpt-before", rp_before, "baseline checkpoint")->required();
  rp_cmd->add_option("--ckpt-after", rp_after, "compressed checkpoint")->required();
  rp_cmd->add_option("--out", rp_out, "SVG output path")->required();

  // ---- dump-arch ----
  auto* da_cmd = app.add_subcommand("dump-arch", "print a catalog architecture as text");
  std::string da_arch;
  da_cmd->add_option("--arch", da_arch, "catalog name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (profile_cmd->parsed()) {
    ceilc::NetworkGraph net = ceilc::resolve_arch(p_arch);
    std::array<int, 3> input = p_input.empty() ? net.input_shape : parse_input_shape(p_input);
    ceilc::FeatureMapInventory inv = ceilc::profile(net, input);
    long long params = ceilc::catalog_has(p_arch) ? ceilc::catalog_param_count(p_arch)
                                                  : ceilc::analytic_param_count(net);
    std::string body = ceilc::compression_report(inv, nullptr, p_format);
    if (!p_out.empty())
      write_text(p_out, body);
    else
      std::cout << body;
    std::cout << "largest_fm_elements," << inv.max_elements() << "\n";
    std::cout << "total_param_elements," << params << "\n";
    std::cout << "largest_fm_ratio," << percent(ceilc::largest_fm_ratio(inv, params)) << "\n";
    return 0;
  }

  if (plan_cmd->parsed()) {
    if ((l_factor > 0) == (l_elements > 0))
      throw ceilc::ParamError("pass exactly one of --ceiling-factor or --ceiling-elements");
    ceilc::NetworkGraph net = ceilc::resolve_arch(l_arch);
    std::array<int, 3> input = l_input.empty() ? net.input_shape : parse_input_shape(l_input);
    ceilc::FeatureMapInventory inv = ceilc::profile(net, input);
    ceilc::CeilingPlan plan = l_factor > 0 ? ceilc::plan_ceiling(inv, l_factor)
                                           : ceilc::plan_ceiling_elements(inv, l_elements);
    std::string input_str = std::to_string(input[0]) + "x" + std::to_string(input[1]) + "x" +
                            std::to_string(input[2]);
    if (!l_out.empty()) write_text(l_out, plan_to_json(plan, l_arch, input_str).dump(2) + "\n");
    std::string body = ceilc::compression_report(inv, &plan, l_format);
    if (!l_report.empty())
      write_text(l_report, body);
    else if (l_format == "svg")
      std::cout << body;
    if (l_format == "csv" && l_report.empty()) std::cout << body;
    std::printf("ceiling_elements,%lld\n", plan.ceiling_elements);
    std::printf("ceiling_factor,%.2f\n", plan.ceiling_factor);
    std::printf("overall_compression,%.2f\n", plan.overall_compression);
    for (const auto& w : plan.warnings) std::cout << "warning," << w << "\n";
    return 0;
  }

  if (tb_cmd->parsed()) {
    ceilc::TrainConfig cfg = tb_flags.resolve();
    ceilc::DatasetPair data = load_dataset(tb_dataset, tb_data_dir, cfg.seed);
    std::string arch = tb_arch.empty() ? default_arch_for(tb_dataset) : tb_arch;
    ceilc::NetworkGraph net = ceilc::resolve_arch(arch);
    ceilc::init_params(net, cfg.seed);
    std::ofstream log(tb_out + ".log.csv", std::ios::trunc);
    ceilc::Checkpoint ckpt = ceilc::train_baseline(net, data.train, cfg, &log);
    float test_acc = ceilc::evaluate(ckpt.net, data.test);
    ceilc::save_checkpoint(ckpt, tb_out, {{"arch", arch}, {"dataset", tb_dataset},
                                          {"test_accuracy", std::to_string(test_acc)}});
    std::printf("val_accuracy,%.4f\n", ckpt.val_accuracy);
    std::printf("test_accuracy,%.4f\n", test_acc);
    std::printf("checkpoint,%s\n", tb_out.c_str());
    return 0;
  }

  if (cp_cmd->parsed()) {
    ceilc::TrainConfig cfg = cp_flags.resolve();
    ceilc::DatasetPair data = load_dataset(cp_dataset, cp_data_dir, cfg.seed);
    ceilc::Checkpoint base = ceilc::load_checkpoint(cp_ckpt);
    std::ifstream pf(cp_plan);
    if (!pf) throw ceilc::IoError("cannot read plan " + cp_plan);
    json pj;
    try {
      pf >> pj;
    } catch (const json::exception& e) {
      throw ceilc::FormatError("plan " + cp_plan + " is not valid JSON: " + e.what());
    }
    ceilc::CeilingPlan plan = plan_from_json(pj);
    std::ofstream log(cp_out + ".log.csv", std::ios::trunc);
    ceilc::Checkpoint out = ceilc::progressive_compress(base, plan, data.train, cfg, &log);
    float test_acc = ceilc::evaluate(out.net, data.test);
    ceilc::save_checkpoint(out, cp_out,
                           {{"arch", ceilc::file_meta(cp_ckpt, "arch")},
                            {"dataset", cp_dataset},
                            {"test_accuracy", std::to_string(test_acc)},
                            {"plan.ceiling_elements", std::to_string(plan.ceiling_elements)}});
    std::printf("val_accuracy,%.4f\n", out.val_accuracy);
    std::printf("test_accuracy,%.4f\n", test_acc);
    std::printf("checkpoint,%s\n", cp_out.c_str());
    return 0;
  }

  if (fd_cmd->parsed()) {
    ceilc::Checkpoint ckpt = ceilc::load_checkpoint(fd_ckpt);
    ceilc::export_folded(ckpt.net, fd_out, fd_explicit,
                         {{"arch", ceilc::file_meta(fd_ckpt, "arch")},
                          {"val_accuracy_at_fold", ceilc::file_meta(fd_ckpt, "val_accuracy")}});
    std::printf("model,%s\n", fd_out.c_str());
    std::printf("param_elements,%lld\n", ceilc::file_param_elements(fd_out));
    return 0;
  }

  if (ev_cmd->parsed()) {
    if (ev_ckpt.empty() == ev_model.empty())
      throw ceilc::ParamError("pass exactly one of --ckpt or --model");
    ceilc::DatasetPair data = load_dataset(ev_dataset, ev_data_dir, 1);
    ceilc::NetworkGraph net =
        ev_ckpt.empty() ? ceilc::load_network(ev_model) : ceilc::load_checkpoint(ev_ckpt).net;
    std::printf("accuracy,%.4f\n", ceilc::evaluate(net, data.test));
    return 0;
  }

  if (rp_cmd->parsed()) {
    ceilc::Checkpoint before = ceilc::load_checkpoint(rp_before);
    ceilc::Checkpoint after = ceilc::load_checkpoint(rp_after);
    ceilc::FeatureMapInventory inv = ceilc::profile(before.net, before.net.input_shape);
    long long ceiling = 0;
    std::string cs = ceilc::file_meta(rp_after, "plan.ceiling_elements");
    if (!cs.empty()) ceiling = std::stoll(cs);
    ceilc::CeilingPlan plan = plan_of_network(after.net, inv, ceiling);
    write_text(rp_out, ceilc::report_svg(inv, &plan, "stored feature maps: before vs after"));
    std::cout << ceilc::report_csv(inv, &plan);
    std::printf("overall_compression,%.2f\n", plan.overall_compression);
    std::printf("svg,%s\n", rp_out.c_str());
    return 0;
  }

  if (da_cmd->parsed()) {
    std::cout << ceilc::arch_to_text(ceilc::catalog_get(da_arch));
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ceilc::Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    const std::string& c = e.category();
    if (c == "format" || c == "io" || c == "corruption" || c == "data") return 2;
    if (c == "numerical" || c == "infeasible") return 3;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
