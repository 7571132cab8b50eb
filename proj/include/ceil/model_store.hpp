// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ceil/network.hpp"
#include "ceil/trainer.hpp"

namespace ceilc {

// Single-file container: "CEIL <version>" magic line, text header
// ([arch], [meta], [tensors] manifest), then a little-endian f32 payload.
// Writes are atomic (temp file + rename); load(save(x)) round-trips
// bit-exactly.

using MetaList = std::vector<std::pair<std::string, std::string>>;

void save_checkpoint(const Checkpoint& ckpt, const std::string& path, const MetaList& extra = {});
Checkpoint load_checkpoint(const std::string& path);

void save_network(const NetworkGraph& net, const std::string& path, const MetaList& extra = {});
NetworkGraph load_network(const std::string& path);

/// Folds every projection (fold_network) and saves the inference net:
/// w_tilde plus s1 per folded site, no s2.
void export_folded(const NetworkGraph& net_with_projections, const std::string& path,
                   bool allow_explicit_lift, const MetaList& extra = {});

/// Parameter elements in a file's manifest (optimizer state excluded).
long long file_param_elements(const std::string& path);

/// Meta key lookup ("" when absent).
std::string file_meta(const std::string& path, const std::string& key);

}  // namespace ceilc
