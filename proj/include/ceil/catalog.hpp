// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "ceil/network.hpp"

namespace ceilc {

/// Built-in architecture shape catalog. vgg16/vgg19 are executable shapes;
/// resnet18 and mobilenetv2 are shape-only (profiler) graphs; mnist-cnn is
/// the desk-scale trainable net.
std::vector<std::string> catalog_names();
bool catalog_has(const std::string& name);
NetworkGraph catalog_get(const std::string& name);

/// Reference total parameter elements for the catalog architectures.
/// Throws LookupError for unknown names.
long long catalog_param_count(const std::string& name);

/// Default input shape (c,h,w) for a catalog architecture.
std::array<int, 3> catalog_input_shape(const std::string& name);

/// Analytic parameter elements from layer attributes (convs and dense
/// layers, with biases).
long long analytic_param_count(const NetworkGraph& net);

/// One layer per line: "<kind> <name> key=value ...", plus an optional
/// leading "input CxHxW" line. '#' starts a comment.
std::string arch_to_text(const NetworkGraph& net);
NetworkGraph arch_from_text(const std::string& text);

/// Catalog name, else a path to an architecture description file.
NetworkGraph resolve_arch(const std::string& name_or_path);

/// Fresh trainable parameters for every conv/dense layer of an executable
/// graph (seeded, deterministic).
void init_params(NetworkGraph& net, std::uint32_t seed);

}  // namespace ceilc
