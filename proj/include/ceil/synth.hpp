// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ceilc {

/// Deterministic procedural digit dataset in MNIST IDX format (28x28
/// grayscale, labels 0-9): glyphs with random placement, scale, stroke
/// intensity and pixel noise. Writes the four standard IDX files into
/// `dir`. Intended for smoke tests and demos when the real dataset is not
/// on disk.
void write_digit_dataset(const std::string& dir, int n_train, int n_test, std::uint32_t seed);

/// One rendered digit (28*28 bytes), exposed for loader tests.
std::vector<std::uint8_t> render_digit(int digit, std::uint32_t seed);

}  // namespace ceilc
