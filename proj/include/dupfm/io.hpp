// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dupfm/tensor.hpp"

namespace dupfm::io {

// Layout: 8-byte magic "DUPFMBIN", u64 little-endian header length, UTF-8 JSON header,
// then float64 little-endian payload. The header records "payload_doubles".
void write_binary(const std::filesystem::path& path, nlohmann::json header,
                  std::span<const double> payload);
std::pair<nlohmann::json, std::vector<double>> read_binary(const std::filesystem::path& path);

// Complex tensors are stored as interleaved (re, im) pairs in column-major order.
void write_tensors(const std::filesystem::path& path, nlohmann::json header,
                   std::span<const CTensor3> tensors);
std::pair<nlohmann::json, std::vector<CTensor3>> read_tensors(const std::filesystem::path& path);

}  // namespace dupfm::io
