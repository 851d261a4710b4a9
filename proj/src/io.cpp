// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dupfm/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dupfm/common.hpp"

namespace dupfm::io {

namespace {

constexpr char kMagic[8] = {'D', 'U', 'P', 'F', 'M', 'B', 'I', 'N'};

static_assert(std::endian::native == std::endian::little, "little-endian host required");

}  // namespace

void write_binary(const std::filesystem::path& path, nlohmann::json header,
                  std::span<const double> payload) {
  header["payload_doubles"] = payload.size();
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  const std::uint64_t len = text.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::pair<nlohmann::json, std::vector<double>> read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open: " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ConfigError("not a dupfm binary file: " + path.string());
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header = nlohmann::json::parse(text);
  const auto n = header.at("payload_doubles").get<std::size_t>();
  std::vector<double> payload(n);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw ConfigError("truncated payload: " + path.string());
  return {std::move(header), std::move(payload)};
}

void write_tensors(const std::filesystem::path& path, nlohmann::json header,
                   std::span<const CTensor3> tensors) {
  if (tensors.empty()) throw std::invalid_argument("write_tensors: empty list");
  const auto dims = tensors.front().dims();
  std::vector<double> payload;
  payload.reserve(2 * tensors.size() * tensors.front().size());
  for (const auto& t : tensors) {
    if (t.dims() != dims) throw std::invalid_argument("write_tensors: mixed shapes");
    for (const auto& z : t.data()) {
      payload.push_back(z.real());
      payload.push_back(z.imag());
    }
  }
  header["dims"] = {dims[0], dims[1], dims[2]};
  header["count"] = tensors.size();
  header["dtype"] = "complex128";
  write_binary(path, std::move(header), payload);
}

std::pair<nlohmann::json, std::vector<CTensor3>> read_tensors(const std::filesystem::path& path) {
  auto [header, payload] = read_binary(path);
  const auto d = header.at("dims").get<std::array<std::size_t, 3>>();
  const auto count = header.at("count").get<std::size_t>();
  const std::size_t each = d[0] * d[1] * d[2];
  if (payload.size() != 2 * each * count) throw ConfigError("tensor payload size mismatch");
  std::vector<CTensor3> out;
  for (std::size_t t = 0; t < count; ++t) {
    std::vector<cdouble> data(each);
    for (std::size_t i = 0; i < each; ++i) {
      data[i] = {payload[2 * (t * each + i)], payload[2 * (t * each + i) + 1]};
    }
    out.emplace_back(d, std::move(data));
  }
  return {std::move(header), std::move(out)};
}

}  // namespace dupfm::io
