// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0
//
// HMM1 container: an 8-byte magic, a little-endian u64 header length, a JSON
// header, then f32 tensor payloads at 64-byte aligned offsets relative to the
// payload start. Models, datasets and feature caches all use it.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "hetmerge/tensor.h"

namespace hetmerge {

inline constexpr std::array<std::uint8_t, 8> kContainerMagic = {0x48, 0x4D, 0x4D, 0x31,
                                                                0x00, 0x00, 0x00, 0x01};
inline constexpr std::size_t kPayloadAlignment = 64;

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;  // one or two dims
  std::vector<double> values;      // row-major, stored on disk as f32

  static NamedTensor from_matrix(std::string name, const Matrix& m);
  static NamedTensor from_vector(std::string name, std::span<const double> v);
  Matrix to_matrix() const;  // 1-D tensors become a single row
};

struct Container {
  // Every top-level header key except "tensors".
  nlohmann::json header = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor& tensor(const std::string& name) const;
  const NamedTensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const Container& c);
Container decode_container(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);
// Parses and validates the header without decoding tensors.
nlohmann::json read_container_header(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace hetmerge
