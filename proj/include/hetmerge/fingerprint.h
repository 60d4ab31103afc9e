// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>

namespace hetmerge {

// FNV-1a over raw bytes; used to tie caches and recipes to the exact models
// and batches they were computed from.
class Fingerprint {
 public:
  void mix_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void mix(std::span<const double> values) {
    mix_bytes(values.data(), values.size_bytes());
  }
  void mix(std::uint64_t v) { mix_bytes(&v, sizeof(v)); }

  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string fingerprint_hex(std::uint64_t fp);

}  // namespace hetmerge
