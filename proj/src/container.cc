// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hetmerge/container.h"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "hetmerge/error.h"

namespace hetmerge {

namespace {

static_assert(std::endian::native == std::endian::little,
              "HMM1 encoding assumes a little-endian host");

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::size_t align_up(std::size_t v) {
  return (v + kPayloadAlignment - 1) / kPayloadAlignment * kPayloadAlignment;
}

struct ParsedHeader {
  nlohmann::json json;
  std::size_t payload_start = 0;
};

ParsedHeader parse_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || !std::equal(kContainerMagic.begin(), kContainerMagic.end(),
                                      bytes.begin())) {
    throw FormatError("not an HMM1 container: bad magic");
  }
  if (bytes.size() < 16) throw IoError("HMM1 container truncated before header length");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 8, sizeof(header_len));
  if (header_len > bytes.size() - 16) throw IoError("HMM1 container truncated inside header");

  ParsedHeader out;
  out.payload_start = 16 + static_cast<std::size_t>(header_len);
  try {
    out.json = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + out.payload_start);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("HMM1 header is not valid JSON: ") + e.what());
  }
  if (!out.json.is_object() || !out.json.contains("tensors") ||
      !out.json["tensors"].is_array()) {
    throw FormatError("HMM1 header lacks a \"tensors\" array");
  }

  const std::size_t payload_size = bytes.size() - out.payload_start;
  for (const auto& t : out.json["tensors"]) {
    const std::string name = t.value("name", std::string("<unnamed>"));
    if (!t.contains("shape") || !t["shape"].is_array() || !t.contains("offset") ||
        !t.contains("dtype")) {
      throw FormatError("HMM1 tensor entry '" + name + "' is missing shape/dtype/offset");
    }
    if (t["dtype"] != "f32") {
      throw ValidationError("tensor '" + name + "': unsupported dtype " + t["dtype"].dump());
    }
    const auto shape = t["shape"].get<std::vector<std::size_t>>();
    if (shape.empty() || shape.size() > 2) {
      throw ValidationError("tensor '" + name + "': expected 1 or 2 dimensions");
    }
    const auto offset = t["offset"].get<std::size_t>();
    if (offset % kPayloadAlignment != 0) {
      throw ValidationError("tensor '" + name + "': offset " + std::to_string(offset) +
                            " is not 64-byte aligned");
    }
    const std::size_t need = element_count(shape) * sizeof(float);
    if (offset + need > payload_size) {
      const std::size_t available = offset < payload_size ? payload_size - offset : 0;
      if (available % sizeof(float) == 0) {
        // A whole number of values: the header disagrees with the data.
        throw ValidationError("tensor '" + name + "': header declares " +
                              std::to_string(element_count(shape)) +
                              " values but the payload holds " +
                              std::to_string(available / sizeof(float)));
      }
      throw IoError("HMM1 payload truncated inside tensor '" + name + "'");
    }
  }
  return out;
}

}  // namespace

NamedTensor NamedTensor::from_matrix(std::string name, const Matrix& m) {
  return {std::move(name), {m.rows(), m.cols()}, {m.data().begin(), m.data().end()}};
}

NamedTensor NamedTensor::from_vector(std::string name, std::span<const double> v) {
  return {std::move(name), {v.size()}, {v.begin(), v.end()}};
}

Matrix NamedTensor::to_matrix() const {
  if (shape.size() == 1) return Matrix(1, shape[0], values);
  return Matrix(shape[0], shape[1], values);
}

const NamedTensor* Container::find(const std::string& name) const {
  auto it = std::find_if(tensors.begin(), tensors.end(),
                         [&](const NamedTensor& t) { return t.name == name; });
  return it == tensors.end() ? nullptr : &*it;
}

const NamedTensor& Container::tensor(const std::string& name) const {
  if (const NamedTensor* t = find(name)) return *t;
  throw ValidationError("container has no tensor named '" + name + "'");
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  nlohmann::json header = c.header;
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& t : c.tensors) {
    if (element_count(t.shape) != t.values.size()) {
      throw ValidationError("tensor '" + t.name + "': shape does not match value count");
    }
    offset = align_up(offset);
    offsets.push_back(offset);
    entries.push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", "f32"}, {"offset", offset}});
    offset += t.values.size() * sizeof(float);
  }
  header["tensors"] = std::move(entries);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kContainerMagic.begin(), kContainerMagic.end());
  const std::uint64_t len = text.size();
  out.resize(16);
  std::memcpy(out.data() + 8, &len, sizeof(len));
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t payload_start = out.size();
  out.resize(payload_start + offset, 0);
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    std::uint8_t* dst = out.data() + payload_start + offsets[i];
    for (double v : c.tensors[i].values) {
      const float f = static_cast<float>(v);
      std::memcpy(dst, &f, sizeof(f));
      dst += sizeof(f);
    }
  }
  return out;
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  ParsedHeader parsed = parse_header(bytes);
  Container c;
  for (const auto& t : parsed.json["tensors"]) {
    NamedTensor nt;
    nt.name = t.at("name").get<std::string>();
    nt.shape = t["shape"].get<std::vector<std::size_t>>();
    const std::size_t count = element_count(nt.shape);
    const std::uint8_t* src = bytes.data() + parsed.payload_start + t["offset"].get<std::size_t>();
    nt.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      float f;
      std::memcpy(&f, src + i * sizeof(float), sizeof(f));
      nt.values[i] = f;
    }
    c.tensors.push_back(std::move(nt));
  }
  parsed.json.erase("tensors");
  c.header = std::move(parsed.json);
  return c;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void write_container(const std::filesystem::path& path, const Container& c) {
  write_file_bytes(path, encode_container(c));
}

Container read_container(const std::filesystem::path& path) {
  return decode_container(read_file_bytes(path));
}

nlohmann::json read_container_header(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_header(bytes).json;
}

}  // namespace hetmerge
