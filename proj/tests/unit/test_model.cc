// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <random>

#include "doctest.h"
#include "fixtures.h"
#include "hetmerge/container.h"
#include "hetmerge/error.h"
#include "hetmerge/model.h"
#include "oracles.h"

using namespace hetmerge;

namespace {

std::vector<std::uint8_t> raw_container(const std::string& header, std::size_t payload_bytes) {
  std::vector<std::uint8_t> out(kContainerMagic.begin(), kContainerMagic.end());
  std::uint64_t len = header.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), header.begin(), header.end());
  out.resize(out.size() + payload_bytes, 0);
  return out;
}

Matrix batch(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return oracle::random_normal(n, d, rng);
}

}  // namespace

TEST_CASE("save/load round trip and byte determinism") {
  oracle::TempDir dir("model");
  ModelBundle m = fixture::random_mlp(4, {6, 6, 5}, 1, true, {{0, 0, 3}, {1, 3, 2}});
  m.metadata = {{"name", "fixture"}, {"seed", 1}};
  save_model(m, dir / "a.hmm1");
  const ModelBundle back = load_model(dir / "a.hmm1");
  CHECK(back == m);

  save_model(m, dir / "b.hmm1");
  CHECK(read_file_bytes(dir / "a.hmm1") == read_file_bytes(dir / "b.hmm1"));
  save_model(back, dir / "c.hmm1");
  CHECK(read_file_bytes(dir / "a.hmm1") == read_file_bytes(dir / "c.hmm1"));
}

TEST_CASE("container layout follows the HMM1 format") {
  const ModelBundle m = fixture::random_mlp(3, {4}, 2);
  const auto bytes = encode_container(to_container(m));
  REQUIRE(bytes.size() > 16);
  CHECK(std::equal(kContainerMagic.begin(), kContainerMagic.end(), bytes.begin()));
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
  const auto header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  CHECK(header.at("layers").size() == 1);
  CHECK(header.at("layers")[0].at("kind") == "dense");
  CHECK(header.at("layers")[0].at("activation") == "relu");
  CHECK(header.at("heads")[0].at("task") == 0);
  const std::size_t payload = 16 + len;
  for (const auto& t : header.at("tensors")) {
    CHECK(t.at("dtype") == "f32");
    CHECK(t.at("offset").get<std::size_t>() % 64 == 0);
    if (t.at("name") == "layer0.weight") {
      CHECK(t.at("shape") == nlohmann::json({4, 3}));
      float first = 0;
      std::memcpy(&first, bytes.data() + payload + t.at("offset").get<std::size_t>(), 4);
      CHECK(static_cast<double>(first) == m.layers[0].weight(0, 0));
    }
  }
}

TEST_CASE("container error classes") {
  oracle::TempDir dir("errors");
  const ModelBundle m = fixture::random_mlp(3, {4}, 3);
  auto bytes = encode_container(to_container(m));

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_container(bad), FormatError);
  write_file_bytes(dir / "bad.hmm1", bad);
  CHECK_THROWS_AS(load_model(dir / "bad.hmm1"), FormatError);

  const std::string hdr =
      R"({"tensors":[{"name":"w","shape":[2,2],"dtype":"f32","offset":0}],"metadata":{}})";
  try {
    decode_container(raw_container(hdr, 12));
    FAIL("expected ValidationError");
  } catch (const IoError&) {
    FAIL("classified as IO error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("'w'") != std::string::npos);
  }
  CHECK_THROWS_AS(decode_container(raw_container(hdr, 14)), IoError);

  auto truncated = bytes;
  truncated.resize(20);
  CHECK_THROWS_AS(decode_container(truncated), IoError);

  CHECK_THROWS_AS(load_model(dir / "missing.hmm1"), IoError);
}

TEST_CASE("model validation") {
  ModelBundle empty;
  empty.heads.push_back(Head{0, 0, Matrix(1, 1), {0.0}});
  CHECK_THROWS_AS(empty.validate(), ValidationError);
  oracle::TempDir dir("invalid");
  CHECK_THROWS_AS(save_model(empty, dir / "x.hmm1"), ValidationError);

  ModelBundle no_head = fixture::random_mlp(2, {2}, 1);
  no_head.heads.clear();
  CHECK_THROWS_AS(no_head.validate(), ValidationError);

  ModelBundle chain = fixture::random_mlp(2, {3, 4}, 1);
  chain.layers[1] = make_layer({LayerKind::kDense, 5, 4, Activation::kRelu});
  CHECK_THROWS_AS(chain.validate(), ValidationError);

  ModelBundle res = fixture::random_mlp(2, {3}, 1);
  res.layers[0].spec.kind = LayerKind::kResidualDense;
  CHECK_THROWS_AS(res.validate(), ValidationError);

  ModelBundle overlap = fixture::random_mlp(2, {3}, 1, false, {{0, 0, 3}, {1, 3, 2}});
  overlap.heads[1].label_begin = 2;
  CHECK_THROWS_AS(overlap.validate(), ValidationError);
}

TEST_CASE("forward basics") {
  ModelBundle id;
  Layer l = make_layer({LayerKind::kDense, 3, 3, Activation::kLinear});
  l.weight = Matrix::identity(3);
  id.layers.push_back(l);
  id.heads.push_back(Head{0, 0, Matrix::identity(3), {0, 0, 0}});
  const Matrix x = batch(8, 3, 1);
  CHECK(forward_trace(id, x)[0] == x);
  CHECK(forward(id, x) == x);

  ModelBundle res = id;
  res.layers[0] = make_layer({LayerKind::kResidualDense, 3, 3, Activation::kLinear});
  CHECK(forward_trace(res, x)[0] == x);
  res.layers[0].spec.activation = Activation::kRelu;
  const Matrix y = forward_trace(res, x)[0];
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == std::max(0.0, x.data()[i]));

  CHECK_THROWS_AS(forward(id, x, 5), ValidationError);
  CHECK_THROWS_AS(forward(id, batch(2, 4, 1)), ShapeError);
}

TEST_CASE("forward matches the scalar-loop oracle") {
  const ModelBundle m = fixture::random_mlp(5, {7, 4}, 9, false, {{0, 0, 3}, {1, 3, 2}});
  const Matrix x = batch(16, 5, 2);
  CHECK(max_abs_diff(forward(m, x), oracle::scalar_forward(m, x)) < 1e-12);

  const ModelBundle r = fixture::random_mlp(5, {6, 6, 6}, 10, true);
  CHECK(max_abs_diff(forward(r, x), oracle::scalar_forward(r, x)) < 1e-12);

  // Hand-computed 2-layer case.
  ModelBundle h;
  Layer l0 = make_layer({LayerKind::kDense, 2, 2, Activation::kRelu});
  l0.weight = Matrix::from_rows({{1, -1}, {2, 0.5}});
  l0.bias = {0.5, -3};
  Layer l1 = make_layer({LayerKind::kDense, 2, 1, Activation::kLinear});
  l1.weight = Matrix::from_rows({{2, 1}});
  l1.bias = {1};
  h.layers = {l0, l1};
  h.heads.push_back(Head{0, 0, Matrix::from_rows({{1}}), {0}});
  // x = (1, 2): layer0 = relu(1-2+0.5, 2+1-3) = (0, 0); layer1 = 1.
  // x = (3, 1): layer0 = relu(2.5, 3.5) = (2.5, 3.5); layer1 = 5+3.5+1 = 9.5.
  const Matrix out = forward(h, Matrix::from_rows({{1, 2}, {3, 1}}));
  CHECK(out(0, 0) == 1.0);
  CHECK(out(1, 0) == 9.5);
}

TEST_CASE("extension preserves the function") {
  const ModelBundle m = fixture::random_mlp(4, {5, 5, 3}, 4);
  const Matrix x = batch(256, 4, 3);
  const Matrix ref = forward(m, x);

  ExtensionPlan none{{0, 0, 0}, ExtensionMode::kIdentityDense};
  CHECK(extend_model(m, none) == m);

  ExtensionPlan two{{2, 0, 0}, ExtensionMode::kIdentityDense};
  const ModelBundle e = extend_model(m, two);
  REQUIRE(e.depth() == 5);
  CHECK(e.layers[1].weight == Matrix::identity(5));
  CHECK(e.layers[1].spec.activation == Activation::kLinear);
  CHECK(e.layers[2].bias == std::vector<double>(5, 0.0));
  CHECK(max_abs_diff(forward(e, x), ref) < 1e-6);

  const ModelBundle r = fixture::random_mlp(4, {6, 6, 6}, 5, true);
  ExtensionPlan zr{{1, 2, 1}, ExtensionMode::kZeroResidual};
  const ModelBundle re = extend_model(r, zr);
  CHECK(re.depth() == 7);
  CHECK(re.layers[1].spec.kind == LayerKind::kResidualDense);
  CHECK(forward(re, x) == forward(r, x));

  // Plans derived from a segment plan.
  SegmentPlan seg;
  seg.g = {1, 4, 6};
  const ExtensionPlan from = ExtensionPlan::from_segments(seg, ExtensionMode::kIdentityDense);
  CHECK(from.insert_after == std::vector<std::size_t>{0, 2, 1});
  CHECK(from.extended_depth() == 6);
  CHECK(from.source_layers() == std::vector<std::size_t>{0, 1, 1, 1, 2, 2});
}

TEST_CASE("extension invariant on random models and plans") {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 20; ++t) {
    const std::size_t depth = 1 + rng() % 4;
    const bool residual = t % 2 == 1;
    std::vector<std::size_t> widths(depth, 3 + rng() % 5);
    const ModelBundle m = fixture::random_mlp(4, widths, rng(), residual);
    std::vector<std::size_t> ins(depth);
    for (auto& v : ins) v = rng() % 3;
    const Matrix x = batch(256, 4, rng());
    const ModelBundle id = extend_model(m, {ins, ExtensionMode::kIdentityDense});
    CHECK(max_abs_diff(forward(id, x), forward(m, x)) < 1e-6);
    const ModelBundle zr = extend_model(m, {ins, ExtensionMode::kZeroResidual});
    CHECK(forward(zr, x) == forward(m, x));
  }
}

TEST_CASE("extension plan must cover every layer") {
  const ModelBundle m = fixture::random_mlp(4, {5, 3}, 4);
  CHECK_THROWS_AS(extend_model(m, {{1, 0, 0}, ExtensionMode::kIdentityDense}), ValidationError);
  CHECK_THROWS_AS(extend_model(m, {{0, 0, 0}, ExtensionMode::kIdentityDense}), ValidationError);
}

TEST_CASE("fingerprint tracks weights") {
  ModelBundle m = fixture::random_mlp(3, {4}, 4);
  const auto fp = fingerprint(m);
  CHECK(fingerprint(m) == fp);
  m.layers[0].weight(0, 0) += 1.0;
  CHECK(fingerprint(m) != fp);
}
