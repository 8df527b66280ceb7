// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>

#include <gtest/gtest.h>

#include "dynaip/encoder.hpp"
#include "dynaip/error.hpp"
#include "dynaip/fileio.hpp"
#include "dynaip/rng.hpp"
#include "test_support.hpp"

namespace dynaip {
namespace {

Tensor test_image(std::uint64_t seed, std::size_t side = 24) {
  Rng rng(seed);
  return rng.uniform_tensor({side, side, 3}, -1.0, 1.0);
}

TEST(Encoder, ShapesAndDeterminism) {
  const HierEncoder enc{EncoderConfig{}};
  const HierFeatures a = enc.encode(test_image(1));
  const HierFeatures b = HierEncoder{EncoderConfig{}}.encode(test_image(1));
  EXPECT_TRUE(a.bit_equal(b));
  for (Level l : kLevels) {
    EXPECT_EQ(a.full_at(l).shape(), (Shape{36, 32}));
    EXPECT_EQ(a.cls_at(l).shape(), (Shape{1, 32}));
  }
  EXPECT_FALSE(a.full_at(Level::Low).bit_equal(a.full_at(Level::High)));
}

TEST(Encoder, TapsReadTheResidualStreamAtTheirDepth) {
  // A shallower encoder built from the same seed shares its first blocks, so
  // its deepest tap must equal the deeper encoder's tap at the same depth.
  EncoderConfig deep;
  deep.depth = 6;
  deep.taps = {2, 4, 6};
  EncoderConfig shallow = deep;
  shallow.depth = 4;
  shallow.taps = {1, 3, 4};
  const Tensor img = test_image(2);
  const HierFeatures d = HierEncoder{deep}.encode(img);
  const HierFeatures s = HierEncoder{shallow}.encode(img);
  EXPECT_TRUE(s.full_at(Level::High).bit_equal(d.full_at(Level::Mid)));
  EXPECT_TRUE(s.cls_at(Level::High).bit_equal(d.cls_at(Level::Mid)));
}

TEST(Encoder, DifferentSeedsDiffer) {
  EncoderConfig other;
  other.seed = 99;
  const Tensor img = test_image(3);
  EXPECT_FALSE(HierEncoder{EncoderConfig{}}.encode(img).bit_equal(HierEncoder{other}.encode(img)));
}

TEST(Encoder, RejectsWrongImageSize) {
  const HierEncoder enc{EncoderConfig{}};
  EXPECT_THROW(enc.encode(test_image(1, 16)), ConfigError);
}

TEST(Encoder, ConfigValidation) {
  EncoderConfig c;
  c.taps = {4, 2, 6};
  EXPECT_THROW(c.validate(), ConfigError);
  c = EncoderConfig{};
  c.taps = {2, 4, 7};
  EXPECT_THROW(c.validate(), ConfigError);
  c = EncoderConfig{};
  c.patch = 5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Encoder, PositionTableRowsAreDistinct) {
  const Tensor t = sincos_2d_table(6, 6, 32);
  EXPECT_EQ(t.shape(), (Shape{36, 32}));
  for (std::size_t a = 0; a < 36; ++a)
    for (std::size_t b = a + 1; b < 36; ++b) EXPECT_FALSE(t.row_slice(a, 1).bit_equal(t.row_slice(b, 1)));
  EXPECT_LE(t.max_abs(), 1.0);
}

TEST(Features, SaveLoadRoundTrip) {
  testing::TempDir dir("features");
  const HierFeatures f = HierEncoder{EncoderConfig{}}.encode(test_image(4));
  save_features(dir.path() / "ref.json", f);
  EXPECT_TRUE(load_features(dir.path() / "ref.json").bit_equal(f));
}

TEST(Features, TruncatedBlobIsReported) {
  testing::TempDir dir("features-trunc");
  const HierFeatures f = HierEncoder{EncoderConfig{}}.encode(test_image(5));
  save_features(dir.path() / "ref.json", f);
  const auto blob = dir.path() / "ref.mid.full.f32";
  const std::string bytes = read_file(blob);
  atomic_write_file(blob, bytes.substr(0, bytes.size() - 4));
  try {
    load_features(dir.path() / "ref.json");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("mid.full"), std::string::npos);
  }
}

TEST(Features, LevelMismatchIsReported) {
  HierFeatures f = HierEncoder{EncoderConfig{}}.encode(test_image(6));
  f.full[1] = f.full[1].row_slice(0, 10);
  EXPECT_THROW(f.validate(), FormatError);
}

TEST(Features, MalformedManifest) {
  testing::TempDir dir("features-bad");
  atomic_write_file(dir.path() / "ref.json", "{not json");
  EXPECT_THROW(load_features(dir.path() / "ref.json"), FormatError);
}

}  // namespace
}  // namespace dynaip
