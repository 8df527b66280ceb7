// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "dynaip/rng.hpp"
#include "dynaip/tensor.hpp"

namespace dynaip {

// Procedural toy scenes: one textured subject on a patterned background.
// Text tags describe the scene (background, placement, size); the subject's
// identity (shape, colour, texture) is only visible through the reference.

enum class ShapeKind : std::size_t { Circle, Square, Triangle, Diamond };
inline constexpr std::size_t kShapeKinds = 4;
inline constexpr std::size_t kPaletteSize = 6;
inline constexpr std::size_t kTextures = 4;     // solid, stripes, checker, dots
inline constexpr std::size_t kBackgrounds = 5;  // sky, grass, sand, night, brick
inline constexpr std::size_t kPlacements = 5;   // centre, left, right, top, bottom
inline constexpr std::size_t kSizes = 2;        // small, large
inline constexpr std::size_t kVocabSize = kBackgrounds + kPlacements + kSizes;
inline constexpr std::size_t kTagsPerScene = 3;

struct SubjectDescriptor {
  ShapeKind shape = ShapeKind::Circle;
  std::size_t color = 0;
  std::size_t texture = 0;
  double cx = 0.5;      // centre, fraction of the image side
  double cy = 0.5;
  double radius = 0.2;  // fraction of the image side

  /// Same subject identity (shape, colour, texture), any pose.
  bool same_identity(const SubjectDescriptor& other) const {
    return shape == other.shape && color == other.color && texture == other.texture;
  }
};

enum class PairingKind { Intra, Cross };
const char* pairing_name(PairingKind kind);

struct ToyScene {
  Tensor target;     // H x W x 3 in [-1, 1]
  Tensor reference;  // subject on white
  SubjectDescriptor subject;            // as rendered in the target
  SubjectDescriptor reference_subject;  // as rendered in the reference
  PairingKind pairing = PairingKind::Intra;
  std::size_t background = 0;
  std::size_t placement = 0;
  std::size_t size_class = 0;
  std::vector<std::size_t> text;  // kTagsPerScene tag ids
  std::vector<double> subject_mask;  // H*W, 1 on subject pixels
};

std::string tag_name(std::size_t id);

/// Renders the subject's coverage mask (H*W entries in {0,1}).
std::vector<double> subject_coverage(const SubjectDescriptor& s, std::size_t side);
/// Subject composited on a background image (modified in place).
void paint_subject(Tensor& image, const SubjectDescriptor& s);
Tensor render_background(std::size_t background, std::size_t side, Rng& rng);

ToyScene synth_scene(Rng& rng, PairingKind pairing, std::size_t side);
std::vector<ToyScene> synth_batch(Rng& rng, PairingKind pairing, std::size_t batch, std::size_t side);

/// Token-grid mask (grid x grid) marking patches whose majority of pixels are
/// subject pixels.
std::vector<double> token_mask(const std::vector<double>& pixel_mask, std::size_t side, std::size_t patch);

}  // namespace dynaip
