// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/scenes.hpp"

#include <algorithm>
#include <cmath>

#include "dynaip/error.hpp"

namespace dynaip {

namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, kPaletteSize> kPalette{{
    {0.9, -0.7, -0.7},   // red
    {-0.7, 0.7, -0.8},   // green
    {-0.8, -0.5, 0.9},   // blue
    {0.9, 0.8, -0.8},    // yellow
    {0.7, -0.8, 0.8},    // magenta
    {-0.9, 0.6, 0.7},    // cyan
}};

constexpr std::array<std::array<double, 2>, kPlacements> kAnchors{{
    {0.5, 0.5}, {0.3, 0.5}, {0.7, 0.5}, {0.5, 0.3}, {0.5, 0.7},
}};
constexpr std::array<double, kSizes> kRadii{0.17, 0.26};

constexpr std::array<const char*, kVocabSize> kTagNames{
    "sky", "grass", "sand", "night", "brick", "centre", "left", "right", "top", "bottom", "small", "large"};

bool inside(const SubjectDescriptor& s, double x, double y) {
  const double dx = (x - s.cx) / s.radius, dy = (y - s.cy) / s.radius;
  switch (s.shape) {
    case ShapeKind::Circle: return dx * dx + dy * dy <= 1.0;
    case ShapeKind::Square: return std::abs(dx) <= 0.8 && std::abs(dy) <= 0.8;
    case ShapeKind::Diamond: return std::abs(dx) + std::abs(dy) <= 1.0;
    case ShapeKind::Triangle: return dy <= 0.8 && dy >= -1.0 && std::abs(dx) <= (dy + 1.0) * 0.55;
  }
  return false;
}

Rgb texture_color(const SubjectDescriptor& s, std::size_t px, std::size_t py) {
  Rgb base = kPalette[s.color];
  bool dark = false;
  switch (s.texture) {
    case 1: dark = (py / 2) % 2 == 1; break;             // stripes
    case 2: dark = ((px / 2) + (py / 2)) % 2 == 1; break; // checker
    case 3: dark = px % 3 == 1 && py % 3 == 1; break;    // dots
    default: break;
  }
  if (dark) {
    for (double& c : base) c = 0.35 * c - 0.5;
  }
  return base;
}

SubjectDescriptor random_pose(Rng& rng, SubjectDescriptor s, std::size_t placement, std::size_t size_class) {
  s.cx = kAnchors[placement][0] + rng.uniform(-0.04, 0.04);
  s.cy = kAnchors[placement][1] + rng.uniform(-0.04, 0.04);
  s.radius = kRadii[size_class] * rng.uniform(0.92, 1.08);
  return s;
}

}  // namespace

const char* pairing_name(PairingKind kind) { return kind == PairingKind::Intra ? "intra" : "cross"; }

std::string tag_name(std::size_t id) {
  if (id >= kVocabSize) throw ValidationError("tag id out of range");
  return kTagNames[id];
}

std::vector<double> subject_coverage(const SubjectDescriptor& s, std::size_t side) {
  std::vector<double> mask(side * side, 0.0);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(side);
      const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(side);
      if (inside(s, fx, fy)) mask[y * side + x] = 1.0;
    }
  return mask;
}

void paint_subject(Tensor& image, const SubjectDescriptor& s) {
  const std::size_t side = image.dim(0);
  const auto mask = subject_coverage(s, side);
  auto data = image.mutable_data();
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      if (mask[y * side + x] == 0.0) continue;
      const Rgb c = texture_color(s, x, y);
      for (std::size_t ch = 0; ch < 3; ++ch) data[(y * side + x) * 3 + ch] = c[ch];
    }
  image.round();
}

Tensor render_background(std::size_t background, std::size_t side, Rng& rng) {
  Tensor img({side, side, 3});
  auto data = img.mutable_data();
  const double jitter = rng.uniform(-0.08, 0.08);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double fy = static_cast<double>(y) / static_cast<double>(side - 1);
      Rgb c{};
      switch (background) {
        case 0: c = {-0.4 + 0.3 * fy, 0.1 + 0.3 * fy, 0.8}; break;                      // sky
        case 1: c = {-0.6, 0.2 + 0.3 * fy, -0.6 + ((x + y) % 4 == 0 ? 0.2 : 0.0)}; break; // grass
        case 2: c = {0.6, 0.4 - 0.2 * fy, -0.1}; break;                                 // sand
        case 3: c = {-0.9, -0.9, -0.6 + ((x * 7 + y * 13) % 29 == 0 ? 1.2 : 0.0)}; break; // night
        default: c = {0.2 + ((y % 4 == 0 || (x + (y / 4) * 3) % 6 == 0) ? -0.5 : 0.0), -0.4, -0.5}; break;  // brick
      }
      for (std::size_t ch = 0; ch < 3; ++ch) data[(y * side + x) * 3 + ch] = std::clamp(c[ch] + jitter, -1.0, 1.0);
    }
  img.round();
  return img;
}

ToyScene synth_scene(Rng& rng, PairingKind pairing, std::size_t side) {
  ToyScene scene;
  scene.pairing = pairing;
  scene.background = rng.below(kBackgrounds);
  scene.placement = rng.below(kPlacements);
  scene.size_class = rng.below(kSizes);
  SubjectDescriptor s;
  s.shape = static_cast<ShapeKind>(rng.below(kShapeKinds));
  s.color = rng.below(kPaletteSize);
  s.texture = rng.below(kTextures);
  s = random_pose(rng, s, scene.placement, scene.size_class);
  scene.subject = s;

  scene.target = render_background(scene.background, side, rng);
  paint_subject(scene.target, s);
  scene.subject_mask = subject_coverage(s, side);
  scene.text = {scene.background, kBackgrounds + scene.placement, kBackgrounds + kPlacements + scene.size_class};

  if (pairing == PairingKind::Intra) {
    // Reference is the target with every background pixel set to white.
    scene.reference = scene.target;
    auto data = scene.reference.mutable_data();
    for (std::size_t i = 0; i < side * side; ++i) {
      if (scene.subject_mask[i] == 0.0) {
        for (std::size_t ch = 0; ch < 3; ++ch) data[i * 3 + ch] = 1.0;
      }
    }
    scene.reference_subject = s;
  } else {
    // Same subject identity, new pose, white background.
    std::size_t placement = rng.below(kPlacements - 1);
    if (placement >= scene.placement) ++placement;
    scene.reference_subject = random_pose(rng, s, placement, rng.below(kSizes));
    scene.reference = Tensor::full({side, side, 3}, 1.0);
    paint_subject(scene.reference, scene.reference_subject);
  }
  return scene;
}

std::vector<ToyScene> synth_batch(Rng& rng, PairingKind pairing, std::size_t batch, std::size_t side) {
  std::vector<ToyScene> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) out.push_back(synth_scene(rng, pairing, side));
  return out;
}

std::vector<double> token_mask(const std::vector<double>& pixel_mask, std::size_t side, std::size_t patch) {
  const std::size_t grid = side / patch;
  std::vector<double> out(grid * grid, 0.0);
  for (std::size_t by = 0; by < grid; ++by)
    for (std::size_t bx = 0; bx < grid; ++bx) {
      double covered = 0.0;
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx)
          covered += pixel_mask[(by * patch + dy) * side + bx * patch + dx];
      out[by * grid + bx] = covered * 2.0 > static_cast<double>(patch * patch) ? 1.0 : 0.0;
    }
  return out;
}

}  // namespace dynaip
