// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "dynaip/error.hpp"
#include "dynaip/fileio.hpp"

namespace dynaip {

namespace {

void require_image(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3) throw DimensionError("expected an H x W x C image, got " + shape_string(image.shape()));
  if (patch == 0 || image.dim(0) % patch != 0 || image.dim(1) % patch != 0) {
    throw ConfigError("image " + shape_string(image.shape()) + " not divisible into " +
                      std::to_string(patch) + "-pixel patches");
  }
}

std::uint8_t to_byte(double v) {
  const double scaled = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(scaled);
}

// Reads the next whitespace/comment separated header token of a PNM file.
std::string next_token(std::string_view text, std::size_t& pos) {
  while (pos < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[pos]))) {
      ++pos;
    } else if (text[pos] == '#') {
      while (pos < text.size() && text[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) && text[pos] != '#') ++pos;
  return std::string(text.substr(start, pos - start));
}

std::size_t parse_extent(const std::string& tok, const char* what) {
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw FormatError(std::string("invalid ") + what + " '" + tok + "'");
  }
  const std::size_t v = std::stoul(tok);
  if (v == 0) throw FormatError(std::string(what) + " must be positive");
  return v;
}

}  // namespace

Tensor patchify(const Tensor& image, std::size_t patch) {
  require_image(image, patch);
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const std::size_t gh = h / patch, gw = w / patch, tok = patch * patch * c;
  std::vector<double> out(gh * gw * tok);
  for (std::size_t by = 0; by < gh; ++by)
    for (std::size_t bx = 0; bx < gw; ++bx)
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t y = by * patch + dy, x = bx * patch + dx;
            out[(by * gw + bx) * tok + (dy * patch + dx) * c + ch] = image[(y * w + x) * c + ch];
          }
  return Tensor({gh * gw, tok}, std::move(out), image.dtype());
}

Tensor unpatchify(const Tensor& tokens, std::size_t height, std::size_t width, std::size_t channels,
                  std::size_t patch) {
  const std::size_t gh = height / patch, gw = width / patch, tok = patch * patch * channels;
  if (tokens.rank() != 2 || tokens.rows() != gh * gw || tokens.cols() != tok) {
    throw DimensionError("unpatchify: tokens " + shape_string(tokens.shape()) + " do not tile a " +
                         std::to_string(height) + "x" + std::to_string(width) + "x" +
                         std::to_string(channels) + " image");
  }
  std::vector<double> out(height * width * channels);
  for (std::size_t by = 0; by < gh; ++by)
    for (std::size_t bx = 0; bx < gw; ++bx)
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx)
          for (std::size_t ch = 0; ch < channels; ++ch) {
            const std::size_t y = by * patch + dy, x = bx * patch + dx;
            out[(y * width + x) * channels + ch] = tokens[(by * gw + bx) * tok + (dy * patch + dx) * channels + ch];
          }
  return Tensor({height, width, channels}, std::move(out), tokens.dtype());
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw DimensionError("write_ppm expects H x W x 3, got " + shape_string(image.shape()));
  }
  std::ostringstream os;
  os << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  std::string body(image.numel(), '\0');
  for (std::size_t i = 0; i < image.numel(); ++i) body[i] = static_cast<char>(to_byte(image[i]));
  atomic_write_file(path, os.str() + body);
}

Tensor read_ppm(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::size_t pos = 0;
  if (next_token(text, pos) != "P6") throw FormatError(path.string() + ": not a binary PPM (P6)");
  const std::size_t w = parse_extent(next_token(text, pos), "width");
  const std::size_t h = parse_extent(next_token(text, pos), "height");
  if (next_token(text, pos) != "255") throw FormatError(path.string() + ": only maxval 255 is supported");
  ++pos;  // single whitespace byte before the raster
  const std::size_t need = w * h * 3;
  if (text.size() < pos + need) {
    throw FormatError(path.string() + ": raster expected " + std::to_string(need) + " bytes, got " +
                      std::to_string(text.size() - std::min(pos, text.size())));
  }
  std::vector<double> data(need);
  for (std::size_t i = 0; i < need; ++i)
    data[i] = static_cast<double>(static_cast<unsigned char>(text[pos + i])) / 127.5 - 1.0;
  return Tensor({h, w, 3}, std::move(data));
}

void write_pgm(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() != 2) throw DimensionError("write_pgm expects a 2-D map, got " + shape_string(map.shape()));
  double lo = map[0], hi = map[0];
  for (double v : map.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  std::ostringstream os;
  os << "P5\n" << map.cols() << ' ' << map.rows() << "\n255\n";
  std::string body(map.numel(), '\0');
  for (std::size_t i = 0; i < map.numel(); ++i)
    body[i] = static_cast<char>(static_cast<std::uint8_t>(std::round((map[i] - lo) / span * 255.0)));
  atomic_write_file(path, os.str() + body);
}

std::size_t Mask::ones() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), 1.0));
}

Mask parse_mask_text(const std::string& text, std::size_t expected_tokens) {
  std::size_t pos = 0;
  if (next_token(text, pos) != "P1") throw FormatError("mask is not a plain PBM (P1)");
  Mask mask;
  mask.width = parse_extent(next_token(text, pos), "mask width");
  mask.height = parse_extent(next_token(text, pos), "mask height");
  if (mask.width * mask.height != expected_tokens) {
    throw DimensionError("mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                         " = " + std::to_string(mask.width * mask.height) + " tokens, expected " +
                         std::to_string(expected_tokens));
  }
  mask.values.reserve(expected_tokens);
  // P1 raster digits may be packed without separators.
  while (pos < text.size() && mask.values.size() < expected_tokens) {
    const char c = text[pos];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else if (c == '#') {
      while (pos < text.size() && text[pos] != '\n') ++pos;
    } else if (c == '0' || c == '1') {
      mask.values.push_back(c == '1' ? 1.0 : 0.0);
      ++pos;
    } else {
      throw FormatError(std::string("mask entry '") + c + "' is not 0 or 1");
    }
  }
  if (mask.values.size() != expected_tokens) {
    throw FormatError("mask raster has " + std::to_string(mask.values.size()) + " entries, expected " +
                      std::to_string(expected_tokens));
  }
  for (; pos < text.size(); ++pos) {
    if (!std::isspace(static_cast<unsigned char>(text[pos]))) throw FormatError("trailing data after mask raster");
  }
  return mask;
}

Mask parse_mask(const std::filesystem::path& path, std::size_t expected_tokens) {
  return parse_mask_text(read_file(path), expected_tokens);
}

std::string format_mask(const Mask& mask) {
  std::ostringstream os;
  os << "P1\n" << mask.width << ' ' << mask.height << '\n';
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (x) os << ' ';
      os << (mask.values[y * mask.width + x] != 0.0 ? '1' : '0');
    }
    os << '\n';
  }
  return os.str();
}

void write_mask(const std::filesystem::path& path, const Mask& mask) { atomic_write_file(path, format_mask(mask)); }

}  // namespace dynaip
