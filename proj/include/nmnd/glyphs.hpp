/* Copyright 2026 The nmn-dialog Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nmnd/common.hpp"
#include "nmnd/rng.hpp"

namespace nmnd {

/// Side length of one digit tile in pixels.
inline constexpr int kGlyphSize = 28;

/// Grayscale coverage mask for one digit tile, row-major, values in [0, 1].
using GlyphMask = std::array<float, kGlyphSize * kGlyphSize>;

enum class Stroke : int { kNormal = 0, kBold = 1 };

inline constexpr int kStrokeCount = 2;

const char* stroke_name(Stroke s);
Stroke stroke_from_name(const std::string& name);  // throws LookupError

/// Renders one digit with the built-in stroke font. Deterministic.
GlyphMask render_glyph(int digit, Stroke stroke);

/// A provider of digit tiles. Implementations may consume randomness to pick
/// among several exemplars of the same digit.
class GlyphSource {
 public:
  virtual ~GlyphSource() = default;
  virtual GlyphMask glyph(int digit, Stroke stroke, RngStream& rng) const = 0;
};

/// Deterministic vector-stroke font; ignores the random stream.
class ProceduralGlyphSource : public GlyphSource {
 public:
  GlyphMask glyph(int digit, Stroke stroke, RngStream& rng) const override;
};

/// Raw contents of an IDX image file (magic 0x00000803).
struct IdxImages {
  int count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols bytes
};

/// Parses an IDX image file. Throws FormatError (with byte offset) on a bad
/// magic number or truncated payload, UsageError if the file cannot be opened.
IdxImages load_idx_images(const std::string& path);

/// Parses an IDX label file (magic 0x00000801). Same error contract.
std::vector<std::uint8_t> load_idx_labels(const std::string& path);

/// Handwritten glyphs ingested from an IDX image/label pair. Each request
/// picks a uniform exemplar of the digit; bold applies a 3x3 dilation.
class IdxGlyphSource : public GlyphSource {
 public:
  /// Throws FormatError if images and labels disagree in count, are not
  /// 28x28, or some digit 0-9 has no exemplar.
  IdxGlyphSource(IdxImages images, std::vector<std::uint8_t> labels);

  GlyphMask glyph(int digit, Stroke stroke, RngStream& rng) const override;

 private:
  IdxImages images_;
  std::array<std::vector<int>, 10> by_digit_;
};

}  // namespace nmnd
