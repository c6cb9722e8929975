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
#include "nmnd/glyphs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <utility>

namespace nmnd {

const char* stroke_name(Stroke s) {
  return s == Stroke::kNormal ? "normal" : "bold";
}

Stroke stroke_from_name(const std::string& name) {
  if (name == "normal") return Stroke::kNormal;
  if (name == "bold") return Stroke::kBold;
  throw LookupError("unknown stroke name '" + name + "'");
}

namespace {

struct Pt {
  float x, y;
};
using Polyline = std::vector<Pt>;

void add_seg(std::vector<Polyline>& out, float x0, float y0, float x1,
             float y1) {
  out.push_back({{x0, y0}, {x1, y1}});
}

// Elliptic arc sampled into a polyline. Angles in degrees; in this y-down
// coordinate system increasing angles sweep right -> down -> left -> up.
void add_arc(std::vector<Polyline>& out, float cx, float cy, float rx, float ry,
             float a0, float a1) {
  Polyline p;
  const int steps = std::max(10, static_cast<int>(std::abs(a1 - a0) / 5.0f));
  for (int i = 0; i <= steps; ++i) {
    float t = (a0 + (a1 - a0) * static_cast<float>(i) /
                        static_cast<float>(steps)) *
              3.14159265358979323846f / 180.0f;
    p.push_back({cx + rx * std::cos(t), cy + ry * std::sin(t)});
  }
  out.push_back(std::move(p));
}

// Stroke skeletons for the ten digits, in 28x28 tile coordinates.
std::vector<Polyline> digit_skeleton(int d) {
  std::vector<Polyline> s;
  switch (d) {
    case 0:
      add_arc(s, 14, 14, 5.8f, 8.8f, 0, 360);
      break;
    case 1:
      add_seg(s, 14, 4.5f, 14, 23.5f);
      add_seg(s, 9.5f, 9, 14, 4.5f);
      add_seg(s, 9.5f, 23.5f, 18.5f, 23.5f);
      break;
    case 2:
      add_arc(s, 14, 9.6f, 5.6f, 5.4f, 180, 375);
      add_seg(s, 19.4f, 11.0f, 8.5f, 23.5f);
      add_seg(s, 8.5f, 23.5f, 19.8f, 23.5f);
      break;
    case 3:
      add_arc(s, 14, 9.4f, 5.2f, 4.9f, 205, 450);
      add_arc(s, 14, 18.9f, 5.6f, 4.7f, 270, 515);
      break;
    case 4:
      add_seg(s, 16.8f, 4.5f, 8.2f, 16.8f);
      add_seg(s, 8.2f, 16.8f, 21.2f, 16.8f);
      add_seg(s, 16.8f, 4.5f, 16.8f, 23.5f);
      break;
    case 5:
      add_seg(s, 19.6f, 4.5f, 9.2f, 4.5f);
      add_seg(s, 9.2f, 4.5f, 9.2f, 13.4f);
      add_arc(s, 14, 17, 6.2f, 6.1f, 215, 500);
      break;
    case 6:
      add_arc(s, 13.5f, 14, 6.0f, 9.5f, 300, 90);
      add_arc(s, 14, 18.6f, 4.9f, 4.9f, 0, 360);
      break;
    case 7:
      add_seg(s, 8.4f, 4.5f, 19.6f, 4.5f);
      add_seg(s, 19.6f, 4.5f, 11.8f, 23.5f);
      break;
    case 8:
      add_arc(s, 14, 9.3f, 4.7f, 4.9f, 0, 360);
      add_arc(s, 14, 18.7f, 5.5f, 4.8f, 0, 360);
      break;
    case 9:
      add_arc(s, 14, 9.4f, 4.9f, 4.9f, 0, 360);
      add_arc(s, 13.5f, 14, 6.0f, 9.5f, -30, 90);
      break;
    default:
      throw DomainError("digit out of range: " + std::to_string(d));
  }
  return s;
}

float point_segment_dist(float px, float py, const Pt& a, const Pt& b) {
  float vx = b.x - a.x, vy = b.y - a.y;
  float wx = px - a.x, wy = py - a.y;
  float vv = vx * vx + vy * vy;
  float t = vv > 0 ? std::clamp((wx * vx + wy * vy) / vv, 0.0f, 1.0f) : 0.0f;
  float dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

GlyphMask rasterize(const std::vector<Polyline>& skel, float radius) {
  const float aa = 1.0f;  // anti-aliasing band width in pixels
  GlyphMask m{};
  for (int y = 0; y < kGlyphSize; ++y)
    for (int x = 0; x < kGlyphSize; ++x) {
      float px = static_cast<float>(x) + 0.5f;
      float py = static_cast<float>(y) + 0.5f;
      float d = 1e9f;
      for (const auto& poly : skel)
        for (std::size_t i = 0; i + 1 < poly.size(); ++i)
          d = std::min(d, point_segment_dist(px, py, poly[i], poly[i + 1]));
      float alpha = std::clamp(0.5f + (radius - d) / aa, 0.0f, 1.0f);
      m[static_cast<std::size_t>(y * kGlyphSize + x)] = alpha;
    }
  return m;
}

}  // namespace

GlyphMask render_glyph(int digit, Stroke stroke) {
  if (digit < 0 || digit > 9)
    throw DomainError("digit out of range: " + std::to_string(digit));
  const float radius = stroke == Stroke::kBold ? 2.3f : 1.15f;
  return rasterize(digit_skeleton(digit), radius);
}

GlyphMask ProceduralGlyphSource::glyph(int digit, Stroke stroke,
                                       RngStream& rng) const {
  (void)rng;  // the stroke font is deterministic
  // Cache the twenty digit/stroke combinations; rasterization is pure.
  static const std::array<GlyphMask, 20> cache = [] {
    std::array<GlyphMask, 20> c{};
    for (int d = 0; d < 10; ++d) {
      c[static_cast<std::size_t>(d)] = render_glyph(d, Stroke::kNormal);
      c[static_cast<std::size_t>(10 + d)] = render_glyph(d, Stroke::kBold);
    }
    return c;
  }();
  if (digit < 0 || digit > 9)
    throw DomainError("digit out of range: " + std::to_string(digit));
  return cache[static_cast<std::size_t>(
      (stroke == Stroke::kBold ? 10 : 0) + digit)];
}

namespace {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw UsageError("cannot open file: " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>());
}

std::uint32_t read_u32_be(const std::vector<std::uint8_t>& b, std::size_t off,
                          const std::string& path) {
  if (off + 4 > b.size())
    throw FormatError("truncated IDX file " + path, static_cast<long long>(off));
  return (static_cast<std::uint32_t>(b[off]) << 24) |
         (static_cast<std::uint32_t>(b[off + 1]) << 16) |
         (static_cast<std::uint32_t>(b[off + 2]) << 8) |
         static_cast<std::uint32_t>(b[off + 3]);
}

}  // namespace

IdxImages load_idx_images(const std::string& path) {
  auto bytes = read_file_bytes(path);
  std::uint32_t magic = read_u32_be(bytes, 0, path);
  if (magic != 0x00000803u)
    throw FormatError("bad IDX image magic in " + path +
                          " (expected 0x00000803)",
                      0);
  IdxImages out;
  out.count = static_cast<int>(read_u32_be(bytes, 4, path));
  out.rows = static_cast<int>(read_u32_be(bytes, 8, path));
  out.cols = static_cast<int>(read_u32_be(bytes, 12, path));
  const std::size_t need =
      static_cast<std::size_t>(out.count) * static_cast<std::size_t>(out.rows) *
      static_cast<std::size_t>(out.cols);
  if (bytes.size() < 16 + need)
    throw FormatError("truncated IDX pixel payload in " + path, 16);
  out.pixels.assign(bytes.begin() + 16,
                    bytes.begin() + 16 + static_cast<long>(need));
  return out;
}

std::vector<std::uint8_t> load_idx_labels(const std::string& path) {
  auto bytes = read_file_bytes(path);
  std::uint32_t magic = read_u32_be(bytes, 0, path);
  if (magic != 0x00000801u)
    throw FormatError("bad IDX label magic in " + path +
                          " (expected 0x00000801)",
                      0);
  std::uint32_t count = read_u32_be(bytes, 4, path);
  if (bytes.size() < 8 + count)
    throw FormatError("truncated IDX label payload in " + path, 8);
  return std::vector<std::uint8_t>(bytes.begin() + 8,
                                   bytes.begin() + 8 + static_cast<long>(count));
}

IdxGlyphSource::IdxGlyphSource(IdxImages images,
                               std::vector<std::uint8_t> labels)
    : images_(std::move(images)) {
  if (static_cast<int>(labels.size()) != images_.count)
    throw FormatError("IDX image/label count mismatch: " +
                          std::to_string(images_.count) + " images vs " +
                          std::to_string(labels.size()) + " labels",
                      0);
  if (images_.rows != kGlyphSize || images_.cols != kGlyphSize)
    throw FormatError("IDX glyphs must be 28x28, got " +
                          std::to_string(images_.rows) + "x" +
                          std::to_string(images_.cols),
                      0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 9)
      throw FormatError("IDX label out of range at index " + std::to_string(i),
                        static_cast<long long>(8 + i));
    by_digit_[labels[i]].push_back(static_cast<int>(i));
  }
  for (int d = 0; d < 10; ++d)
    if (by_digit_[static_cast<std::size_t>(d)].empty())
      throw FormatError("IDX source has no exemplar for digit " +
                            std::to_string(d),
                        0);
}

GlyphMask IdxGlyphSource::glyph(int digit, Stroke stroke,
                                RngStream& rng) const {
  if (digit < 0 || digit > 9)
    throw DomainError("digit out of range: " + std::to_string(digit));
  const auto& pool = by_digit_[static_cast<std::size_t>(digit)];
  int pick = pool[static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(pool.size())))];
  const std::uint8_t* src =
      images_.pixels.data() +
      static_cast<std::size_t>(pick) * kGlyphSize * kGlyphSize;
  GlyphMask m{};
  for (int i = 0; i < kGlyphSize * kGlyphSize; ++i)
    m[static_cast<std::size_t>(i)] =
        static_cast<float>(src[i]) / 255.0f;
  if (stroke == Stroke::kBold) {
    GlyphMask fat{};
    for (int y = 0; y < kGlyphSize; ++y)
      for (int x = 0; x < kGlyphSize; ++x) {
        float v = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int ny = y + dy, nx = x + dx;
            if (ny >= 0 && ny < kGlyphSize && nx >= 0 && nx < kGlyphSize)
              v = std::max(v, m[static_cast<std::size_t>(ny * kGlyphSize + nx)]);
          }
        fat[static_cast<std::size_t>(y * kGlyphSize + x)] = v;
      }
    return fat;
  }
  return m;
}

}  // namespace nmnd
