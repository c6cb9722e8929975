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
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nmnd/common.hpp"
#include "nmnd/glyphs.hpp"
#include "nmnd/ir.hpp"
#include "nmnd/tensor.hpp"

namespace nmnd {

// ---------------------------------------------------------------------------
// Attribute vocabulary
// ---------------------------------------------------------------------------

enum class FgColor : int { kRed = 0, kGreen, kBlue, kViolet, kBrown };
enum class BgColor : int { kWhite = 0, kCyan, kSalmon, kYellow, kSilver };

inline constexpr int kFgColorCount = 5;
inline constexpr int kBgColorCount = 5;

const char* fg_color_name(FgColor c);
const char* bg_color_name(BgColor c);
FgColor fg_color_from_name(const std::string& name);  // throws LookupError
BgColor bg_color_from_name(const std::string& name);  // throws LookupError

/// Linear-scale RGB triples in [0, 1] used to composite tiles.
const std::array<float, 3>& fg_color_rgb(FgColor c);
const std::array<float, 3>& bg_color_rgb(BgColor c);

/// "zero" .. "nine" and their plural forms "zeros" .. "nines".
const char* digit_word(int digit);
const char* digit_plural(int digit);

/// Full question-side vocabulary (index 0 is the reserved "<unk>" token,
/// the remainder sorted). Identical for every dataset.
const std::vector<std::string>& question_vocab();

/// Full answer vocabulary: counts "0".."16", digit words, yes/no, true/false,
/// foreground colors, strokes, background colors. Fixed order.
const std::vector<std::string>& answer_vocab();

/// Index of a word in question_vocab(), or 0 ("<unk>") when absent.
int question_word_id(const std::string& word);

/// Index of a word in answer_vocab(); throws LookupError when absent.
int answer_word_id(const std::string& word);

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct GridCell {
  int digit = 0;
  FgColor color = FgColor::kRed;
  Stroke stroke = Stroke::kNormal;
  BgColor bgcolor = BgColor::kWhite;
  int row = 0;
  int col = 0;
};

struct GridImage {
  int grid_size = 4;
  std::vector<GridCell> cells;        // grid_size^2 entries, row-major
  std::vector<std::uint8_t> pixels;   // [3, H, W] row-major, 0..255

  int height() const { return kGlyphSize * grid_size; }
  int width() const { return kGlyphSize * grid_size; }

  /// Pixels as float tensor [3, H, W] in [0, 1] (value / 255).
  TensorData<float> pixels_float() const;
};

struct CaptionRecord {
  std::vector<std::string> tokens;
  std::vector<Module> program;
  std::vector<std::vector<int>> spans;            // aligned with program
  std::vector<std::pair<int, int>> entities;      // salient cells (row, col)
};

struct RoundRecord {
  std::vector<std::string> question;
  int question_type = 0;         // 1..5
  std::string template_id;       // e.g. "1a", "3b"
  std::vector<Module> program;
  std::vector<std::vector<int>> spans;            // aligned with program
  std::string answer;
  std::vector<std::string> candidates;            // kCandidateCount entries
  int gt_index = -1;
  int coref_source = -1;         // 0-based round index of the introducer
  bool coref_caption = false;    // antecedent lives in the caption
  std::vector<std::pair<int, int>> targets;       // cells the answer is about
};

struct DialogRecord {
  int image_id = -1;
  CaptionRecord caption;
  std::vector<RoundRecord> rounds;
};

inline constexpr int kCandidateCount = 20;

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct GenConfig {
  int num_images = 3000;
  int dialogs_per_image = 3;
  int rounds = 10;
  int grid = 4;
  std::uint64_t seed = 1;
  /// Minimum number of earlier distractor referents required before every
  /// pronoun round (0 disables the constraint and uses the mixed planner).
  int coref_distractors = 0;
  bool paraphrase = false;
  const GlyphSource* glyphs = nullptr;  // null -> built-in procedural font
};

struct Manifest {
  int version = 1;
  std::uint64_t seed = 0;
  int num_images = 0;
  int dialogs_per_image = 0;
  int rounds_per_dialog = 0;
  int grid_size = 0;
  int height = 0;
  int width = 0;
  int channels = 3;
  int coref_distractors = 0;
  bool paraphrase = false;
  std::vector<std::string> question_vocab;
  std::vector<std::string> answer_vocab;
  std::vector<std::array<std::string, 2>> templates;  // {id, pattern}
  std::string split_rule;
  int train_images = 0;
  int val_images = 0;
  long long dialog_count = 0;
  long long round_count = 0;
  long long coref_round_count = 0;
  std::map<int, long long> type_counts;
  std::map<int, std::map<std::string, long long>> answer_histograms;
};

struct Dataset {
  Manifest manifest;
  std::vector<GridImage> images;      // index == image_id
  std::vector<DialogRecord> dialogs;  // image-major order
};

/// True when the image belongs to the held-out validation split.
inline bool is_val_image(int image_id) { return image_id % 10 == 9; }

/// Renders the image for `image_id` deterministically from the config seed.
/// Cell attributes are resampled (at most 100 times, then GenerationError)
/// until at least one cell has a unique (digit, color, stroke, bg) tuple.
GridImage render_image(const GenConfig& cfg, int image_id);

/// Generates the full dataset: every image plus `dialogs_per_image` dialogs
/// of `rounds` rounds each, with exact program / answer / coreference
/// supervision. Deterministic given the config.
Dataset generate_dataset(const GenConfig& cfg);

/// The registry of question templates as {id, pattern} pairs.
const std::vector<std::array<std::string, 2>>& template_registry();

}  // namespace nmnd
