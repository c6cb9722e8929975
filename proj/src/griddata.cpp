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
#include "nmnd/griddata.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>

#include "nmnd/rng.hpp"

namespace nmnd {

// ---------------------------------------------------------------------------
// Attribute names, palettes, vocabularies
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kFgNames[kFgColorCount] = {"red", "green", "blue",
                                                 "violet", "brown"};
constexpr const char* kBgNames[kBgColorCount] = {"white", "cyan", "salmon",
                                                 "yellow", "silver"};
const std::array<std::array<float, 3>, kFgColorCount> kFgRgb = {{
    {0.85f, 0.10f, 0.10f},
    {0.10f, 0.65f, 0.15f},
    {0.15f, 0.25f, 0.85f},
    {0.55f, 0.15f, 0.75f},
    {0.55f, 0.35f, 0.12f},
}};
const std::array<std::array<float, 3>, kBgColorCount> kBgRgb = {{
    {1.00f, 1.00f, 1.00f},
    {0.65f, 0.93f, 0.95f},
    {0.99f, 0.70f, 0.62f},
    {0.98f, 0.94f, 0.55f},
    {0.75f, 0.77f, 0.78f},
}};
constexpr const char* kDigitWords[10] = {"zero", "one", "two",   "three",
                                         "four", "five", "six",  "seven",
                                         "eight", "nine"};
constexpr const char* kDigitPlurals[10] = {"zeros", "ones", "twos",   "threes",
                                           "fours", "fives", "sixes", "sevens",
                                           "eights", "nines"};

}  // namespace

const char* fg_color_name(FgColor c) { return kFgNames[static_cast<int>(c)]; }
const char* bg_color_name(BgColor c) { return kBgNames[static_cast<int>(c)]; }

FgColor fg_color_from_name(const std::string& name) {
  for (int i = 0; i < kFgColorCount; ++i)
    if (name == kFgNames[i]) return static_cast<FgColor>(i);
  throw LookupError("unknown foreground color '" + name + "'");
}

BgColor bg_color_from_name(const std::string& name) {
  for (int i = 0; i < kBgColorCount; ++i)
    if (name == kBgNames[i]) return static_cast<BgColor>(i);
  throw LookupError("unknown background color '" + name + "'");
}

const std::array<float, 3>& fg_color_rgb(FgColor c) {
  return kFgRgb[static_cast<std::size_t>(c)];
}
const std::array<float, 3>& bg_color_rgb(BgColor c) {
  return kBgRgb[static_cast<std::size_t>(c)];
}

const char* digit_word(int digit) {
  if (digit < 0 || digit > 9)
    throw DomainError("digit out of range: " + std::to_string(digit));
  return kDigitWords[digit];
}

const char* digit_plural(int digit) {
  if (digit < 0 || digit > 9)
    throw DomainError("digit out of range: " + std::to_string(digit));
  return kDigitPlurals[digit];
}

const std::vector<std::string>& question_vocab() {
  static const std::vector<std::string> vocab = [] {
    std::set<std::string> s;
    for (const char* w :
         {"?", ",", ":", "a", "above", "among", "an", "and", "any", "are",
          "at", "background", "below", "besides", "both", "color", "contain",
          "contains", "digit", "digits", "does", "false", "have", "how",
          "image", "is", "it", "left", "many", "me", "number", "of", "on",
          "or", "other", "present", "right", "same", "some", "stroke", "tell",
          "that", "the", "them", "there", "time", "to", "true", "what",
          "with"})
      s.insert(w);
    for (int i = 0; i < kFgColorCount; ++i) s.insert(kFgNames[i]);
    for (int i = 0; i < kBgColorCount; ++i) s.insert(kBgNames[i]);
    s.insert("normal");
    s.insert("bold");
    for (int d = 0; d < 10; ++d) {
      s.insert(kDigitWords[d]);
      s.insert(kDigitPlurals[d]);
    }
    std::vector<std::string> v;
    v.push_back("<unk>");
    v.insert(v.end(), s.begin(), s.end());
    return v;
  }();
  return vocab;
}

const std::vector<std::string>& answer_vocab() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v;
    for (int i = 0; i <= 16; ++i) v.push_back(std::to_string(i));
    for (int d = 0; d < 10; ++d) v.push_back(kDigitWords[d]);
    v.push_back("yes");
    v.push_back("no");
    v.push_back("true");
    v.push_back("false");
    for (int i = 0; i < kFgColorCount; ++i) v.push_back(kFgNames[i]);
    v.push_back("normal");
    v.push_back("bold");
    for (int i = 0; i < kBgColorCount; ++i) v.push_back(kBgNames[i]);
    return v;
  }();
  return vocab;
}

int question_word_id(const std::string& word) {
  static const std::map<std::string, int> index = [] {
    std::map<std::string, int> m;
    const auto& v = question_vocab();
    for (std::size_t i = 0; i < v.size(); ++i) m[v[i]] = static_cast<int>(i);
    return m;
  }();
  auto it = index.find(word);
  return it == index.end() ? 0 : it->second;
}

int answer_word_id(const std::string& word) {
  static const std::map<std::string, int> index = [] {
    std::map<std::string, int> m;
    const auto& v = answer_vocab();
    for (std::size_t i = 0; i < v.size(); ++i) m[v[i]] = static_cast<int>(i);
    return m;
  }();
  auto it = index.find(word);
  if (it == index.end())
    throw LookupError("word not in answer vocabulary: '" + word + "'");
  return it->second;
}

TensorData<float> GridImage::pixels_float() const {
  TensorData<float> t(Shape{3, height(), width()});
  for (std::size_t i = 0; i < pixels.size(); ++i)
    t.v[static_cast<Eigen::Index>(i)] = static_cast<float>(pixels[i]) / 255.0f;
  return t;
}

// ---------------------------------------------------------------------------
// Image rendering
// ---------------------------------------------------------------------------

GridImage render_image(const GenConfig& cfg, int image_id) {
  if (cfg.grid < 1 || cfg.grid > 4)
    throw DomainError("grid size must be in [1, 4], got " +
                      std::to_string(cfg.grid));
  const int g = cfg.grid;
  RngStream rng = Rng(cfg.seed).stream("image", static_cast<std::uint64_t>(image_id));
  const ProceduralGlyphSource default_glyphs;
  const GlyphSource* glyphs = cfg.glyphs ? cfg.glyphs : &default_glyphs;

  GridImage img;
  img.grid_size = g;
  // Sample attributes until some cell carries a unique full tuple, so that
  // resolvable referents are guaranteed to exist.
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    img.cells.clear();
    for (int r = 0; r < g; ++r)
      for (int c = 0; c < g; ++c) {
        GridCell cell;
        cell.digit = static_cast<int>(rng.uniform_int(10));
        cell.color = static_cast<FgColor>(rng.uniform_int(kFgColorCount));
        cell.stroke = static_cast<Stroke>(rng.uniform_int(kStrokeCount));
        cell.bgcolor = static_cast<BgColor>(rng.uniform_int(kBgColorCount));
        cell.row = r;
        cell.col = c;
        img.cells.push_back(cell);
      }
    std::map<std::array<int, 4>, int> freq;
    for (const auto& c : img.cells)
      ++freq[{c.digit, static_cast<int>(c.color), static_cast<int>(c.stroke),
              static_cast<int>(c.bgcolor)}];
    for (const auto& c : img.cells)
      if (freq[{c.digit, static_cast<int>(c.color), static_cast<int>(c.stroke),
                static_cast<int>(c.bgcolor)}] == 1)
        ok = true;
  }
  if (!ok)
    throw GenerationError(
        "could not sample a grid with a uniquely attributed cell after 100 "
        "attempts");

  const int H = img.height(), W = img.width(), T = kGlyphSize;
  img.pixels.assign(static_cast<std::size_t>(3 * H * W), 0);
  for (const auto& cell : img.cells) {
    const int dx = static_cast<int>(rng.uniform_int(3)) - 1;
    const int dy = static_cast<int>(rng.uniform_int(3)) - 1;
    GlyphMask mask = glyphs->glyph(cell.digit, cell.stroke, rng);
    const auto& fg = fg_color_rgb(cell.color);
    const auto& bg = bg_color_rgb(cell.bgcolor);
    const int y0 = cell.row * T, x0 = cell.col * T;
    for (int y = 0; y < T; ++y)
      for (int x = 0; x < T; ++x) {
        const int sy = y - dy, sx = x - dx;
        float m = 0.0f;
        if (sy >= 0 && sy < T && sx >= 0 && sx < T)
          m = mask[static_cast<std::size_t>(sy * T + sx)];
        for (int ch = 0; ch < 3; ++ch) {
          float v = bg[static_cast<std::size_t>(ch)] +
                    m * (fg[static_cast<std::size_t>(ch)] -
                         bg[static_cast<std::size_t>(ch)]);
          long q = std::lround(255.0f * v);
          img.pixels[static_cast<std::size_t>(ch * H * W + (y0 + y) * W +
                                              (x0 + x))] =
              static_cast<std::uint8_t>(std::clamp(q, 0L, 255L));
        }
      }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Dialog generation
// ---------------------------------------------------------------------------

namespace {

// Attribute axes.
enum Axis { kAxisDigit = 0, kAxisColor = 1, kAxisStroke = 2, kAxisBg = 3 };

constexpr const char* kAxisWords[4] = {"digit", "color", "stroke",
                                       "background"};
constexpr int kAxisCardinality[4] = {10, kFgColorCount, kStrokeCount,
                                     kBgColorCount};

int value_of(const GridCell& c, int axis) {
  switch (axis) {
    case kAxisDigit: return c.digit;
    case kAxisColor: return static_cast<int>(c.color);
    case kAxisStroke: return static_cast<int>(c.stroke);
    default: return static_cast<int>(c.bgcolor);
  }
}

std::string answer_attr_word(const GridCell& c, int axis) {
  switch (axis) {
    case kAxisDigit: return digit_word(c.digit);
    case kAxisColor: return fg_color_name(c.color);
    case kAxisStroke: return stroke_name(c.stroke);
    default: return bg_color_name(c.bgcolor);
  }
}

struct NpSpec {
  int digit = -1, color = -1, stroke = -1, bg = -1;

  int get(int axis) const {
    switch (axis) {
      case kAxisDigit: return digit;
      case kAxisColor: return color;
      case kAxisStroke: return stroke;
      default: return bg;
    }
  }
  void set(int axis, int value) {
    switch (axis) {
      case kAxisDigit: digit = value; break;
      case kAxisColor: color = value; break;
      case kAxisStroke: stroke = value; break;
      default: bg = value; break;
    }
  }
  int attr_count() const {
    return (digit >= 0) + (color >= 0) + (stroke >= 0) + (bg >= 0);
  }
  std::set<int> axes() const {
    std::set<int> s;
    for (int a = 0; a < 4; ++a)
      if (get(a) >= 0) s.insert(a);
    return s;
  }
  bool matches(const GridCell& c) const {
    for (int a = 0; a < 4; ++a)
      if (get(a) >= 0 && value_of(c, a) != get(a)) return false;
    return true;
  }
};

NpSpec spec_from(const GridCell& c, const std::vector<int>& axes) {
  NpSpec s;
  for (int a : axes) s.set(a, value_of(c, a));
  return s;
}

std::vector<int> match_cells(const GridImage& img, const NpSpec& spec) {
  std::vector<int> out;
  for (std::size_t i = 0; i < img.cells.size(); ++i)
    if (spec.matches(img.cells[i])) out.push_back(static_cast<int>(i));
  return out;
}

/// Token sequence plus the (relative) indices of the discriminative words.
struct Phrase {
  std::vector<std::string> tokens;
  std::vector<int> content;

  void word(const std::string& w, bool is_content) {
    if (is_content) content.push_back(static_cast<int>(tokens.size()));
    tokens.push_back(w);
  }
};

/// Noun phrase for a predicate: "[stroke] [color] base [on a BG background]".
Phrase np_phrase(const NpSpec& s, bool plural) {
  Phrase p;
  if (s.stroke >= 0)
    p.word(stroke_name(static_cast<Stroke>(s.stroke)), true);
  if (s.color >= 0) p.word(fg_color_name(static_cast<FgColor>(s.color)), true);
  if (s.digit >= 0)
    p.word(plural ? digit_plural(s.digit) : digit_word(s.digit), true);
  else
    p.word(plural ? "digits" : "digit", false);
  if (s.bg >= 0) {
    p.word("on", false);
    p.word("a", false);
    p.word(bg_color_name(static_cast<BgColor>(s.bg)), true);
    p.word("background", false);
  }
  return p;
}

/// Adjective-form phrase for a single-attribute predicate, used after "are".
Phrase adjective_phrase(const NpSpec& s) {
  Phrase p;
  if (s.color >= 0)
    p.word(fg_color_name(static_cast<FgColor>(s.color)), true);
  else if (s.stroke >= 0)
    p.word(stroke_name(static_cast<Stroke>(s.stroke)), true);
  else if (s.digit >= 0)
    p.word(digit_plural(s.digit), true);
  else {
    p.word("on", false);
    p.word("a", false);
    p.word(bg_color_name(static_cast<BgColor>(s.bg)), true);
    p.word("background", false);
  }
  return p;
}

bool starts_with_vowel(const std::string& w) {
  return !w.empty() && (w[0] == 'a' || w[0] == 'e' || w[0] == 'i' ||
                        w[0] == 'o' || w[0] == 'u');
}

/// Running per-question-type answer histogram used to keep any single answer
/// word at or below 35% within its type.
class AnswerBalancer {
 public:
  bool accept(int type, const std::string& word) const {
    long long total = 0, n = 0;
    if (auto t = totals_.find(type); t != totals_.end()) total = t->second;
    if (total < 20) return true;
    if (auto h = hist_.find(type); h != hist_.end())
      if (auto w = h->second.find(word); w != h->second.end()) n = w->second;
    return static_cast<double>(n + 1) <= 0.35 * static_cast<double>(total + 1);
  }
  void record(int type, const std::string& word) {
    ++hist_[type][word];
    ++totals_[type];
  }
  void merge(const AnswerBalancer& other) {
    for (const auto& [type, words] : other.hist_)
      for (const auto& [word, n] : words) {
        hist_[type][word] += n;
        totals_[type] += n;
      }
  }
  const std::map<int, std::map<std::string, long long>>& hist() const {
    return hist_;
  }

 private:
  std::map<int, std::map<std::string, long long>> hist_;
  std::map<int, long long> totals_;
};

/// Combined view over the committed dataset histogram and the pending counts
/// of the dialog currently being planned (so a failed dialog can roll back).
class ScopedBalancer {
 public:
  explicit ScopedBalancer(const AnswerBalancer* global) : global_(global) {}
  bool accept(int type, const std::string& word) const {
    long long total = totals(type);
    if (total < 20) return true;
    long long n = count(type, word);
    return static_cast<double>(n + 1) <= 0.35 * static_cast<double>(total + 1);
  }
  void record(int type, const std::string& word) { local_.record(type, word); }
  const AnswerBalancer& local() const { return local_; }

 private:
  long long totals(int type) const {
    long long t = 0;
    for (const auto& [w, n] : global_hist(type)) t += n;
    for (const auto& [w, n] : local_hist(type)) t += n;
    return t;
  }
  long long count(int type, const std::string& word) const {
    long long n = 0;
    if (auto it = global_hist(type).find(word); it != global_hist(type).end())
      n += it->second;
    if (auto it = local_hist(type).find(word); it != local_hist(type).end())
      n += it->second;
    return n;
  }
  const std::map<std::string, long long>& global_hist(int type) const {
    static const std::map<std::string, long long> empty;
    auto it = global_->hist().find(type);
    return it == global_->hist().end() ? empty : it->second;
  }
  const std::map<std::string, long long>& local_hist(int type) const {
    static const std::map<std::string, long long> empty;
    auto it = local_.hist().find(type);
    return it == local_.hist().end() ? empty : it->second;
  }

  const AnswerBalancer* global_;
  AnswerBalancer local_;
};

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string s;
  for (const auto& t : toks) {
    if (!s.empty()) s += ' ';
    s += t;
  }
  return s;
}

/// Builds one dialog for one image. Throws GenerationError when the plan
/// cannot be completed; the caller retries with a fresh stream.
class DialogBuilder {
 public:
  DialogBuilder(const GridImage& img, const GenConfig& cfg, RngStream rng,
                const AnswerBalancer* global)
      : img_(img), cfg_(cfg), rng_(rng), balancer_(global) {}

  DialogRecord build(int image_id) {
    DialogRecord d;
    d.image_id = image_id;
    plan_caption(d.caption);
    const int R = cfg_.rounds;
    const int min_coref = (3 * R + 9) / 10;
    for (int r = 0; r < R; ++r) {
      if (cfg_.coref_distractors > 0)
        build_distractor_round(r, R);
      else
        build_mixed_round(r, R, min_coref);
    }
    d.rounds = std::move(rounds_);
    return d;
  }

  const AnswerBalancer& pending() const { return balancer_.local(); }

 private:
  // ---- caption -----------------------------------------------------------

  void plan_caption(CaptionRecord& cap) {
    auto first = pick_unique_np(3, {}, /*prefer_digit=*/true);
    if (!first) first = pick_unique_np(4, {}, true);
    if (!first)
      throw GenerationError("no uniquely describable cell for the caption");
    int n = 1;
    if (static_cast<int>(img_.cells.size()) >= 2 && rng_.bernoulli(0.4)) n = 2;
    std::optional<std::pair<int, NpSpec>> second;
    if (n == 2) {
      second = pick_unique_np(3, {first->first}, true);
      if (!second) n = 1;
    }

    cap.tokens = {"an", "image", "with"};
    auto add_entity = [&](const std::pair<int, NpSpec>& e) {
      Phrase np = np_phrase(e.second, /*plural=*/false);
      cap.tokens.push_back(starts_with_vowel(np.tokens[0]) ? "an" : "a");
      int off = static_cast<int>(cap.tokens.size());
      for (const auto& t : np.tokens) cap.tokens.push_back(t);
      std::vector<int> span;
      for (int c : np.content) span.push_back(off + c);
      const GridCell& cell = img_.cells[static_cast<std::size_t>(e.first)];
      cap.entities.push_back({cell.row, cell.col});
      return span;
    };
    std::vector<int> span1 = add_entity(*first);
    if (n == 2) {
      cap.tokens.push_back("and");
      std::vector<int> span2 = add_entity(*second);
      cap.program = {Module::Find, Module::Find, Module::And,
                     Module::Describe};
      cap.spans = {span1, span2, {}, {}};
    } else {
      cap.program = {Module::Find, Module::Describe};
      cap.spans = {span1, {}};
    }

    if (n == 1) {
      // A unique single-entity caption doubles as a round-0 referent.
      referent_ = first->first;
      referent_round_ = -1;
      referent_from_caption_ = true;
      referent_np_axes_ = first->second.axes();
      referent_axes_used_.clear();
    }
  }

  // ---- planners ----------------------------------------------------------

  void build_mixed_round(int r, int R, int min_coref) {
    const int remaining = R - r;
    const int needed = min_coref - coref_done_;
    const bool no_anchor = referent_ < 0 && group_round_ < 0;
    for (int attempt = 0; attempt < 30; ++attempt) {
      const int force = attempt < 14 ? 0 : (attempt < 22 ? 1 : 2);
      // Leave room to introduce a referent before corefs become mandatory.
      if (no_anchor && remaining <= needed + 1) {
        if (try_type("3a", r, force)) return;
        continue;
      }
      const bool must_coref = needed >= remaining;
      std::string id = sample_template(must_coref);
      if (try_type(id, r, force)) return;
    }
    throw GenerationError("could not build round " + std::to_string(r));
  }

  void build_distractor_round(int r, int R) {
    const int intro_prefix = cfg_.coref_distractors + 1;
    bool intro;
    if (r < intro_prefix)
      intro = true;
    else if (r == R - 1)
      intro = false;
    else
      intro = ((r - intro_prefix) % 3) == 2;
    for (int attempt = 0; attempt < 30; ++attempt) {
      const int force = attempt < 14 ? 0 : (attempt < 22 ? 1 : 2);
      if (intro) {
        if (try_type("3a", r, force)) return;
      } else {
        if (try_type("4a", r, force)) return;
        if (try_type(rng_.bernoulli(0.5) ? "5a" : "5b", r, force)) return;
      }
    }
    throw GenerationError("could not build distractor-mode round " +
                          std::to_string(r));
  }

  std::string sample_template(bool must_coref) {
    struct Entry {
      const char* id;
      double w;
      bool coref;
    };
    const Entry entries[] = {
        {"1a", 0.11, false}, {"1b", 0.05, false}, {"1c", 0.05, false},
        {"2a", 0.07, false}, {"2b", 0.05, false}, {"3a", 0.20, false},
        {"3b", 0.07, false}, {"4a", 0.16, true},  {"4b", 0.07, true},
        {"5a", 0.09, true},  {"5b", 0.08, true},
    };
    double total = 0;
    double w[11];
    for (int i = 0; i < 11; ++i) {
      const Entry& e = entries[i];
      bool ok = true;
      if (must_coref && !e.coref) ok = false;
      if (e.coref && std::string(e.id) != "4b" && referent_ < 0) ok = false;
      if (std::string(e.id) == "4b" && group_round_ < 0) ok = false;
      if (std::string(e.id) == "3b" && img_.grid_size < 2) ok = false;
      w[i] = ok ? e.w : 0.0;
      total += w[i];
    }
    if (total <= 0) return "3a";
    double u = rng_.uniform() * total;
    for (int i = 0; i < 11; ++i) {
      u -= w[i];
      if (u <= 0) return entries[i].id;
    }
    return entries[10].id;
  }

  bool try_type(const std::string& id, int r, int force) {
    if (id == "1a") return build_1a(force);
    if (id == "1b") return build_1b(force);
    if (id == "1c") return build_1c(force);
    if (id == "2a" || id == "2b") return build_2(id, force);
    if (id == "3a") return build_3a(r, force);
    if (id == "3b") return build_3b(r, force);
    if (id == "4a") return build_4a(force);
    if (id == "4b") return build_4b(force);
    return build_5(id, force);
  }

  // ---- shared helpers ----------------------------------------------------

  int variant() {
    return cfg_.paraphrase ? static_cast<int>(rng_.uniform_int(3)) : 0;
  }

  std::optional<std::pair<int, NpSpec>> pick_unique_np(
      int max_attrs, const std::set<int>& exclude_cells, bool prefer_digit) {
    static const std::vector<std::vector<int>> kSubsets = [] {
      std::vector<std::vector<int>> out;
      for (int size = 1; size <= 4; ++size)
        for (int m = 1; m < 16; ++m) {
          std::vector<int> axes;
          for (int a = 0; a < 4; ++a)
            if (m & (1 << a)) axes.push_back(a);
          if (static_cast<int>(axes.size()) == size) out.push_back(axes);
        }
      return out;
    }();
    std::vector<std::pair<int, NpSpec>> pool;
    std::vector<double> weight;
    double total = 0;
    for (std::size_t i = 0; i < img_.cells.size(); ++i) {
      if (exclude_cells.count(static_cast<int>(i))) continue;
      for (const auto& axes : kSubsets) {
        if (static_cast<int>(axes.size()) > max_attrs) continue;
        NpSpec spec = spec_from(img_.cells[i], axes);
        if (match_cells(img_, spec).size() != 1) continue;
        double w = 1.0 / std::pow(3.0, static_cast<double>(axes.size() - 1));
        if (prefer_digit && spec.digit >= 0) w *= 3.0;
        pool.push_back({static_cast<int>(i), spec});
        weight.push_back(w);
        total += w;
      }
    }
    if (pool.empty()) return std::nullopt;
    double u = rng_.uniform() * total;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      u -= weight[i];
      if (u <= 0) return pool[i];
    }
    return pool.back();
  }

  NpSpec sample_pred() {
    NpSpec s;
    double u = rng_.uniform();
    auto rand_value = [&](int axis) {
      return static_cast<int>(rng_.uniform_int(kAxisCardinality[axis]));
    };
    if (u < 0.25) {
      s.set(kAxisColor, rand_value(kAxisColor));
    } else if (u < 0.45) {
      s.set(kAxisBg, rand_value(kAxisBg));
    } else if (u < 0.60) {
      s.set(kAxisStroke, rand_value(kAxisStroke));
    } else if (u < 0.75) {
      s.set(kAxisDigit, rand_value(kAxisDigit));
    } else {
      int a1 = static_cast<int>(rng_.uniform_int(4));
      int a2 = (a1 + 1 + static_cast<int>(rng_.uniform_int(3))) % 4;
      s.set(a1, rand_value(a1));
      s.set(a2, rand_value(a2));
    }
    return s;
  }

  std::vector<std::string> make_candidates(const std::string& answer,
                                           int* gt_index) {
    std::vector<std::string> cand = answer_family(answer);
    std::set<std::string> used(cand.begin(), cand.end());
    std::vector<std::string> rest;
    for (const auto& w : answer_vocab())
      if (!used.count(w)) rest.push_back(w);
    while (static_cast<int>(cand.size()) < kCandidateCount) {
      std::size_t i = static_cast<std::size_t>(
          rng_.uniform_int(static_cast<std::int64_t>(rest.size())));
      cand.push_back(rest[i]);
      rest.erase(rest.begin() + static_cast<long>(i));
    }
    for (std::size_t i = cand.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(
          rng_.uniform_int(static_cast<std::int64_t>(i + 1)));
      std::swap(cand[i], cand[j]);
    }
    for (std::size_t i = 0; i < cand.size(); ++i)
      if (cand[i] == answer) *gt_index = static_cast<int>(i);
    return cand;
  }

  static std::vector<std::string> answer_family(const std::string& w) {
    auto in = [&](std::initializer_list<const char*> xs) {
      for (const char* x : xs)
        if (w == x) return true;
      return false;
    };
    if (in({"yes", "no"})) return {"yes", "no"};
    if (in({"true", "false"})) return {"true", "false"};
    if (in({"normal", "bold"})) return {"normal", "bold"};
    for (int i = 0; i < kFgColorCount; ++i)
      if (w == kFgNames[i]) {
        std::vector<std::string> f(kFgNames, kFgNames + kFgColorCount);
        return f;
      }
    for (int i = 0; i < kBgColorCount; ++i)
      if (w == kBgNames[i]) {
        std::vector<std::string> f(kBgNames, kBgNames + kBgColorCount);
        return f;
      }
    for (int d = 0; d < 10; ++d)
      if (w == kDigitWords[d]) {
        std::vector<std::string> f(kDigitWords, kDigitWords + 10);
        return f;
      }
    std::vector<std::string> counts;
    for (int i = 0; i <= 16; ++i) counts.push_back(std::to_string(i));
    return counts;
  }

  /// Final gate: duplicate-question and answer-prior checks, then candidate
  /// sampling and state-free bookkeeping. Returns false when rejected.
  bool commit(RoundRecord&& rec, int force) {
    std::string key = join_tokens(rec.question);
    if (questions_.count(key) && force < 2) return false;
    if (force < 1 && !balancer_.accept(rec.question_type, rec.answer))
      return false;
    rec.candidates = make_candidates(rec.answer, &rec.gt_index);
    balancer_.record(rec.question_type, rec.answer);
    questions_.insert(key);
    if (rec.question_type >= 4) ++coref_done_;
    rounds_.push_back(std::move(rec));
    return true;
  }

  void set_targets(RoundRecord& rec, const std::vector<int>& cells) {
    for (int c : cells) {
      const GridCell& cell = img_.cells[static_cast<std::size_t>(c)];
      rec.targets.push_back({cell.row, cell.col});
    }
  }

  // ---- template builders -------------------------------------------------

  bool build_1a(int force) {
    for (int t = 0; t < 6; ++t) {
      NpSpec spec = sample_pred();
      auto cells = match_cells(img_, spec);
      Phrase np = np_phrase(spec, true);
      RoundRecord rec;
      rec.question_type = 1;
      rec.template_id = "1a";
      int v = variant();
      int off;
      if (v == 0) {
        rec.question = {"how", "many"};
        off = 2;
      } else if (v == 1) {
        rec.question = {"what", "is", "the", "number", "of"};
        off = 5;
      } else {
        rec.question = {"how", "many"};
        off = 2;
      }
      for (const auto& w : np.tokens) rec.question.push_back(w);
      if (v == 0) {
        rec.question.insert(rec.question.end(), {"are", "there", "?"});
      } else if (v == 1) {
        rec.question.push_back("?");
      } else {
        rec.question.insert(rec.question.end(),
                            {"does", "the", "image", "contain", "?"});
      }
      rec.program = {Module::Find, Module::Count};
      std::vector<int> span;
      for (int c : np.content) span.push_back(off + c);
      rec.spans = {span, {}};
      rec.answer = std::to_string(cells.size());
      set_targets(rec, cells);
      if (commit(std::move(rec), force)) {
        if (cells.size() >= 2) {
          group_ = cells;
          group_round_ = static_cast<int>(rounds_.size()) - 1;
        } else {
          group_.clear();
          group_round_ = -1;
        }
        return true;
      }
    }
    return false;
  }

  bool build_1b(int force) {
    for (int t = 0; t < 6; ++t) {
      NpSpec s1, s2;
      int a1 = static_cast<int>(rng_.uniform_int(4));
      int a2 = static_cast<int>(rng_.uniform_int(4));
      s1.set(a1, static_cast<int>(rng_.uniform_int(kAxisCardinality[a1])));
      s2.set(a2, static_cast<int>(rng_.uniform_int(kAxisCardinality[a2])));
      if (a1 == a2 && s1.get(a1) == s2.get(a2)) continue;
      auto ca = match_cells(img_, s1);
      auto cb = match_cells(img_, s2);
      std::vector<int> uni;
      std::set_union(ca.begin(), ca.end(), cb.begin(), cb.end(),
                     std::back_inserter(uni));
      Phrase np1 = np_phrase(s1, true), np2 = np_phrase(s2, true);
      RoundRecord rec;
      rec.question_type = 1;
      rec.template_id = "1b";
      int v = variant();
      int off1;
      if (v == 1) {
        rec.question = {"what", "is", "the", "number", "of"};
        off1 = 5;
      } else {
        rec.question = {"how", "many"};
        off1 = 2;
      }
      for (const auto& w : np1.tokens) rec.question.push_back(w);
      rec.question.push_back("or");
      int off2 = static_cast<int>(rec.question.size());
      for (const auto& w : np2.tokens) rec.question.push_back(w);
      if (v == 0)
        rec.question.insert(rec.question.end(), {"are", "there", "?"});
      else if (v == 1)
        rec.question.push_back("?");
      else
        rec.question.insert(rec.question.end(),
                            {"does", "the", "image", "contain", "?"});
      rec.program = {Module::Find, Module::Find, Module::Or, Module::Count};
      std::vector<int> sp1, sp2;
      for (int c : np1.content) sp1.push_back(off1 + c);
      for (int c : np2.content) sp2.push_back(off2 + c);
      rec.spans = {sp1, sp2, {}, {}};
      rec.answer = std::to_string(uni.size());
      set_targets(rec, uni);
      if (commit(std::move(rec), force)) return true;
    }
    return false;
  }

  bool build_1c(int force) {
    for (int t = 0; t < 6; ++t) {
      // Adjective-compatible axes only (digit nouns do not fit "are both X").
      const int axes[3] = {kAxisColor, kAxisStroke, kAxisBg};
      int i1 = static_cast<int>(rng_.uniform_int(3));
      int i2 = (i1 + 1 + static_cast<int>(rng_.uniform_int(2))) % 3;
      NpSpec s1, s2;
      s1.set(axes[i1],
             static_cast<int>(rng_.uniform_int(kAxisCardinality[axes[i1]])));
      s2.set(axes[i2],
             static_cast<int>(rng_.uniform_int(kAxisCardinality[axes[i2]])));
      auto ca = match_cells(img_, s1);
      auto cb = match_cells(img_, s2);
      std::vector<int> inter;
      std::set_intersection(ca.begin(), ca.end(), cb.begin(), cb.end(),
                            std::back_inserter(inter));
      Phrase p1 = adjective_phrase(s1), p2 = adjective_phrase(s2);
      RoundRecord rec;
      rec.question_type = 1;
      rec.template_id = "1c";
      int v = variant();
      int off1;
      if (v == 0) {
        rec.question = {"how", "many", "digits", "are", "both"};
        off1 = 5;
      } else if (v == 1) {
        rec.question = {"what", "is",  "the",  "number", "of",
                        "digits", "that", "are", "both"};
        off1 = 9;
      } else {
        rec.question = {"how", "many", "digits", "are"};
        off1 = 4;
      }
      for (const auto& w : p1.tokens) rec.question.push_back(w);
      rec.question.push_back("and");
      int off2 = static_cast<int>(rec.question.size());
      for (const auto& w : p2.tokens) rec.question.push_back(w);
      if (v == 2)
        rec.question.insert(rec.question.end(),
                            {"at", "the", "same", "time", "?"});
      else
        rec.question.push_back("?");
      rec.program = {Module::Find, Module::Find, Module::And,
                     Module::Count};
      std::vector<int> sp1, sp2;
      for (int c : p1.content) sp1.push_back(off1 + c);
      for (int c : p2.content) sp2.push_back(off2 + c);
      rec.spans = {sp1, sp2, {}, {}};
      rec.answer = std::to_string(inter.size());
      set_targets(rec, inter);
      if (commit(std::move(rec), force)) return true;
    }
    return false;
  }

  bool build_2(const std::string& id, int force) {
    for (int t = 0; t < 6; ++t) {
      bool want_exists = rng_.bernoulli(0.5);
      NpSpec spec;
      std::vector<int> cells;
      for (int s = 0; s < 30; ++s) {
        spec = sample_pred();
        cells = match_cells(img_, spec);
        if (cells.empty() != want_exists) break;
      }
      Phrase np = np_phrase(spec, true);
      RoundRecord rec;
      rec.question_type = 2;
      rec.template_id = id;
      int v = variant();
      int off;
      if (id == "2a") {
        if (v == 0)
          rec.question = {"are", "there", "any"};
        else if (v == 1)
          rec.question = {"is", "there", "any"};
        else
          rec.question = {"does", "the", "image", "contain", "any"};
        off = static_cast<int>(rec.question.size());
        for (const auto& w : np.tokens) rec.question.push_back(w);
        rec.question.push_back("?");
        rec.answer = cells.empty() ? "no" : "yes";
      } else {
        rec.question = {"true", "or", "false", ":"};
        if (v == 0)
          rec.question.insert(rec.question.end(), {"there", "are", "some"});
        else if (v == 1)
          rec.question.insert(rec.question.end(),
                              {"the", "image", "contains", "some"});
        off = static_cast<int>(rec.question.size());
        for (const auto& w : np.tokens) rec.question.push_back(w);
        if (v == 2) rec.question.insert(rec.question.end(), {"are", "present"});
        rec.question.push_back("?");
        rec.answer = cells.empty() ? "false" : "true";
      }
      rec.program = {Module::Find, Module::Exist};
      std::vector<int> span;
      for (int c : np.content) span.push_back(off + c);
      rec.spans = {span, {}};
      set_targets(rec, cells);
      if (commit(std::move(rec), force)) return true;
    }
    return false;
  }

  bool build_3a(int r, int force) {
    for (int t = 0; t < 6; ++t) {
      const bool distractor = cfg_.coref_distractors > 0;
      std::optional<std::pair<int, NpSpec>> u;
      const std::set<int>& exclude = distractor ? intro_cells_ : no_cells_();
      for (int cap : {2, 3, 4}) {
        u = pick_unique_np(cap, exclude, false);
        if (u) break;
      }
      if (!u) return false;
      std::set<int> taken = u->second.axes();
      std::vector<int> free_axes;
      for (int a = 0; a < 4; ++a)
        if (!taken.count(a)) free_axes.push_back(a);
      if (free_axes.empty()) continue;
      int axis = free_axes[static_cast<std::size_t>(
          rng_.uniform_int(static_cast<std::int64_t>(free_axes.size())))];
      const GridCell& cell = img_.cells[static_cast<std::size_t>(u->first)];
      RoundRecord rec;
      rec.question_type = 3;
      rec.template_id = "3a";
      build_attr_question(rec, axis, u->second, nullptr);
      rec.program = {Module::Find, Module::Describe};
      fill_attr_spans(rec, axis);
      rec.answer = answer_attr_word(cell, axis);
      set_targets(rec, {u->first});
      if (commit(std::move(rec), force)) {
        referent_ = u->first;
        referent_round_ = r;
        referent_from_caption_ = false;
        referent_np_axes_ = taken;
        referent_axes_used_ = {axis};
        if (distractor) intro_cells_.insert(u->first);
        return true;
      }
    }
    return false;
  }

  bool build_3b(int r, int force) {
    if (img_.grid_size < 2) return false;
    for (int t = 0; t < 6; ++t) {
      auto u = pick_unique_np(2, no_cells_(), false);
      if (!u) u = pick_unique_np(3, no_cells_(), false);
      if (!u) return false;
      const GridCell& base = img_.cells[static_cast<std::size_t>(u->first)];
      struct Rel {
        const char* word;
        int dr, dc;
        std::vector<std::string> tokens;
      };
      std::vector<Rel> feasible;
      if (base.row > 0) feasible.push_back({"above", -1, 0, {"above"}});
      if (base.row + 1 < img_.grid_size)
        feasible.push_back({"below", 1, 0, {"below"}});
      if (base.col > 0)
        feasible.push_back({"left", 0, -1, {"to", "the", "left", "of"}});
      if (base.col + 1 < img_.grid_size)
        feasible.push_back({"right", 0, 1, {"to", "the", "right", "of"}});
      if (feasible.empty()) continue;
      const Rel& rel = feasible[static_cast<std::size_t>(
          rng_.uniform_int(static_cast<std::int64_t>(feasible.size())))];
      int target = (base.row + rel.dr) * img_.grid_size + (base.col + rel.dc);
      int axis = static_cast<int>(rng_.uniform_int(4));
      RoundRecord rec;
      rec.question_type = 3;
      rec.template_id = "3b";
      build_attr_question(rec, axis, u->second, &rel.tokens);
      rec.program = {Module::Find, Module::Relocate, Module::Describe};
      fill_attr_spans(rec, axis);
      // The Relocate span is the direction word itself.
      int dir_idx = -1;
      for (std::size_t i = 0; i < rec.question.size(); ++i)
        if (rec.question[i] == rel.word) {
          dir_idx = static_cast<int>(i);
          break;
        }
      rec.spans[1] = {dir_idx};
      rec.answer =
          answer_attr_word(img_.cells[static_cast<std::size_t>(target)], axis);
      set_targets(rec, {target});
      if (commit(std::move(rec), force)) {
        referent_ = target;
        referent_round_ = r;
        referent_from_caption_ = false;
        referent_np_axes_.clear();  // the target cell itself was not described
        referent_axes_used_ = {axis};
        return true;
      }
    }
    return false;
  }

  /// Question text shared by 3a/3b/4a: "what is the AXIS of ... ?" plus its
  /// paraphrases. `rel` non-null inserts "the digit REL" (template 3b);
  /// `np` empty means the pronoun form (template 4a).
  void build_attr_question(RoundRecord& rec, int axis, const NpSpec& np_spec,
                           const std::vector<std::string>* rel,
                           bool pronoun = false) {
    const std::string axis_word = kAxisWords[axis];
    int v = variant();
    Phrase np = np_phrase(np_spec, false);
    auto push_np = [&](std::vector<int>* span_out) {
      rec.question.push_back("the");
      int off = static_cast<int>(rec.question.size());
      for (const auto& w : np.tokens) rec.question.push_back(w);
      if (span_out)
        for (int c : np.content) span_out->push_back(off + c);
    };
    auto push_rel = [&] {
      rec.question.insert(rec.question.end(), {"the", "digit"});
      for (const auto& w : *rel) rec.question.push_back(w);
    };
    find_span_.clear();
    if (v == 1) {
      rec.question = {"what", axis_word, "does"};
      if (pronoun) {
        rec.question.push_back("it");
      } else if (rel) {
        push_rel();
        push_np(&find_span_);
      } else {
        push_np(&find_span_);
      }
      rec.question.insert(rec.question.end(), {"have", "?"});
    } else {
      if (v == 0)
        rec.question = {"what", "is", "the", axis_word, "of"};
      else
        rec.question = {"tell", "me", "the", axis_word, "of"};
      if (pronoun) {
        rec.question.push_back("it");
      } else if (rel) {
        push_rel();
        push_np(&find_span_);
      } else {
        push_np(&find_span_);
      }
      rec.question.push_back("?");
    }
  }

  /// Fills spans for programs whose first module consumes the noun phrase
  /// (or pronoun) and whose last module (Describe) reads the axis word.
  void fill_attr_spans(RoundRecord& rec, int axis) {
    int axis_idx = -1, it_idx = -1;
    for (std::size_t i = 0; i < rec.question.size(); ++i) {
      if (axis_idx < 0 && rec.question[i] == kAxisWords[axis])
        axis_idx = static_cast<int>(i);
      if (it_idx < 0 && rec.question[i] == "it") it_idx = static_cast<int>(i);
    }
    rec.spans.assign(rec.program.size(), {});
    if (rec.program[0] == Module::Refer)
      rec.spans[0] = {it_idx};
    else
      rec.spans[0] = find_span_;
    rec.spans[rec.program.size() - 1] = {axis_idx};
  }

  bool build_4a(int force) {
    if (referent_ < 0) return false;
    std::vector<int> axes;
    for (int a = 0; a < 4; ++a)
      if (!referent_np_axes_.count(a) && !referent_axes_used_.count(a))
        axes.push_back(a);
    if (axes.empty()) return false;
    if (cfg_.coref_distractors > 0) {
      // Prefer the axis on which most distractor referents disagree with the
      // true referent, so resolving the wrong antecedent costs accuracy.
      const GridCell& ref = img_.cells[static_cast<std::size_t>(referent_)];
      std::stable_sort(axes.begin(), axes.end(), [&](int a, int b) {
        auto differing = [&](int axis) {
          int n = 0;
          for (int cell : intro_cells_)
            if (cell != referent_ &&
                value_of(img_.cells[static_cast<std::size_t>(cell)], axis) !=
                    value_of(ref, axis))
              ++n;
          return n;
        };
        return differing(a) > differing(b);
      });
    } else {
      for (std::size_t i = axes.size(); i > 1; --i)
        std::swap(axes[i - 1], axes[static_cast<std::size_t>(
                                   rng_.uniform_int(static_cast<std::int64_t>(i)))]);
    }
    const GridCell& cell = img_.cells[static_cast<std::size_t>(referent_)];
    for (int axis : axes) {
      RoundRecord rec;
      rec.question_type = 4;
      rec.template_id = "4a";
      NpSpec unused;
      build_attr_question(rec, axis, unused, nullptr, /*pronoun=*/true);
      rec.program = {Module::Refer, Module::Describe};
      fill_attr_spans(rec, axis);
      rec.answer = answer_attr_word(cell, axis);
      rec.coref_source = referent_from_caption_ ? -1 : referent_round_;
      rec.coref_caption = referent_from_caption_;
      set_targets(rec, {referent_});
      if (commit(std::move(rec), force)) {
        referent_axes_used_.insert(axis);
        return true;
      }
    }
    return false;
  }

  bool build_4b(int force) {
    if (group_round_ < 0) return false;
    for (int t = 0; t < 6; ++t) {
      int axis = static_cast<int>(rng_.uniform_int(4));
      int value;
      if (rng_.bernoulli(0.7)) {
        int member = group_[static_cast<std::size_t>(
            rng_.uniform_int(static_cast<std::int64_t>(group_.size())))];
        value = value_of(img_.cells[static_cast<std::size_t>(member)], axis);
      } else {
        value = static_cast<int>(rng_.uniform_int(kAxisCardinality[axis]));
      }
      NpSpec spec;
      spec.set(axis, value);
      auto cells = match_cells(img_, spec);
      std::vector<int> inter;
      std::set_intersection(group_.begin(), group_.end(), cells.begin(),
                            cells.end(), std::back_inserter(inter));
      Phrase p = adjective_phrase(spec);
      RoundRecord rec;
      rec.question_type = 4;
      rec.template_id = "4b";
      int v = variant();
      if (v == 0)
        rec.question = {"among", "them", ",", "how", "many", "are"};
      else if (v == 1)
        rec.question = {"how", "many", "of", "them", "are"};
      else
        rec.question = {"how", "many", "among", "them", "are"};
      int off = static_cast<int>(rec.question.size());
      for (const auto& w : p.tokens) rec.question.push_back(w);
      rec.question.push_back("?");
      rec.program = {Module::Refer, Module::Find, Module::And,
                     Module::Count};
      std::vector<int> span;
      for (int c : p.content) span.push_back(off + c);
      int them_idx = -1;
      for (std::size_t i = 0; i < rec.question.size(); ++i)
        if (rec.question[i] == "them") them_idx = static_cast<int>(i);
      rec.spans = {{them_idx}, span, {}, {}};
      rec.answer = std::to_string(inter.size());
      rec.coref_source = group_round_;
      set_targets(rec, inter);
      if (commit(std::move(rec), force)) return true;
    }
    return false;
  }

  bool build_5(const std::string& id, int force) {
    if (referent_ < 0) return false;
    const GridCell& ref = img_.cells[static_cast<std::size_t>(referent_)];
    std::vector<int> axes = {0, 1, 2, 3};
    for (std::size_t i = axes.size(); i > 1; --i)
      std::swap(axes[i - 1], axes[static_cast<std::size_t>(
                                 rng_.uniform_int(static_cast<std::int64_t>(i)))]);
    const bool want_yes = rng_.bernoulli(0.5);
    // For the boolean variant, try to honor the sampled outcome first.
    if (id == "5b")
      std::stable_sort(axes.begin(), axes.end(), [&](int a, int b) {
        auto others = [&](int axis) {
          NpSpec s;
          s.set(axis, value_of(ref, axis));
          return static_cast<int>(match_cells(img_, s).size()) - 1;
        };
        bool ya = (others(a) > 0) == want_yes;
        bool yb = (others(b) > 0) == want_yes;
        return ya > yb;
      });
    for (int axis : axes) {
      NpSpec spec;
      spec.set(axis, value_of(ref, axis));
      auto cells = match_cells(img_, spec);
      std::vector<int> others;
      for (int c : cells)
        if (c != referent_) others.push_back(c);
      Phrase np = np_phrase(spec, true);
      RoundRecord rec;
      rec.question_type = 5;
      rec.template_id = id;
      int v = variant();
      int off;
      if (id == "5a") {
        if (v == 0) {
          rec.question = {"besides", "it", ",", "how", "many", "other"};
        } else if (v == 1) {
          rec.question = {"besides", "it", ",",      "what", "is",
                          "the",     "number", "of", "other"};
        } else {
          rec.question = {"how", "many", "other"};
        }
        off = static_cast<int>(rec.question.size());
        for (const auto& w : np.tokens) rec.question.push_back(w);
        if (v == 0)
          rec.question.insert(rec.question.end(), {"are", "there", "?"});
        else if (v == 1)
          rec.question.push_back("?");
        else
          rec.question.insert(rec.question.end(),
                              {"are", "there", "besides", "it", "?"});
        rec.answer = std::to_string(others.size());
        rec.program = {Module::Refer, Module::Exclude, Module::Count};
      } else {
        if (v == 0)
          rec.question = {"besides", "it", ",", "are", "there", "any", "other"};
        else if (v == 1)
          rec.question = {"besides", "it", ",", "is", "there", "any", "other"};
        else
          rec.question = {"are", "there", "any", "other"};
        off = static_cast<int>(rec.question.size());
        for (const auto& w : np.tokens) rec.question.push_back(w);
        if (v == 2)
          rec.question.insert(rec.question.end(), {"besides", "it", "?"});
        else
          rec.question.push_back("?");
        rec.answer = others.empty() ? "no" : "yes";
        rec.program = {Module::Refer, Module::Exclude, Module::Exist};
      }
      std::vector<int> span;
      for (int c : np.content) span.push_back(off + c);
      int it_idx = -1;
      for (std::size_t i = 0; i < rec.question.size(); ++i)
        if (rec.question[i] == "it") {
          it_idx = static_cast<int>(i);
          break;
        }
      rec.spans = {{it_idx}, span, {}};
      rec.coref_source = referent_from_caption_ ? -1 : referent_round_;
      rec.coref_caption = referent_from_caption_;
      set_targets(rec, others);
      if (commit(std::move(rec), force)) return true;
    }
    return false;
  }

  static const std::set<int>& no_cells_() {
    static const std::set<int> empty;
    return empty;
  }

  const GridImage& img_;
  const GenConfig& cfg_;
  RngStream rng_;
  ScopedBalancer balancer_;

  std::vector<RoundRecord> rounds_;
  std::set<std::string> questions_;
  std::vector<int> find_span_;

  int referent_ = -1;
  int referent_round_ = -1;
  bool referent_from_caption_ = false;
  std::set<int> referent_np_axes_;
  std::set<int> referent_axes_used_;
  std::vector<int> group_;
  int group_round_ = -1;
  std::set<int> intro_cells_;
  int coref_done_ = 0;
};

}  // namespace

const std::vector<std::array<std::string, 2>>& template_registry() {
  static const std::vector<std::array<std::string, 2>> reg = {
      {"1a", "how many {np} are there ?"},
      {"1b", "how many {np1} or {np2} are there ?"},
      {"1c", "how many digits are both {p1} and {p2} ?"},
      {"2a", "are there any {np} ?"},
      {"2b", "true or false : there are some {np} ?"},
      {"3a", "what is the {attr} of the {np} ?"},
      {"3b", "what is the {attr} of the digit {rel} the {np} ?"},
      {"4a", "what is the {attr} of it ?"},
      {"4b", "among them , how many are {p} ?"},
      {"5a", "besides it , how many other {np} are there ?"},
      {"5b", "besides it , are there any other {np} ?"},
  };
  return reg;
}

Dataset generate_dataset(const GenConfig& cfg) {
  if (cfg.num_images < 0) throw DomainError("num_images must be nonnegative");
  if (cfg.dialogs_per_image < 1)
    throw DomainError("dialogs_per_image must be positive");
  if (cfg.rounds < 1) throw DomainError("rounds must be positive");
  if (cfg.grid < 1 || cfg.grid > 4)
    throw DomainError("grid size must be in [1, 4], got " +
                      std::to_string(cfg.grid));

  Dataset ds;
  AnswerBalancer balancer;
  Rng rng(cfg.seed);
  for (int id = 0; id < cfg.num_images; ++id) {
    ds.images.push_back(render_image(cfg, id));
    for (int d = 0; d < cfg.dialogs_per_image; ++d) {
      const std::uint64_t dialog_index =
          static_cast<std::uint64_t>(id) *
              static_cast<std::uint64_t>(cfg.dialogs_per_image) +
          static_cast<std::uint64_t>(d);
      bool done = false;
      for (int attempt = 0; attempt < 20 && !done; ++attempt) {
        DialogBuilder builder(
            ds.images.back(), cfg,
            rng.stream("dialog", dialog_index * 32 + static_cast<std::uint64_t>(attempt)),
            &balancer);
        try {
          DialogRecord rec = builder.build(id);
          balancer.merge(builder.pending());
          ds.dialogs.push_back(std::move(rec));
          done = true;
        } catch (const GenerationError&) {
          // Retry the dialog with a fresh stream; the balancer is untouched.
        }
      }
      if (!done)
        throw GenerationError("failed to build dialog " +
                              std::to_string(dialog_index) +
                              " after 20 attempts");
    }
  }

  Manifest& m = ds.manifest;
  m.version = 1;
  m.seed = cfg.seed;
  m.num_images = cfg.num_images;
  m.dialogs_per_image = cfg.dialogs_per_image;
  m.rounds_per_dialog = cfg.rounds;
  m.grid_size = cfg.grid;
  m.height = kGlyphSize * cfg.grid;
  m.width = kGlyphSize * cfg.grid;
  m.channels = 3;
  m.coref_distractors = cfg.coref_distractors;
  m.paraphrase = cfg.paraphrase;
  m.question_vocab = question_vocab();
  m.answer_vocab = answer_vocab();
  m.templates = template_registry();
  m.split_rule = "image_id % 10 == 9 -> val";
  for (int id = 0; id < cfg.num_images; ++id)
    (is_val_image(id) ? m.val_images : m.train_images) += 1;
  m.dialog_count = static_cast<long long>(ds.dialogs.size());
  for (const auto& d : ds.dialogs) {
    m.round_count += static_cast<long long>(d.rounds.size());
    for (const auto& r : d.rounds) {
      ++m.type_counts[r.question_type];
      if (r.question_type >= 4) ++m.coref_round_count;
    }
  }
  m.answer_histograms = balancer.hist();
  return ds;
}

}  // namespace nmnd
