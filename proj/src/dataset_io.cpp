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
#include "nmnd/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace nmnd {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'G', 'R', 'D', 'I'};
constexpr std::uint32_t kImagesVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw UsageError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t off,
                      const std::string& what) {
  if (off + 4 > b.size())
    throw FormatError("images.bin truncated while reading " + what, off);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(b[off + static_cast<std::size_t>(i)])
         << (8 * i);
  return v;
}

std::uint16_t get_u16(const std::vector<std::uint8_t>& b, std::size_t off,
                      const std::string& what) {
  if (off + 2 > b.size())
    throw FormatError("images.bin truncated while reading " + what, off);
  return static_cast<std::uint16_t>(b[off] |
                                    (static_cast<std::uint16_t>(b[off + 1]) << 8));
}

json program_json(const std::vector<Module>& program) {
  json a = json::array();
  for (Module m : program) a.push_back(module_name(m));
  return a;
}

std::vector<Module> program_from_json(const json& a) {
  std::vector<Module> out;
  for (const auto& t : a) out.push_back(module_from_name(t.get<std::string>()));
  return out;
}

json pairs_json(const std::vector<std::pair<int, int>>& ps) {
  json a = json::array();
  for (const auto& [r, c] : ps) a.push_back(json::array({r, c}));
  return a;
}

std::vector<std::pair<int, int>> pairs_from_json(const json& a) {
  std::vector<std::pair<int, int>> out;
  for (const auto& p : a) out.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
  return out;
}

json dialog_json(const DialogRecord& d) {
  json jc;
  jc["tokens"] = d.caption.tokens;
  jc["program"] = program_json(d.caption.program);
  jc["spans"] = d.caption.spans;
  jc["entities"] = pairs_json(d.caption.entities);
  json rounds = json::array();
  for (const auto& r : d.rounds) {
    json jr;
    jr["question"] = r.question;
    jr["question_type"] = r.question_type;
    jr["template_id"] = r.template_id;
    jr["program"] = program_json(r.program);
    jr["spans"] = r.spans;
    jr["answer"] = r.answer;
    jr["candidates"] = r.candidates;
    jr["gt_index"] = r.gt_index;
    jr["coref_source"] = r.coref_source;
    jr["coref_caption"] = r.coref_caption;
    jr["targets"] = pairs_json(r.targets);
    rounds.push_back(std::move(jr));
  }
  json j;
  j["image_id"] = d.image_id;
  j["caption"] = std::move(jc);
  j["rounds"] = std::move(rounds);
  return j;
}

DialogRecord dialog_from_json(const json& j) {
  DialogRecord d;
  d.image_id = j.at("image_id").get<int>();
  const json& jc = j.at("caption");
  d.caption.tokens = jc.at("tokens").get<std::vector<std::string>>();
  d.caption.program = program_from_json(jc.at("program"));
  d.caption.spans = jc.at("spans").get<std::vector<std::vector<int>>>();
  d.caption.entities = pairs_from_json(jc.at("entities"));
  for (const auto& jr : j.at("rounds")) {
    RoundRecord r;
    r.question = jr.at("question").get<std::vector<std::string>>();
    r.question_type = jr.at("question_type").get<int>();
    r.template_id = jr.at("template_id").get<std::string>();
    r.program = program_from_json(jr.at("program"));
    r.spans = jr.at("spans").get<std::vector<std::vector<int>>>();
    r.answer = jr.at("answer").get<std::string>();
    r.candidates = jr.at("candidates").get<std::vector<std::string>>();
    r.gt_index = jr.at("gt_index").get<int>();
    r.coref_source = jr.at("coref_source").get<int>();
    r.coref_caption = jr.at("coref_caption").get<bool>();
    r.targets = pairs_from_json(jr.at("targets"));
    d.rounds.push_back(std::move(r));
  }
  return d;
}

json manifest_json(const Manifest& m) {
  json j;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["num_images"] = m.num_images;
  j["dialogs_per_image"] = m.dialogs_per_image;
  j["rounds_per_dialog"] = m.rounds_per_dialog;
  j["grid_size"] = m.grid_size;
  j["height"] = m.height;
  j["width"] = m.width;
  j["channels"] = m.channels;
  j["coref_distractors"] = m.coref_distractors;
  j["paraphrase"] = m.paraphrase;
  j["question_vocab"] = m.question_vocab;
  j["answer_vocab"] = m.answer_vocab;
  json templates = json::array();
  for (const auto& t : m.templates)
    templates.push_back(json::array({t[0], t[1]}));
  j["templates"] = std::move(templates);
  j["split_rule"] = m.split_rule;
  j["train_images"] = m.train_images;
  j["val_images"] = m.val_images;
  j["dialog_count"] = m.dialog_count;
  j["round_count"] = m.round_count;
  j["coref_round_count"] = m.coref_round_count;
  json tc = json::object();
  for (const auto& [type, n] : m.type_counts) tc[std::to_string(type)] = n;
  j["type_counts"] = std::move(tc);
  json hist = json::object();
  for (const auto& [type, words] : m.answer_histograms) {
    json h = json::object();
    for (const auto& [word, n] : words) h[word] = n;
    hist[std::to_string(type)] = std::move(h);
  }
  j["answer_histograms"] = std::move(hist);
  return j;
}

Manifest manifest_from_json(const json& j) {
  Manifest m;
  m.version = j.at("version").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.num_images = j.at("num_images").get<int>();
  m.dialogs_per_image = j.at("dialogs_per_image").get<int>();
  m.rounds_per_dialog = j.at("rounds_per_dialog").get<int>();
  m.grid_size = j.at("grid_size").get<int>();
  m.height = j.at("height").get<int>();
  m.width = j.at("width").get<int>();
  m.channels = j.at("channels").get<int>();
  m.coref_distractors = j.at("coref_distractors").get<int>();
  m.paraphrase = j.at("paraphrase").get<bool>();
  m.question_vocab = j.at("question_vocab").get<std::vector<std::string>>();
  m.answer_vocab = j.at("answer_vocab").get<std::vector<std::string>>();
  for (const auto& t : j.at("templates"))
    m.templates.push_back({t.at(0).get<std::string>(), t.at(1).get<std::string>()});
  m.split_rule = j.at("split_rule").get<std::string>();
  m.train_images = j.at("train_images").get<int>();
  m.val_images = j.at("val_images").get<int>();
  m.dialog_count = j.at("dialog_count").get<long long>();
  m.round_count = j.at("round_count").get<long long>();
  m.coref_round_count = j.at("coref_round_count").get<long long>();
  for (const auto& [key, n] : j.at("type_counts").items())
    m.type_counts[std::stoi(key)] = n.get<long long>();
  for (const auto& [key, words] : j.at("answer_histograms").items())
    for (const auto& [word, n] : words.items())
      m.answer_histograms[std::stoi(key)][word] = n.get<long long>();
  return m;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);

  // images.bin: fixed 17-byte header followed by raw u8 pixel planes.
  std::string bin;
  bin.append(kMagic, 4);
  put_u32(bin, kImagesVersion);
  put_u32(bin, static_cast<std::uint32_t>(ds.images.size()));
  int height = ds.manifest.height, width = ds.manifest.width;
  if (!ds.images.empty()) {
    height = ds.images.front().height();
    width = ds.images.front().width();
  }
  put_u16(bin, static_cast<std::uint16_t>(height));
  put_u16(bin, static_cast<std::uint16_t>(width));
  bin.push_back(3);  // channels
  for (const auto& img : ds.images)
    bin.append(reinterpret_cast<const char*>(img.pixels.data()),
               img.pixels.size());
  {
    std::ofstream f(dir + "/images.bin", std::ios::binary);
    if (!f.good())
      throw UsageError("cannot open '" + dir + "/images.bin' for writing");
    f.write(bin.data(), static_cast<std::streamsize>(bin.size()));
  }

  {
    std::ofstream f(dir + "/dialogs.jsonl", std::ios::binary);
    if (!f.good())
      throw UsageError("cannot open '" + dir + "/dialogs.jsonl' for writing");
    for (const auto& d : ds.dialogs) f << dialog_json(d).dump() << '\n';
  }

  {
    std::ofstream f(dir + "/manifest.json", std::ios::binary);
    if (!f.good())
      throw UsageError("cannot open '" + dir + "/manifest.json' for writing");
    f << manifest_json(ds.manifest).dump(2) << '\n';
  }
}

Dataset read_dataset(const std::string& dir) {
  Dataset ds;

  const std::vector<std::uint8_t> bin = read_file(dir + "/images.bin");
  if (bin.size() < 4 || !std::equal(kMagic, kMagic + 4, bin.begin()))
    throw FormatError("images.bin does not start with the GRDI magic", 0);
  const std::uint32_t version = get_u32(bin, 4, "version");
  if (version != kImagesVersion)
    throw FormatError("unsupported images.bin version " +
                          std::to_string(version),
                      4);
  const std::uint32_t count = get_u32(bin, 8, "image count");
  const int height = get_u16(bin, 12, "height");
  const int width = get_u16(bin, 14, "width");
  if (bin.size() < 17)
    throw FormatError("images.bin truncated while reading channels", 16);
  const int channels = bin[16];
  if (channels != 3)
    throw FormatError("expected 3 channels, got " + std::to_string(channels),
                      16);
  const std::size_t per_image =
      static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
      static_cast<std::size_t>(width);
  if (bin.size() - 17 < per_image * count)
    throw FormatError("images.bin pixel payload truncated", 17);
  for (std::uint32_t i = 0; i < count; ++i) {
    GridImage img;
    img.grid_size = height / kGlyphSize;
    const std::size_t base = 17 + static_cast<std::size_t>(i) * per_image;
    img.pixels.assign(bin.begin() + static_cast<long>(base),
                      bin.begin() + static_cast<long>(base + per_image));
    ds.images.push_back(std::move(img));
  }

  {
    std::ifstream f(dir + "/dialogs.jsonl");
    if (!f.good())
      throw UsageError("cannot open '" + dir + "/dialogs.jsonl' for reading");
    std::string line;
    long long line_no = 0;
    while (std::getline(f, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
        ds.dialogs.push_back(dialog_from_json(j));
      } catch (const json::exception& e) {
        throw FormatError("dialogs.jsonl line " + std::to_string(line_no) +
                          ": " + e.what());
      }
    }
  }

  {
    std::ifstream f(dir + "/manifest.json");
    if (!f.good())
      throw UsageError("cannot open '" + dir + "/manifest.json' for reading");
    try {
      json j = json::parse(f);
      ds.manifest = manifest_from_json(j);
    } catch (const json::exception& e) {
      throw FormatError(std::string("manifest.json: ") + e.what());
    }
  }
  return ds;
}

void write_pgm(const std::string& path, const float* data, int height,
               int width) {
  if (height <= 0 || width <= 0)
    throw DomainError("graymap dimensions must be positive");
  std::ofstream f(path, std::ios::binary);
  if (!f.good()) throw UsageError("cannot open '" + path + "' for writing");
  f << "P5\n" << width << ' ' << height << "\n255\n";
  for (int i = 0; i < height * width; ++i) {
    float v = std::min(1.0f, std::max(0.0f, data[i]));
    f.put(static_cast<char>(static_cast<unsigned char>(
        std::lround(255.0f * v))));
  }
}

}  // namespace nmnd
