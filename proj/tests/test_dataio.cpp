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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "nmnd/dataset_io.hpp"
#include "nmnd/griddata.hpp"

namespace {

using namespace nmnd;
namespace fs = std::filesystem;

std::string fresh_dir(const char* name) {
  std::string d = std::string("/tmp/nmnd_ds_") + name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::vector<char>(std::istreambuf_iterator<char>(f),
                           std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Dataset small_dataset() {
  GenConfig cfg;
  cfg.num_images = 6;
  cfg.dialogs_per_image = 2;
  cfg.rounds = 6;
  cfg.seed = 19;
  return generate_dataset(cfg);
}

void check_round_equal(const RoundRecord& a, const RoundRecord& b) {
  CHECK(a.question == b.question);
  CHECK(a.question_type == b.question_type);
  CHECK(a.template_id == b.template_id);
  CHECK(a.program == b.program);
  CHECK(a.spans == b.spans);
  CHECK(a.answer == b.answer);
  CHECK(a.candidates == b.candidates);
  CHECK(a.gt_index == b.gt_index);
  CHECK(a.coref_source == b.coref_source);
  CHECK(a.coref_caption == b.coref_caption);
  CHECK(a.targets == b.targets);
}

}  // namespace

TEST_SUITE("dataset-io") {

TEST_CASE("write then read returns an identical dataset") {
  Dataset ds = small_dataset();
  std::string dir = fresh_dir("roundtrip");
  write_dataset(ds, dir);
  Dataset back = read_dataset(dir);

  REQUIRE(back.images.size() == ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    CHECK(back.images[i].pixels == ds.images[i].pixels);
    CHECK(back.images[i].grid_size == ds.images[i].grid_size);
  }
  REQUIRE(back.dialogs.size() == ds.dialogs.size());
  for (std::size_t i = 0; i < ds.dialogs.size(); ++i) {
    const DialogRecord& a = ds.dialogs[i];
    const DialogRecord& b = back.dialogs[i];
    CHECK(a.image_id == b.image_id);
    CHECK(a.caption.tokens == b.caption.tokens);
    CHECK(a.caption.program == b.caption.program);
    CHECK(a.caption.spans == b.caption.spans);
    CHECK(a.caption.entities == b.caption.entities);
    REQUIRE(a.rounds.size() == b.rounds.size());
    for (std::size_t r = 0; r < a.rounds.size(); ++r)
      check_round_equal(a.rounds[r], b.rounds[r]);
  }
  const Manifest& m = ds.manifest;
  const Manifest& n = back.manifest;
  CHECK(m.seed == n.seed);
  CHECK(m.num_images == n.num_images);
  CHECK(m.dialogs_per_image == n.dialogs_per_image);
  CHECK(m.rounds_per_dialog == n.rounds_per_dialog);
  CHECK(m.grid_size == n.grid_size);
  CHECK(m.question_vocab == n.question_vocab);
  CHECK(m.answer_vocab == n.answer_vocab);
  CHECK(m.templates == n.templates);
  CHECK(m.answer_histograms == n.answer_histograms);
  CHECK(m.type_counts == n.type_counts);
  CHECK(m.train_images == n.train_images);
  CHECK(m.val_images == n.val_images);
  fs::remove_all(dir);
}

TEST_CASE("writing twice produces byte-identical files") {
  Dataset ds = small_dataset();
  std::string d1 = fresh_dir("bytes1");
  std::string d2 = fresh_dir("bytes2");
  write_dataset(ds, d1);
  write_dataset(ds, d2);
  for (const char* f : {"images.bin", "dialogs.jsonl", "manifest.json"})
    CHECK(slurp(d1 + "/" + f) == slurp(d2 + "/" + f));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("an empty dataset round-trips") {
  Dataset ds;
  ds.manifest.seed = 0;
  ds.manifest.grid_size = 4;
  ds.manifest.height = 112;
  ds.manifest.width = 112;
  ds.manifest.question_vocab = question_vocab();
  ds.manifest.answer_vocab = answer_vocab();
  std::string dir = fresh_dir("empty");
  write_dataset(ds, dir);
  Dataset back = read_dataset(dir);
  CHECK(back.images.empty());
  CHECK(back.dialogs.empty());
  fs::remove_all(dir);
}

TEST_CASE("a corrupted magic number is rejected by name") {
  Dataset ds = small_dataset();
  std::string dir = fresh_dir("magic");
  write_dataset(ds, dir);
  auto bytes = slurp(dir + "/images.bin");
  bytes[0] = 'X';
  spit(dir + "/images.bin", bytes);
  try {
    read_dataset(dir);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("GRDI") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("a bad version is rejected") {
  Dataset ds = small_dataset();
  std::string dir = fresh_dir("version");
  write_dataset(ds, dir);
  auto bytes = slurp(dir + "/images.bin");
  bytes[4] = 2;  // little-endian u32 version
  spit(dir + "/images.bin", bytes);
  try {
    read_dataset(dir);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("truncation reports the failing byte offset") {
  Dataset ds = small_dataset();
  std::string dir = fresh_dir("trunc");
  write_dataset(ds, dir);

  auto bytes = slurp(dir + "/images.bin");
  auto short_header = bytes;
  short_header.resize(10);  // cut inside the u32 image count at offset 8
  spit(dir + "/images.bin", short_header);
  try {
    read_dataset(dir);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 8);
  }

  auto short_pixels = bytes;
  short_pixels.resize(bytes.size() - 7);  // cut inside the pixel payload
  spit(dir + "/images.bin", short_pixels);
  try {
    read_dataset(dir);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 17);  // pixel payload begins after the 17-byte header
  }
  fs::remove_all(dir);
}

TEST_CASE("malformed dialog and manifest JSON are flagged with a location") {
  Dataset ds = small_dataset();
  std::string dir = fresh_dir("json");
  write_dataset(ds, dir);
  {
    std::ofstream f(dir + "/dialogs.jsonl", std::ios::app);
    f << "{not json at all\n";
  }
  try {
    read_dataset(dir);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line") != std::string::npos);
  }
  fs::remove_all(dir);

  dir = fresh_dir("json2");
  write_dataset(ds, dir);
  spit(dir + "/manifest.json", {'{', 'b', 'a', 'd'});
  CHECK_THROWS_AS(read_dataset(dir), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("a missing file is a usage error") {
  std::string dir = fresh_dir("missing");
  CHECK_THROWS_AS(read_dataset(dir), UsageError);
  fs::remove_all(dir);
}

TEST_CASE("the portable graymap writer emits a standard P5 header") {
  std::string dir = fresh_dir("pgm");
  std::vector<float> v = {0.0f, 0.5f, 1.0f, -0.25f, 2.0f, 0.25f};
  write_pgm(dir + "/m.pgm", v.data(), 2, 3);
  auto bytes = slurp(dir + "/m.pgm");
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 6);
  CHECK(std::string(bytes.begin(),
                    bytes.begin() + static_cast<long>(header.size())) == header);
  auto px = [&](int i) {
    return static_cast<unsigned char>(bytes[header.size() + static_cast<std::size_t>(i)]);
  };
  CHECK(px(0) == 0);
  CHECK(px(1) == 128);  // round(0.5 * 255)
  CHECK(px(2) == 255);
  CHECK(px(3) == 0);    // clamped below
  CHECK(px(4) == 255);  // clamped above
  CHECK(px(5) == 64);   // round(0.25 * 255)
  fs::remove_all(dir);
}

}  // TEST_SUITE
