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
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "nmnd/checkpoint.hpp"

using namespace nmnd;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/nmnd_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

ParameterStore<float> make_store(float scale) {
  ParameterStore<float> store;
  auto& w = store.create("layer/w", Shape{2, 3});
  for (int i = 0; i < 6; ++i) w.value[i] = scale * (i + 1);
  w.m1.setConstant(0.25f * scale);
  w.m2.setConstant(0.125f * scale);
  auto& b = store.create("layer/b", Shape{2});
  b.value << -scale, scale;
  auto& stat = store.create("bn/mean", Shape{2}, /*trainable=*/false);
  stat.value << 7.0f * scale, 8.0f * scale;
  return store;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("save and restore reproduce values, moments, and step bit-for-bit") {
  TempFile f("roundtrip.nmnc");
  ParameterStore<float> store = make_store(1.0f);
  store.set_step(17);
  nlohmann::json meta;
  meta["optimizer_step"] = store.step();
  meta["config"] = {{"seed", 5}};
  save_checkpoint(f.path, meta, store);

  CheckpointData ckpt = load_checkpoint(f.path);
  CHECK(ckpt.metadata["config"]["seed"] == 5);
  // trainable tensors carry two moment records each
  CHECK(ckpt.tensors.size() == 2 * 3 + 1);

  ParameterStore<float> other = make_store(-3.0f);
  restore_store(ckpt, other);
  CHECK(other.step() == 17);
  for (int i = 0; i < 6; ++i) {
    CHECK(other.at("layer/w").value[i] == store.at("layer/w").value[i]);
    CHECK(other.at("layer/w").m1[i] == store.at("layer/w").m1[i]);
    CHECK(other.at("layer/w").m2[i] == store.at("layer/w").m2[i]);
  }
  CHECK(other.at("bn/mean").value[1] == 8.0f);

  // Saving the restored store yields a byte-identical file.
  TempFile f2("roundtrip2.nmnc");
  nlohmann::json meta2;
  meta2["optimizer_step"] = other.step();
  meta2["config"] = {{"seed", 5}};
  save_checkpoint(f2.path, meta2, other);
  std::ifstream a(f.path, std::ios::binary), b(f2.path, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}

TEST_CASE("record order is lexicographic by parameter name") {
  TempFile f("order.nmnc");
  ParameterStore<float> store;
  store.create("zz", Shape{1});
  store.create("aa", Shape{1});
  save_checkpoint(f.path, nlohmann::json::object(), store);
  CheckpointData ckpt = load_checkpoint(f.path);
  REQUIRE(ckpt.tensors.size() == 6);
  CHECK(ckpt.tensors[0].first == "aa");
  CHECK(ckpt.tensors[3].first == "zz");
}

TEST_CASE("bad magic is a format error") {
  TempFile f("magic.nmnc");
  std::ofstream(f.path, std::ios::binary) << "JUNKthisisnotacheckpoint";
  CHECK_THROWS_AS(load_checkpoint(f.path), FormatError);
}

TEST_CASE("unsupported version is a compatibility error") {
  TempFile f("version.nmnc");
  {
    std::string data = "NMNC";
    data += '\x02';
    data += std::string(3, '\0');  // version 2 LE
    data += std::string(4, '\0');  // metadata length 0
    std::ofstream(f.path, std::ios::binary) << data;
  }
  CHECK_THROWS_AS(load_checkpoint(f.path), CompatError);
}

TEST_CASE("truncated files report the failing offset") {
  TempFile f("trunc.nmnc");
  ParameterStore<float> store = make_store(1.0f);
  save_checkpoint(f.path, nlohmann::json::object(), store);
  std::string data;
  {
    std::ifstream in(f.path, std::ios::binary);
    data.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }
  std::ofstream(f.path, std::ios::binary | std::ios::trunc)
      << data.substr(0, data.size() - 5);
  try {
    load_checkpoint(f.path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() > 0);
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }
}

TEST_CASE("metadata must be valid JSON") {
  TempFile f("meta.nmnc");
  {
    std::string data = "NMNC";
    data += '\x01';
    data += std::string(3, '\0');
    data += '\x03';
    data += std::string(3, '\0');
    data += "{x[";
    std::ofstream(f.path, std::ios::binary) << data;
  }
  CHECK_THROWS_AS(load_checkpoint(f.path), FormatError);
}

TEST_CASE("restore rejects shape and coverage mismatches") {
  TempFile f("mismatch.nmnc");
  ParameterStore<float> store = make_store(1.0f);
  save_checkpoint(f.path, nlohmann::json::object(), store);
  CheckpointData ckpt = load_checkpoint(f.path);

  SUBCASE("missing tensor") {
    ParameterStore<float> other;
    other.create("layer/w", Shape{2, 3});
    other.create("layer/extra", Shape{1});
    CHECK_THROWS_AS(restore_store(ckpt, other), CompatError);
  }
  SUBCASE("wrong shape") {
    ParameterStore<float> other;
    other.create("layer/w", Shape{3, 2});
    other.create("layer/b", Shape{2});
    other.create("bn/mean", Shape{2}, false);
    CHECK_THROWS_AS(restore_store(ckpt, other), CompatError);
  }
  SUBCASE("leftover checkpoint tensors") {
    ParameterStore<float> other;
    other.create("layer/b", Shape{2});
    CHECK_THROWS_AS(restore_store(ckpt, other), CompatError);
  }
}

TEST_CASE("missing file is a usage error") {
  CHECK_THROWS_AS(load_checkpoint("/tmp/nmnd_does_not_exist.nmnc"), UsageError);
}

}  // TEST_SUITE
