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

#include <string>

#include "nmnd/griddata.hpp"

namespace nmnd {

/// Writes images.bin ("GRDI" magic), dialogs.jsonl, and manifest.json into
/// `dir` (created if absent). Throws UsageError when a file cannot be opened.
void write_dataset(const Dataset& ds, const std::string& dir);

/// Reads a dataset written by write_dataset. Cell attribute lists are not
/// persisted, so `cells` is empty on the images read back. Throws FormatError
/// (with byte offset for binary files, line number for JSON lines) on a bad
/// magic number, version, truncation, or malformed record; UsageError when a
/// file is missing.
Dataset read_dataset(const std::string& dir);

/// Writes a single-channel float map as a binary P5 portable graymap.
/// Values are clamped to [0, 1] and scaled to maxval 255.
void write_pgm(const std::string& path, const float* data, int height,
               int width);

}  // namespace nmnd
