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

// Command-line entry point. Subcommands: gen-data, train, eval, predict,
// inspect, selfcheck. Exit codes: 0 success, 2 bad input, 3 incompatible
// artifact, 4 missing lookup, 5 internal error.

#include <CLI11.hpp>

#include <iostream>

#include "nmnd/common.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Neural module network engine for grid-world visual dialog"};
  app.require_subcommand(1);

  CLI::App* cmd = app.add_subcommand("selfcheck", "Verify the build and environment");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (cmd->parsed()) {
      std::cout << "ok\n";
      return 0;
    }
  } catch (const nmnd::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nmnd::CompatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const nmnd::LookupError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 5;
  }
  return 0;
}
