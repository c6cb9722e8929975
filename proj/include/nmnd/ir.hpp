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

// The module-token language. Programs are finite sequences of module tokens
// in reverse Polish notation; a program is valid when stack simulation ends
// with exactly one context value. Everything here is a pure function over
// immutable values.

#include <string>
#include <string_view>
#include <vector>

#include "nmnd/common.hpp"

namespace nmnd {

/// Attention producers first, context producers last, so
/// `id >= kFirstContextModule` tests the output kind.
enum class Module : int {
  Find = 0,
  Relocate = 1,
  And = 2,
  Or = 3,
  Not = 4,
  Exclude = 5,
  Refer = 6,
  Exist = 7,
  Describe = 8,
  Count = 9,
};

inline constexpr int kModuleCount = 10;
inline constexpr int kFirstContextModule = static_cast<int>(Module::Exist);

/// Static description of one module token.
struct ModuleInfo {
  const char* name;
  int attention_arity;    // attention values popped from the stack
  bool context_output;    // pushes a context value (ends a valid program)
  bool needs_text;        // consumes an attended text vector
  bool needs_image;       // reads the image feature map
  bool needs_pool;        // reads the reference pool
};

const ModuleInfo& module_info(Module m);
inline const char* module_name(Module m) { return module_info(m).name; }
Module module_from_name(std::string_view name);  // throws LookupError

/// A program plus per-token supervision spans (word indices into the source
/// question, possibly empty for tokens that take no text).
struct Program {
  std::vector<Module> tokens;
  std::vector<std::vector<int>> spans;
};

struct ValidationResult {
  bool ok = false;
  std::string error;   // empty when ok
  int position = -1;   // offending token index (last index for end-state errors)
};

/// Stack simulation. Reports the first failure among: stack underflow,
/// a context value consumed mid-stream, dangling outputs, or a
/// non-context root.
ValidationResult validate(const std::vector<Module>& tokens);

/// Hierarchical layout recovered from a valid RPN sequence.
struct LayoutNode {
  Module token;
  int token_index = -1;                // position in the source sequence
  std::vector<LayoutNode> children;    // attention-producing subtrees
};

/// Deserialize a valid program into its layout tree; throws DomainError with
/// the validation message otherwise.
LayoutNode parse_rpn(const std::vector<Module>& tokens);

/// Post-order traversal of a layout tree (inverse of parse_rpn).
std::vector<Module> serialize(const LayoutNode& root);

/// Tokens that may be emitted with `stack` pending attention values and
/// `budget` tokens (including this one) left, such that a valid completion
/// still exists. Result is in canonical module order.
std::vector<Module> feasible_tokens(int stack, int budget);

/// feasible_tokens as a dense mask over module ids.
std::vector<char> feasible_mask(int stack, int budget);

/// Space-separated token names, e.g. "Find Find And Exist".
std::string format_program(const std::vector<Module>& tokens);
std::vector<Module> parse_program(std::string_view text);  // throws LookupError on bad names

}  // namespace nmnd
