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
#include "nmnd/ir.hpp"

#include <array>
#include <sstream>

namespace nmnd {
namespace {

constexpr std::array<ModuleInfo, kModuleCount> kModules = {{
    // name       arity  ctx    text   image  pool
    {"Find", 0, false, true, true, false},
    {"Relocate", 1, false, true, true, false},
    {"And", 2, false, false, false, false},
    {"Or", 2, false, false, false, false},
    {"Not", 1, false, false, false, false},
    {"Exclude", 1, false, true, true, false},
    {"Refer", 0, false, true, false, true},
    {"Exist", 1, true, false, false, false},
    {"Describe", 1, true, true, true, false},
    {"Count", 1, true, false, false, false},
}};

}  // namespace

const ModuleInfo& module_info(Module m) {
  int id = static_cast<int>(m);
  if (id < 0 || id >= kModuleCount) throw LookupError("unknown module id " + std::to_string(id));
  return kModules[id];
}

Module module_from_name(std::string_view name) {
  for (int i = 0; i < kModuleCount; ++i)
    if (name == kModules[i].name) return static_cast<Module>(i);
  throw LookupError("unknown module name '" + std::string(name) + "'");
}

ValidationResult validate(const std::vector<Module>& tokens) {
  ValidationResult r;
  if (tokens.empty()) {
    r.error = "empty program";
    r.position = 0;
    return r;
  }
  // Stack of output kinds: false = attention, true = context.
  std::vector<bool> stack;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    const ModuleInfo& info = module_info(tokens[i]);
    if (static_cast<int>(stack.size()) < info.attention_arity) {
      r.error = "stack underflow: '" + std::string(info.name) + "' needs " +
                std::to_string(info.attention_arity) + " attention inputs but only " +
                std::to_string(stack.size()) + " available";
      r.position = i;
      return r;
    }
    for (int k = 0; k < info.attention_arity; ++k) {
      if (stack.back()) {
        r.error = "context value consumed mid-stream by '" + std::string(info.name) + "'";
        r.position = i;
        return r;
      }
      stack.pop_back();
    }
    stack.push_back(info.context_output);
  }
  int last = static_cast<int>(tokens.size()) - 1;
  if (stack.size() > 1) {
    r.error = "dangling outputs: " + std::to_string(stack.size()) +
              " values remain after the final token";
    r.position = last;
    return r;
  }
  if (!stack.back()) {
    r.error = "non-context root: program ends with an attention value";
    r.position = last;
    return r;
  }
  r.ok = true;
  r.position = -1;
  return r;
}

LayoutNode parse_rpn(const std::vector<Module>& tokens) {
  ValidationResult vr = validate(tokens);
  if (!vr.ok)
    throw DomainError("invalid program at token " + std::to_string(vr.position) + ": " + vr.error);
  std::vector<LayoutNode> stack;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    const ModuleInfo& info = module_info(tokens[i]);
    LayoutNode node;
    node.token = tokens[i];
    node.token_index = i;
    node.children.resize(info.attention_arity);
    for (int k = info.attention_arity - 1; k >= 0; --k) {
      node.children[k] = std::move(stack.back());
      stack.pop_back();
    }
    stack.push_back(std::move(node));
  }
  return std::move(stack.back());
}

namespace {
void serialize_into(const LayoutNode& node, std::vector<Module>& out) {
  for (const LayoutNode& child : node.children) serialize_into(child, out);
  out.push_back(node.token);
}
}  // namespace

std::vector<Module> serialize(const LayoutNode& root) {
  std::vector<Module> out;
  serialize_into(root, out);
  return out;
}

std::vector<char> feasible_mask(int stack, int budget) {
  if (stack < 0) throw UsageError("feasible_mask: negative stack");
  if (budget < 1) throw UsageError("feasible_mask: budget must be at least 1");
  std::vector<char> mask(kModuleCount, 0);
  for (int i = 0; i < kModuleCount; ++i) {
    const ModuleInfo& info = kModules[i];
    if (info.context_output) {
      // A context token ends the program; it must consume the whole stack.
      mask[i] = (stack == info.attention_arity) ? 1 : 0;
    } else {
      if (info.attention_arity > stack) continue;
      // After emitting: stack' pending attentions. The shortest completion
      // pairs them down with binary reducers and ends with one context
      // token, i.e. exactly stack' further tokens.
      int after = stack - info.attention_arity + 1;
      if (after <= budget - 1) mask[i] = 1;
    }
  }
  return mask;
}

std::vector<Module> feasible_tokens(int stack, int budget) {
  std::vector<char> mask = feasible_mask(stack, budget);
  std::vector<Module> out;
  for (int i = 0; i < kModuleCount; ++i)
    if (mask[i]) out.push_back(static_cast<Module>(i));
  return out;
}

std::string format_program(const std::vector<Module>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += module_name(tokens[i]);
  }
  return out;
}

std::vector<Module> parse_program(std::string_view text) {
  std::vector<Module> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) out.push_back(module_from_name(word));
  return out;
}

}  // namespace nmnd
