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

// Run configuration: a flat key=value text file with a closed key set, so a
// typo is an error rather than a silently ignored setting. The parsed config
// is echoed verbatim (as JSON) into checkpoints and reports.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "nmnd/common.hpp"

namespace nmnd {

enum class DecoderKind { Classifier, Discriminative, Generative };

inline const char* decoder_name(DecoderKind d) {
  switch (d) {
    case DecoderKind::Classifier: return "classifier";
    case DecoderKind::Discriminative: return "discriminative";
    case DecoderKind::Generative: return "generative";
  }
  return "?";
}

inline DecoderKind parse_decoder(const std::string& s) {
  if (s == "classifier") return DecoderKind::Classifier;
  if (s == "discriminative") return DecoderKind::Discriminative;
  if (s == "generative") return DecoderKind::Generative;
  throw ConfigError("decoder must be classifier|discriminative|generative, got '" +
                    s + "'");
}

struct RunConfig {
  int embed_dim = 32;
  int lstm_hidden = 64;
  int lstm_layers = 1;
  int d_map = 64;
  double learning_rate = 1e-4;
  double grad_clip = 2.0;
  int batch_size = 32;
  int max_program_len = 8;
  bool use_memory = true;
  bool use_seq_delta = true;
  DecoderKind decoder = DecoderKind::Discriminative;
  double w_q_prog = 1.0;  // question program loss weight
  double w_c_prog = 1.0;  // caption program loss weight
  double w_c_aux = 1.0;   // caption alignment loss weight
  double w_a_dec = 1.0;   // answer decoder loss weight
  std::uint64_t seed = 1;
  int epochs = 10;
  int patience = 5;

  bool operator==(const RunConfig&) const = default;
};

/// Dimension and hyperparameter sanity: everything that sizes a tensor or
/// divides something must be positive; loss weights may be zero (the term is
/// skipped) but never negative.
inline void validate_config(const RunConfig& c) {
  auto positive = [](const char* key, double v) {
    if (!(v > 0))
      throw ConfigError(std::string(key) + " must be positive, got " +
                        std::to_string(v));
  };
  positive("embed_dim", c.embed_dim);
  positive("lstm_hidden", c.lstm_hidden);
  positive("lstm_layers", c.lstm_layers);
  positive("d_map", c.d_map);
  positive("learning_rate", c.learning_rate);
  positive("grad_clip", c.grad_clip);
  positive("batch_size", c.batch_size);
  positive("max_program_len", c.max_program_len);
  positive("epochs", c.epochs);
  positive("patience", c.patience);
  auto weight = [](const char* key, double v) {
    if (v < 0)
      throw ConfigError(std::string(key) + " must be >= 0, got " +
                        std::to_string(v));
  };
  weight("w_q_prog", c.w_q_prog);
  weight("w_c_prog", c.w_c_prog);
  weight("w_c_aux", c.w_c_aux);
  weight("w_a_dec", c.w_a_dec);
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline long long to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size())
    throw ConfigError(key + ": '" + v + "' is not an integer");
  return x;
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw ConfigError(key + ": '" + v + "' is not a number");
  return x;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean (true/false/1/0)");
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  std::uint64_t x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || (!v.empty() && v[0] == '-'))
    throw ConfigError(key + ": '" + v + "' is not an unsigned integer");
  return x;
}

}  // namespace detail

/// Parses key=value text. Lines may carry '#' comments; blank lines are
/// skipped. Unknown or duplicated keys are errors.
inline RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key=value, got '" + line + "'");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!seen.insert(key).second)
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" +
                        key + "'");
    if (key == "embed_dim") c.embed_dim = static_cast<int>(detail::to_int(key, value));
    else if (key == "lstm_hidden") c.lstm_hidden = static_cast<int>(detail::to_int(key, value));
    else if (key == "lstm_layers") c.lstm_layers = static_cast<int>(detail::to_int(key, value));
    else if (key == "d_map") c.d_map = static_cast<int>(detail::to_int(key, value));
    else if (key == "learning_rate") c.learning_rate = detail::to_double(key, value);
    else if (key == "grad_clip") c.grad_clip = detail::to_double(key, value);
    else if (key == "batch_size") c.batch_size = static_cast<int>(detail::to_int(key, value));
    else if (key == "max_program_len") c.max_program_len = static_cast<int>(detail::to_int(key, value));
    else if (key == "use_memory") c.use_memory = detail::to_bool(key, value);
    else if (key == "use_seq_delta") c.use_seq_delta = detail::to_bool(key, value);
    else if (key == "decoder") c.decoder = parse_decoder(value);
    else if (key == "w_q_prog") c.w_q_prog = detail::to_double(key, value);
    else if (key == "w_c_prog") c.w_c_prog = detail::to_double(key, value);
    else if (key == "w_c_aux") c.w_c_aux = detail::to_double(key, value);
    else if (key == "w_a_dec") c.w_a_dec = detail::to_double(key, value);
    else if (key == "seed") c.seed = detail::to_u64(key, value);
    else if (key == "epochs") c.epochs = static_cast<int>(detail::to_int(key, value));
    else if (key == "patience") c.patience = static_cast<int>(detail::to_int(key, value));
    else throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  validate_config(c);
  return c;
}

inline RunConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Canonical text form; parse_config(serialize_config(c)) == c.
inline std::string serialize_config(const RunConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "embed_dim=" << c.embed_dim << "\n"
      << "lstm_hidden=" << c.lstm_hidden << "\n"
      << "lstm_layers=" << c.lstm_layers << "\n"
      << "d_map=" << c.d_map << "\n"
      << "learning_rate=" << c.learning_rate << "\n"
      << "grad_clip=" << c.grad_clip << "\n"
      << "batch_size=" << c.batch_size << "\n"
      << "max_program_len=" << c.max_program_len << "\n"
      << "use_memory=" << (c.use_memory ? "true" : "false") << "\n"
      << "use_seq_delta=" << (c.use_seq_delta ? "true" : "false") << "\n"
      << "decoder=" << decoder_name(c.decoder) << "\n"
      << "w_q_prog=" << c.w_q_prog << "\n"
      << "w_c_prog=" << c.w_c_prog << "\n"
      << "w_c_aux=" << c.w_c_aux << "\n"
      << "w_a_dec=" << c.w_a_dec << "\n"
      << "seed=" << c.seed << "\n"
      << "epochs=" << c.epochs << "\n"
      << "patience=" << c.patience << "\n";
  return out.str();
}

/// The JSON echo stored in checkpoints and reports, keyed exactly like the
/// config file.
inline nlohmann::json config_to_json(const RunConfig& c) {
  return nlohmann::json{{"embed_dim", c.embed_dim},
                        {"lstm_hidden", c.lstm_hidden},
                        {"lstm_layers", c.lstm_layers},
                        {"d_map", c.d_map},
                        {"learning_rate", c.learning_rate},
                        {"grad_clip", c.grad_clip},
                        {"batch_size", c.batch_size},
                        {"max_program_len", c.max_program_len},
                        {"use_memory", c.use_memory},
                        {"use_seq_delta", c.use_seq_delta},
                        {"decoder", decoder_name(c.decoder)},
                        {"w_q_prog", c.w_q_prog},
                        {"w_c_prog", c.w_c_prog},
                        {"w_c_aux", c.w_c_aux},
                        {"w_a_dec", c.w_a_dec},
                        {"seed", c.seed},
                        {"epochs", c.epochs},
                        {"patience", c.patience}};
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.embed_dim = j.at("embed_dim").get<int>();
    c.lstm_hidden = j.at("lstm_hidden").get<int>();
    c.lstm_layers = j.at("lstm_layers").get<int>();
    c.d_map = j.at("d_map").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.max_program_len = j.at("max_program_len").get<int>();
    c.use_memory = j.at("use_memory").get<bool>();
    c.use_seq_delta = j.at("use_seq_delta").get<bool>();
    c.decoder = parse_decoder(j.at("decoder").get<std::string>());
    c.w_q_prog = j.at("w_q_prog").get<double>();
    c.w_c_prog = j.at("w_c_prog").get<double>();
    c.w_c_aux = j.at("w_c_aux").get<double>();
    c.w_a_dec = j.at("w_a_dec").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.epochs = j.at("epochs").get<int>();
    c.patience = j.at("patience").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config json: ") + e.what());
  }
  validate_config(c);
  return c;
}

}  // namespace nmnd
