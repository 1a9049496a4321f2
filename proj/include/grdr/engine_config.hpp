#pragma once

#include <set>
#include <string>
#include <vector>

#include "grdr/common.hpp"
#include "grdr/evalbench.hpp"
#include "grdr/model.hpp"
#include "grdr/synthgen.hpp"

namespace grdr {

struct SearchConfig {
  std::size_t beam_size = 100;
  std::size_t top_k = 10;
  std::size_t max_candidates = 150;  // rerank budget; 0 keeps every deduplicated candidate
  EvalSetting setting = EvalSetting::full_corpus;
  std::size_t warmup = 10;
  std::size_t latency_samples = 100;
};

/// Everything one pipeline run depends on. Paths are command-line arguments,
/// not configuration, so the hash identifies the experiment and not where it
/// was written.
struct EngineConfig {
  SynthConfig synth;
  TrainConfig train;
  SearchConfig search;
  std::vector<std::size_t> bench_sizes = {1000, 5000, 10000, 50000};
  std::size_t bench_queries = 100;
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw config_error(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw config_error("unknown key '" + k + "' in " + where);
}

/// 1-based line and column of a byte offset.
inline std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t offset) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(offset, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace detail

inline json to_json(const SearchConfig& c) {
  return json{{"beam_size", c.beam_size},  {"top_k", c.top_k}, {"max_candidates", c.max_candidates},
              {"setting", setting_name(c.setting)}, {"warmup", c.warmup}, {"latency_samples", c.latency_samples}};
}

inline SearchConfig search_config_from_json(const json& j) {
  detail::reject_unknown(j, {"beam_size", "top_k", "max_candidates", "setting", "warmup", "latency_samples"},
                         "search config");
  SearchConfig c;
  try {
    if (j.contains("beam_size")) j.at("beam_size").get_to(c.beam_size);
    if (j.contains("top_k")) j.at("top_k").get_to(c.top_k);
    if (j.contains("max_candidates")) j.at("max_candidates").get_to(c.max_candidates);
    if (j.contains("setting")) c.setting = setting_from_name(j.at("setting").get<std::string>());
    if (j.contains("warmup")) j.at("warmup").get_to(c.warmup);
    if (j.contains("latency_samples")) j.at("latency_samples").get_to(c.latency_samples);
  } catch (const json::exception& e) {
    throw config_error(std::string("search config: ") + e.what());
  }
  if (c.beam_size == 0) throw config_error("beam_size must be >= 1");
  if (c.top_k == 0) throw config_error("top_k must be >= 1");
  return c;
}

inline json to_json(const EngineConfig& c) {
  return json{{"synth", to_json(c.synth)},
              {"train", to_json(c.train)},
              {"search", to_json(c.search)},
              {"bench", {{"sizes", c.bench_sizes}, {"queries", c.bench_queries}}}};
}

inline EngineConfig engine_config_from_json(const json& j) {
  detail::reject_unknown(j, {"synth", "train", "search", "bench"}, "config");
  EngineConfig c;
  if (j.contains("synth")) c.synth = synth_config_from_json(j.at("synth"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("search")) c.search = search_config_from_json(j.at("search"));
  if (j.contains("bench")) {
    const auto& b = j.at("bench");
    detail::reject_unknown(b, {"sizes", "queries"}, "bench config");
    try {
      if (b.contains("sizes")) b.at("sizes").get_to(c.bench_sizes);
      if (b.contains("queries")) b.at("queries").get_to(c.bench_queries);
    } catch (const json::exception& e) {
      throw config_error(std::string("bench config: ") + e.what());
    }
    for (auto n : c.bench_sizes)
      if (n == 0) throw config_error("bench sizes must be >= 1");
    if (c.bench_queries == 0) throw config_error("bench queries must be >= 1");
  }
  c.train.validate();
  return c;
}

/// Parses config text; syntax errors carry the line and column.
inline EngineConfig parse_engine_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = detail::line_column(text, e.byte == 0 ? 0 : e.byte - 1);
    throw config_error("config JSON syntax error at line " + std::to_string(line) + ", column " +
                       std::to_string(col) + ": " + e.what());
  }
  return engine_config_from_json(j);
}

/// Hash of the fully resolved configuration (defaults included, keys sorted).
inline std::string config_hash(const EngineConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

}  // namespace grdr
