// grdr: data generation, training, tokenization, indexing, retrieval,
// evaluation and benchmarking from one binary.
//
// Exit codes: 0 ok, 2 configuration or usage error, 3 I/O or file format
// error, 4 numerical abort (non-finite loss).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "grdr/cotrainer.hpp"
#include "grdr/engine_config.hpp"
#include "grdr/evalbench.hpp"
#include "grdr/search.hpp"
#include "grdr/synthgen.hpp"
#include "grdr/tokenizer.hpp"
#include "grdr/trie_index.hpp"

namespace fs = std::filesystem;
using namespace grdr;

namespace {

constexpr int kExitOk = 0, kExitConfig = 2, kExitIo = 3, kExitNumerical = 4;

int exit_code(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::config:
    case ErrorCategory::invalid_argument:
      return kExitConfig;
    case ErrorCategory::io:
    case ErrorCategory::format:
      return kExitIo;
    case ErrorCategory::numerical:
      return kExitNumerical;
  }
  return kExitConfig;
}

EngineConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  return parse_engine_config(read_file(path));
}

void write_json(const std::string& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

std::string join(const fs::path& dir, const char* name) { return (dir / name).string(); }

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw io_error("missing input file: " + path);
}

// Data directory layout written by gen-data.
constexpr const char* kVideos = "videos.grdv";
constexpr const char* kQueries = "queries.grdq";
constexpr const char* kTrainVideos = "train_videos.grdv";
constexpr const char* kTrainQueries = "train_queries.grdq";
constexpr const char* kTestVideos = "test_videos.grdv";
constexpr const char* kTestQueries = "test_queries.grdq";
constexpr const char* kDiagnostics = "diagnostics.jsonl";
constexpr const char* kManifest = "manifest.json";

struct Options {
  std::string config, data, out, checkpoint, index, videos, queries, resume, csv;
  std::optional<std::size_t> beam_size, top_k, max_candidates;
  std::optional<std::string> setting;
  bool measure_latency = false;
};

void apply_overrides(EngineConfig& c, const Options& o) {
  if (o.beam_size) c.search.beam_size = *o.beam_size;
  if (o.top_k) c.search.top_k = *o.top_k;
  if (o.max_candidates) c.search.max_candidates = *o.max_candidates;
  if (o.setting) c.search.setting = setting_from_name(*o.setting);
  if (c.search.beam_size == 0) throw config_error("--beam-size must be >= 1");
  if (c.search.top_k == 0) throw config_error("--top-k must be >= 1");
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Options& o) {
  const auto cfg = load_config(o.config);
  const auto hash = config_hash(cfg);
  const fs::path dir(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());
  const auto corpus = generate(cfg.synth);
  const auto parts = split(corpus, cfg.synth.train_fraction, cfg.synth.seed);
  save_store(corpus.videos, join(dir, kVideos));
  save_store(corpus.queries, join(dir, kQueries));
  save_store(parts.train.videos, join(dir, kTrainVideos));
  save_store(parts.train.queries, join(dir, kTrainQueries));
  save_store(parts.test.videos, join(dir, kTestVideos));
  save_store(parts.test.queries, join(dir, kTestQueries));
  write_file(join(dir, kDiagnostics), diagnostics_jsonl(corpus));
  write_json(join(dir, kManifest), json{{"config_hash", hash},
                                        {"config", to_json(cfg)},
                                        {"videos", corpus.videos.size()},
                                        {"queries", corpus.queries.size()},
                                        {"train_videos", parts.train.videos.size()},
                                        {"test_videos", parts.test.videos.size()}});
  std::printf("wrote %zu videos, %zu queries to %s (config %s)\n", corpus.videos.size(), corpus.queries.size(),
              dir.string().c_str(), hash.c_str());
  return kExitOk;
}

int cmd_train(const Options& o) {
  const auto cfg = load_config(o.config);
  const auto hash = config_hash(cfg);
  const fs::path dir(o.data);
  const auto vpath = join(dir, kTrainVideos), qpath = join(dir, kTrainQueries);
  require_file(vpath);
  require_file(qpath);
  const auto videos = load_store(vpath, StoreKind::video);
  const auto queries = load_store(qpath, StoreKind::query);

  TrainState s;
  if (!o.resume.empty()) {
    s = load_checkpoint(o.resume);
    if (s.progress.phase == Phase::done) std::printf("checkpoint %s is already complete\n", o.resume.c_str());
  } else {
    s = init_state(videos.dimension(), cfg.train);
    s.provenance = hash;
  }
  TrainHooks hooks;
  hooks.on_epoch = [](const EpochLog& e) {
    std::printf("layer %u %-7s epoch %u  batches %zu  total %.5f  ce %.4f  hc %.4f  rq %.4f  rec %.4f  cl %.4f\n",
                e.layer + 1, phase_name(e.phase), e.epoch + 1, e.batches, e.mean.total, e.mean.ce, e.mean.hc,
                e.mean.rq, e.mean.rec, e.mean.cl);
    std::fflush(stdout);
  };
  hooks.on_layer_done = [&](const TrainState& st) { save_checkpoint(st, o.out); };
  hooks.on_nan = [&](const TrainState& st) { save_checkpoint(st, o.out + ".nan"); };
  resume_training(s, videos, queries, hooks);
  save_checkpoint(s, o.out);
  std::printf("checkpoint %s  steps %llu  view similarity %.4f\n", o.out.c_str(),
              static_cast<unsigned long long>(s.progress.step), view_similarity(s.params, videos));
  return kExitOk;
}

int cmd_tokenize(const Options& o) {
  require_file(o.checkpoint);
  require_file(o.videos);
  const auto s = load_checkpoint(o.checkpoint);
  const auto videos = load_store(o.videos, StoreKind::video);
  write_file(o.out, format_semantic_ids(tokenize_corpus(videos, s.params)));
  return kExitOk;
}

int cmd_index(const Options& o) {
  require_file(o.checkpoint);
  require_file(o.videos);
  const auto s = load_checkpoint(o.checkpoint);
  const auto videos = load_store(o.videos, StoreKind::video);
  const auto trie = build_trie(tokenize_corpus(videos, s.params), s.params.num_layers, s.params.codebook_size);
  save_index(trie, o.out);
  const auto storage = storage_report(trie, videos.dimension(), 12);
  write_json(o.out + ".json", json{{"config_hash", s.provenance},
                                   {"videos", trie.video_count()},
                                   {"leaves", trie.leaf_count()},
                                   {"postings", trie.posting_count()},
                                   {"nodes", trie.node_count()},
                                   {"storage", to_json(storage)}});
  std::printf("indexed %zu videos: %zu leaves, %zu postings, %zu bytes\n", trie.video_count(), trie.leaf_count(),
              trie.posting_count(), storage.index_bytes);
  return kExitOk;
}

struct LoadedEngine {
  TrainState state;
  TrieIndex trie;
  FeatureStore videos{StoreKind::video, 1};
  Engine engine;
};

/// Loads the model and pool; builds the index in memory when no file is given.
std::unique_ptr<LoadedEngine> load_engine(const Options& o, const EngineConfig& cfg) {
  require_file(o.checkpoint);
  require_file(o.videos);
  auto le = std::make_unique<LoadedEngine>();
  le->state = load_checkpoint(o.checkpoint);
  le->videos = load_store(o.videos, StoreKind::video);
  if (!o.index.empty()) {
    require_file(o.index);
    le->trie = load_index(o.index);
  } else {
    le->trie = build_trie(tokenize_corpus(le->videos, le->state.params), le->state.params.num_layers,
                          le->state.params.codebook_size);
  }
  for (const auto& [id, list] : le->trie.leaves())
    for (const auto& p : *list)
      if (!le->videos.contains(p.video_id))
        throw invalid_argument("index posting for video " + std::to_string(p.video_id) + " is not in " + o.videos);
  le->engine = Engine{&le->state.params, &le->trie, &le->videos, {}, cfg.search.max_candidates};
  return le;
}

int cmd_search(const Options& o) {
  auto cfg = load_config(o.config);
  apply_overrides(cfg, o);
  const auto hash = config_hash(cfg);
  require_file(o.queries);
  const auto le = load_engine(o, cfg);
  const auto queries = load_store(o.queries, StoreKind::query);
  // Queries run one at a time; with --measure-latency a warm-up pass runs first
  // so every reported timing is a steady-state, batch-1 measurement.
  if (o.measure_latency)
    for (std::size_t i = 0; i < std::min(cfg.search.warmup, queries.size()); ++i)
      retrieve(queries.row(i), le->engine, cfg.search.beam_size, cfg.search.top_k);
  std::string out;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto r = retrieve(queries.row(q), le->engine, cfg.search.beam_size, cfg.search.top_k);
    auto j = result_json(queries.id(q), r);
    j["config_hash"] = hash;
    if (!o.measure_latency) {
      j.erase("t_recall_ms");
      j.erase("t_rerank_ms");
      j.erase("t_latency_ms");
    }
    out += j.dump() + "\n";
  }
  write_file(o.out, out);
  std::printf("searched %zu queries (beam %zu, top %zu)\n", queries.size(), cfg.search.beam_size, cfg.search.top_k);
  return kExitOk;
}

int cmd_eval(const Options& o) {
  auto cfg = load_config(o.config);
  apply_overrides(cfg, o);
  const auto hash = config_hash(cfg);
  require_file(o.queries);
  const auto le = load_engine(o, cfg);
  const auto queries = load_store(o.queries, StoreKind::query);
  EvalOptions eo;
  eo.setting = cfg.search.setting;
  eo.beam_size = cfg.search.beam_size;
  eo.warmup = cfg.search.warmup;
  eo.min_latency_samples = cfg.search.latency_samples;
  const auto report = run_eval(le->engine, queries, eo);
  auto j = to_json(report);
  j["config_hash"] = hash;
  j["checkpoint_config_hash"] = le->state.provenance;
  j["max_candidates"] = cfg.search.max_candidates;
  if (!o.out.empty()) write_json(o.out, j);
  std::fputs(report_text(report).c_str(), stdout);
  return kExitOk;
}

int cmd_bench(const Options& o) {
  auto cfg = load_config(o.config);
  apply_overrides(cfg, o);
  const auto hash = config_hash(cfg);
  require_file(o.checkpoint);
  const auto s = load_checkpoint(o.checkpoint);
  if (cfg.synth.dim != s.params.feature_dim)
    throw config_error("synth.dim " + std::to_string(cfg.synth.dim) + " does not match the checkpoint's feature dim " +
                       std::to_string(s.params.feature_dim));
  // The factory keeps the current corpus alive until the next size is built.
  std::unique_ptr<SynthCorpus> corpus;
  std::unique_ptr<TrieIndex> trie;
  auto factory = [&](std::size_t n) {
    auto sc = cfg.synth;
    sc.n_videos = static_cast<std::uint32_t>(n);
    corpus = std::make_unique<SynthCorpus>(generate(sc));
    trie = std::make_unique<TrieIndex>(
        build_trie(tokenize_corpus(corpus->videos, s.params), s.params.num_layers, s.params.codebook_size));
    std::fprintf(stderr, "bench: N=%zu built (%zu leaves)\n", n, trie->leaf_count());
    return BenchSetup{Engine{&s.params, trie.get(), &corpus->videos, {}, cfg.search.max_candidates}, &corpus->queries};
  };
  ScalingOptions so;
  so.beam_size = cfg.search.beam_size;
  so.top_k = cfg.search.top_k;
  so.warmup = cfg.search.warmup;
  so.queries = cfg.bench_queries;
  const auto rows = scaling_bench(cfg.bench_sizes, factory, so);
  std::vector<double> x, yd, yr;
  json table = json::array();
  std::printf("%10s %14s %16s %14s\n", "N", "recall ms", "dense scan ms", "decode steps");
  for (const auto& r : rows) {
    x.push_back(static_cast<double>(r.n));
    yd.push_back(r.t_dense_scan_ms);
    yr.push_back(r.t_recall_ms);
    table.push_back({{"n", r.n}, {"t_recall_ms", r.t_recall_ms}, {"t_dense_scan_ms", r.t_dense_scan_ms},
                     {"decode_steps", r.decode_steps}});
    std::printf("%10zu %14.4f %16.4f %14.1f\n", r.n, r.t_recall_ms, r.t_dense_scan_ms, r.decode_steps);
  }
  json j{{"config_hash", hash}, {"rows", table}};
  if (rows.size() >= 2) {
    const auto fd = linear_fit(x, yd), fr = linear_fit(x, yr);
    j["dense_fit"] = {{"slope", fd.slope}, {"intercept", fd.intercept}, {"r2", fd.r2}};
    j["recall_fit"] = {{"slope", fr.slope}, {"intercept", fr.intercept}, {"r2", fr.r2}};
    std::printf("dense scan fit: slope %.3g ms/video, R^2 %.4f\n", fd.slope, fd.r2);
  }
  if (!o.out.empty()) write_json(o.out, j);
  if (!o.csv.empty()) {
    write_file(o.csv, scaling_csv(rows));
    write_json(o.csv + ".json", json{{"config_hash", hash}});
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative multi-view video retrieval"};
  app.require_subcommand(1);
  Options o;

  auto add_search_flags = [&](CLI::App* c) {
    c->add_option("--beam-size", o.beam_size, "Beam width (default 100, or search.beam_size from --config)");
    c->add_option("--top-k", o.top_k, "Results per query (default 10)");
    c->add_option("--max-candidates", o.max_candidates,
                  "Rerank budget in deduplicated videos, 0 for all (default 150)");
  };
  auto add_engine_inputs = [&](CLI::App* c) {
    c->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
    c->add_option("--videos", o.videos, "Video feature store forming the search pool")->required();
    c->add_option("--queries", o.queries, "Query feature store")->required();
    c->add_option("--index", o.index, "Index file (built in memory from --videos when omitted)");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-facet corpus and its split");
  gen->add_option("--config", o.config, "JSON config (defaults when omitted)");
  gen->add_option("--out", o.out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Progressive co-training on the data directory's training split");
  tr->add_option("--config", o.config, "JSON config (defaults when omitted)");
  tr->add_option("--data", o.data, "Directory written by gen-data")->required();
  tr->add_option("--out", o.out, "Checkpoint path, rewritten after every layer")->required();
  tr->add_option("--resume", o.resume, "Continue from this checkpoint instead of starting fresh");

  auto* tok = app.add_subcommand("tokenize", "Write every video's semantic ids as text");
  tok->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  tok->add_option("--videos", o.videos, "Video feature store")->required();
  tok->add_option("--out", o.out, "Output text file")->required();

  auto* idx = app.add_subcommand("index", "Tokenize videos and build the prefix-tree index");
  idx->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  idx->add_option("--videos", o.videos, "Video feature store")->required();
  idx->add_option("--out", o.out, "Index path (a .json summary is written next to it)")->required();

  auto* se = app.add_subcommand("search", "Retrieve and rerank for every query");
  se->add_option("--config", o.config, "JSON config (defaults when omitted)");
  add_engine_inputs(se);
  add_search_flags(se);
  se->add_option("--out", o.out, "Results as JSON lines")->required();
  se->add_flag("--measure-latency", o.measure_latency, "Warm up, then record per-query timings");

  auto* ev = app.add_subcommand("eval", "Recall@K, latency and storage report");
  ev->add_option("--config", o.config, "JSON config (defaults when omitted)");
  add_engine_inputs(ev);
  add_search_flags(ev);
  ev->add_option("--setting", o.setting, "inductive or full_corpus (label for the pool given by --videos)");
  ev->add_option("--out", o.out, "Report JSON path");

  auto* be = app.add_subcommand("bench", "Recall latency against an exhaustive dense scan as N grows");
  be->add_option("--config", o.config, "JSON config; synth.* and bench.sizes drive the corpora");
  be->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  add_search_flags(be);
  be->add_option("--out", o.out, "Report JSON path");
  be->add_option("--emit-csv", o.csv, "Scaling table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*tr) return cmd_train(o);
    if (*tok) return cmd_tokenize(o);
    if (*idx) return cmd_index(o);
    if (*se) return cmd_search(o);
    if (*ev) return cmd_eval(o);
    if (*be) return cmd_bench(o);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
  return kExitConfig;
}
