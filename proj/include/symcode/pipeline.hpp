#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "symcode/analysis.hpp"
#include "symcode/backends.hpp"
#include "symcode/corpus.hpp"
#include "symcode/distillation.hpp"
#include "symcode/embedding.hpp"
#include "symcode/error.hpp"
#include "symcode/http.hpp"
#include "symcode/metrics.hpp"
#include "symcode/oracle.hpp"
#include "symcode/prompting.hpp"

namespace symcode {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct BackendConfig {
  std::string kind = "openai";  // openai | mock-oracle | mock-echo
  std::string base_url = "https://api.openai.com";
  std::string api_key_env = "OPENAI_API_KEY";
  InferenceParams params;
  int retries = 3;
  long long backoff_ms = 1000;
  double rps = 0.0;  // 0 disables the token bucket
  bool retry_on_truncation = false;
  long long timeout_s = 120;
  NoiseProfile noise;     // mock-oracle only
  std::string echo_text;  // mock-echo only
};

struct EmbedderConfig {
  std::string kind = "offline";  // offline | remote
  std::string model = "text-embedding-3-small";
  size_t dimension = OfflineEmbedder::kDefaultDimension;
};

struct TemplatePaths {
  std::optional<std::filesystem::path> taco;
  std::optional<std::filesystem::path> tasi_phase1;
  std::optional<std::filesystem::path> tasi_phase2;
};

struct RunConfig {
  std::filesystem::path dataset;
  std::string strategy = "taco";  // taco | tasi | both
  BackendConfig backend;
  EmbedderConfig embedder;
  double fuzzy_threshold = kDefaultFuzzyThreshold;
  size_t concurrency = 4;
  std::filesystem::path cache_dir = "cache";
  std::filesystem::path output_dir = "out";
  TemplatePaths templates;

  std::vector<Strategy> strategies() const {
    if (strategy == "both") return {Strategy::taco, Strategy::tasi};
    return {parse_strategy(strategy)};
  }

  void validate() const {
    if (dataset.empty()) throw Error(Errc::config, "no dataset path configured");
    if (!std::filesystem::is_regular_file(dataset)) throw Error(Errc::config, "dataset not found: " + dataset.string());
    if (strategy != "taco" && strategy != "tasi" && strategy != "both")
      throw Error(Errc::config, "strategy must be taco, tasi or both (got '" + strategy + "')");
    if (backend.kind != "openai" && backend.kind != "mock-oracle" && backend.kind != "mock-echo")
      throw Error(Errc::config, "backend.kind must be openai, mock-oracle or mock-echo (got '" + backend.kind + "')");
    if (embedder.kind != "offline" && embedder.kind != "remote")
      throw Error(Errc::config, "embedder.kind must be offline or remote (got '" + embedder.kind + "')");
    if (embedder.dimension == 0) throw Error(Errc::config, "embedder.dimension must be positive");
    if (!(fuzzy_threshold > 0.0 && fuzzy_threshold <= 1.0))
      throw Error(Errc::config, "fuzzy_threshold must lie in (0, 1]");
    if (concurrency < 1) throw Error(Errc::config, "concurrency must be at least 1");
    if (backend.retries < 0) throw Error(Errc::config, "backend.retries must be non-negative");
    if (backend.backoff_ms < 0) throw Error(Errc::config, "backend.backoff_ms must be non-negative");
    if (backend.rps < 0) throw Error(Errc::config, "backend.rps must be non-negative");
    if (backend.timeout_s <= 0) throw Error(Errc::config, "backend.timeout_s must be positive");
    try {
      backend.params.validate();
      backend.noise.validate();
    } catch (const Error& e) {
      throw Error(Errc::config, e.message());
    }
    for (const auto* p : {&templates.taco, &templates.tasi_phase1, &templates.tasi_phase2})
      if (*p && !std::filesystem::is_regular_file(**p)) throw Error(Errc::config, "template not found: " + (*p)->string());
  }
};

namespace config_detail {

using json = nlohmann::json;

template <class T>
void read(const json& obj, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw Error(Errc::config, std::string("config key '") + key + "' has the wrong type");
  }
}

inline void read_path(const json& obj, const char* key, const std::filesystem::path& base, std::filesystem::path& out) {
  std::string s;
  read(obj, key, s);
  if (s.empty()) return;
  std::filesystem::path p(s);
  out = p.is_absolute() ? p : base / p;
}

inline void read_path(const json& obj, const char* key, const std::filesystem::path& base,
                      std::optional<std::filesystem::path>& out) {
  std::filesystem::path p;
  read_path(obj, key, base, p);
  if (!p.empty()) out = p;
}

inline void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [k, _] : obj.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
      throw Error(Errc::config, "unknown key '" + k + "' in " + where);
  }
}

}  // namespace config_detail

/// Parses a JSON config document. Relative paths resolve against `base`.
inline RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base = {}) {
  using namespace config_detail;
  if (!doc.is_object()) throw Error(Errc::config, "config must be a JSON object");
  reject_unknown(doc,
                 {"dataset", "strategy", "backend", "embedder", "fuzzy_threshold", "concurrency", "cache_dir", "output_dir",
                  "templates"},
                 "config");
  if (doc.contains("api_key"))
    throw Error(Errc::config, "api keys are read from the environment only");
  RunConfig c;
  read_path(doc, "dataset", base, c.dataset);
  read(doc, "strategy", c.strategy);
  read(doc, "fuzzy_threshold", c.fuzzy_threshold);
  long long concurrency = static_cast<long long>(c.concurrency);
  read(doc, "concurrency", concurrency);
  if (concurrency < 1) throw Error(Errc::config, "concurrency must be at least 1");
  c.concurrency = static_cast<size_t>(concurrency);
  c.cache_dir = base / c.cache_dir;
  c.output_dir = base / c.output_dir;
  read_path(doc, "cache_dir", base, c.cache_dir);
  read_path(doc, "output_dir", base, c.output_dir);

  if (auto it = doc.find("backend"); it != doc.end()) {
    const json& b = *it;
    reject_unknown(b,
                   {"kind", "base_url", "api_key_env", "model", "max_new_tokens", "temperature", "retries", "backoff_ms",
                    "rps", "retry_on_truncation", "timeout_s", "noise", "echo_text"},
                   "backend");
    read(b, "kind", c.backend.kind);
    read(b, "base_url", c.backend.base_url);
    read(b, "api_key_env", c.backend.api_key_env);
    read(b, "model", c.backend.params.model);
    read(b, "max_new_tokens", c.backend.params.max_new_tokens);
    read(b, "temperature", c.backend.params.temperature);
    read(b, "retries", c.backend.retries);
    read(b, "backoff_ms", c.backend.backoff_ms);
    read(b, "rps", c.backend.rps);
    read(b, "retry_on_truncation", c.backend.retry_on_truncation);
    read(b, "timeout_s", c.backend.timeout_s);
    read(b, "echo_text", c.backend.echo_text);
    if (auto n = b.find("noise"); n != b.end()) {
      reject_unknown(*n, {"drop_terms", "add_spurious", "perturb_mentions"}, "backend.noise");
      read(*n, "drop_terms", c.backend.noise.drop_terms);
      read(*n, "add_spurious", c.backend.noise.add_spurious);
      read(*n, "perturb_mentions", c.backend.noise.perturb_mentions);
    }
  }
  if (auto it = doc.find("embedder"); it != doc.end()) {
    if (it->is_string()) {
      c.embedder.kind = it->get<std::string>();
    } else {
      reject_unknown(*it, {"kind", "model", "dimension"}, "embedder");
      read(*it, "kind", c.embedder.kind);
      read(*it, "model", c.embedder.model);
      read(*it, "dimension", c.embedder.dimension);
    }
  }
  if (auto it = doc.find("templates"); it != doc.end()) {
    reject_unknown(*it, {"taco", "tasi_phase1", "tasi_phase2"}, "templates");
    read_path(*it, "taco", base, c.templates.taco);
    read_path(*it, "tasi_phase1", base, c.templates.tasi_phase1);
    read_path(*it, "tasi_phase2", base, c.templates.tasi_phase2);
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::config, "cannot open config " + path.string());
  auto doc = nlohmann::json::parse(in, nullptr, false, true);
  if (doc.is_discarded()) throw Error(Errc::config, "config " + path.string() + " is not valid JSON");
  return parse_config(doc, path.parent_path());
}

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json t = nlohmann::ordered_json::object();
  if (c.templates.taco) t["taco"] = c.templates.taco->string();
  if (c.templates.tasi_phase1) t["tasi_phase1"] = c.templates.tasi_phase1->string();
  if (c.templates.tasi_phase2) t["tasi_phase2"] = c.templates.tasi_phase2->string();
  return {{"dataset", c.dataset.string()},
          {"strategy", c.strategy},
          {"backend",
           {{"kind", c.backend.kind},
            {"base_url", c.backend.base_url},
            {"api_key_env", c.backend.api_key_env},
            {"model", c.backend.params.model},
            {"max_new_tokens", c.backend.params.max_new_tokens},
            {"temperature", c.backend.params.temperature},
            {"retries", c.backend.retries},
            {"backoff_ms", c.backend.backoff_ms},
            {"rps", c.backend.rps},
            {"retry_on_truncation", c.backend.retry_on_truncation},
            {"timeout_s", c.backend.timeout_s},
            {"noise",
             {{"drop_terms", c.backend.noise.drop_terms},
              {"add_spurious", c.backend.noise.add_spurious},
              {"perturb_mentions", c.backend.noise.perturb_mentions}}},
            {"echo_text", c.backend.echo_text}}},
          {"embedder", {{"kind", c.embedder.kind}, {"model", c.embedder.model}, {"dimension", c.embedder.dimension}}},
          {"fuzzy_threshold", c.fuzzy_threshold},
          {"concurrency", c.concurrency},
          {"cache_dir", c.cache_dir.string()},
          {"output_dir", c.output_dir.string()},
          {"templates", std::move(t)}};
}

// ---------------------------------------------------------------------------
// Wiring
// ---------------------------------------------------------------------------

struct Templates {
  PromptTemplate taco = default_taco_template();
  TasiTemplates tasi = default_tasi_templates();
};

inline Templates load_templates(const TemplatePaths& paths) {
  Templates t;
  if (paths.taco) t.taco = PromptTemplate::load(*paths.taco, PromptKind::taco);
  if (paths.tasi_phase1) t.tasi.phase1 = PromptTemplate::load(*paths.tasi_phase1, PromptKind::tasi_phase1);
  if (paths.tasi_phase2) t.tasi.phase2 = PromptTemplate::load(*paths.tasi_phase2, PromptKind::tasi_phase2);
  return t;
}

inline RetryPolicy retry_policy(const BackendConfig& b) {
  RetryPolicy p;
  p.max_retries = b.retries;
  p.initial_backoff = std::chrono::milliseconds(b.backoff_ms);
  p.retry_on_truncation = b.retry_on_truncation;
  return p;
}

/// Test seam: replaces construction of remote clients.
struct Overrides {
  std::shared_ptr<ChatBackend> backend;
  std::shared_ptr<Embedder> embedder;
  std::optional<Sleeper> sleep;
};

inline std::shared_ptr<ChatBackend> make_backend(const RunConfig& c, std::shared_ptr<const Dataset> dataset) {
  if (c.backend.kind == "mock-oracle") return std::make_shared<OracleBackend>(std::move(dataset), c.backend.noise);
  if (c.backend.kind == "mock-echo") return MockBackend::echo(c.backend.echo_text);
  auto transport = std::make_shared<HttplibTransport>(c.backend.base_url, std::chrono::seconds(c.backend.timeout_s));
  return std::make_shared<OpenAIChatBackend>(transport, api_key_from_env(c.backend.api_key_env));
}

inline std::shared_ptr<Embedder> make_embedder(const RunConfig& c, std::shared_ptr<BlobCache> cache, Sleeper sleep) {
  if (c.embedder.kind == "offline") return std::make_shared<OfflineEmbedder>(c.embedder.dimension);
  auto transport = std::make_shared<HttplibTransport>(c.backend.base_url, std::chrono::seconds(c.backend.timeout_s));
  OpenAIEmbedder::Options o;
  o.model = c.embedder.model;
  o.cache = std::move(cache);
  o.retry = retry_policy(c.backend);
  o.sleep = std::move(sleep);
  return std::make_shared<OpenAIEmbedder>(transport, api_key_from_env(c.backend.api_key_env), std::move(o));
}

// ---------------------------------------------------------------------------
// Run
// ---------------------------------------------------------------------------

inline constexpr const char* kResultsFile = "results.jsonl";
inline constexpr const char* kRunLogFile = "run_log.jsonl";
inline constexpr const char* kRunStateFile = "run_state.json";

/// Stops a run cooperatively once `should_stop(completed_items)` is true.
struct RunControl {
  std::function<bool(size_t)> should_stop;
};

struct RunSummary {
  std::filesystem::path results;
  size_t items = 0;
  size_t completed = 0;
  size_t resumed = 0;
  size_t malformed = 0;
  size_t cache_hits = 0;
  size_t requests = 0;
  bool interrupted = false;
};

namespace run_detail {

struct Item {
  const Report* report;
  Strategy strategy;
};

inline std::string key_of(const std::string& id, Strategy s) { return id + '\x1f' + std::string(to_string(s)); }

inline std::string file_digest(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return "-";
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a64(content));
}

/// Identity of everything that shapes a record; a resumed run must match it.
inline std::string run_fingerprint(const RunConfig& c) {
  auto j = config_to_json(c);
  j.erase("concurrency");
  j.erase("output_dir");
  j.erase("cache_dir");
  j["backend"].erase("retries");
  j["backend"].erase("backoff_ms");
  j["backend"].erase("rps");
  j["backend"].erase("timeout_s");
  j["dataset_digest"] = file_digest(c.dataset);
  for (const auto* p : {&c.templates.taco, &c.templates.tasi_phase1, &c.templates.tasi_phase2})
    if (*p) j["template_digests"].push_back(file_digest(**p));
  return hex64(fnv1a64(j.dump()));
}

struct Counters {
  std::atomic<size_t> malformed{0};
  std::atomic<size_t> cache_hits{0};
  std::atomic<size_t> requests{0};
};

}  // namespace run_detail

/// Everything needed to turn one report into one record.
class RecordBuilder {
 public:
  RecordBuilder(CompletionService& completions, EmbeddingService& embedder, const Templates& templates,
                InferenceParams params, double threshold)
      : completions_(completions), embedder_(embedder), templates_(templates), params_(std::move(params)),
        threshold_(threshold) {}

  struct Trace {
    size_t requests = 0;
    size_t cache_hits = 0;
  };

  EvaluationRecord build(const Report& report, const TermLinks& gold, Strategy strategy, Trace& trace) {
    EvaluationRecord rec;
    rec.report_id = report.id;
    rec.model = params_.model;
    rec.strategy = strategy;
    rec.gold = gold;

    RawCompletion final_raw;
    if (strategy == Strategy::taco) {
      final_raw = complete(build_taco_prompt(report, templates_.taco), trace);
    } else {
      const TasiPrompts prompts = build_tasi_prompts(report, templates_.tasi);
      const RawCompletion p1 = complete(prompts.phase1, trace);
      PhaseRecord ph{p1.prompt_fingerprint, p1.text, p1.truncated, {}, {}, false};
      try {
        ExtractionList ex = distill_extraction(p1, report.id);
        ph.mentions = std::move(ex.mentions);
        ph.salvage_notes = std::move(ex.salvage_notes);
      } catch (const Error& e) {
        if (e.code() != Errc::malformed_output) throw;
        ph.malformed = true;
        ph.salvage_notes = {"malformed_output"};
      }
      final_raw = complete(prompts.phase2(ph.mentions), trace);
      rec.phase1 = std::move(ph);
    }
    rec.raw_ref = final_raw.prompt_fingerprint;
    rec.raw = final_raw.text;
    rec.truncated = final_raw.truncated;
    apply_distill(rec, report);
    score_record(rec, threshold_, embedder_);
    return rec;
  }

  /// Distills rec.raw into rec.coded; failures become an empty prediction.
  static void apply_distill(EvaluationRecord& rec, const Report& report) {
    try {
      rec.coded = distill(rec.raw, report, rec.truncated);
      rec.malformed = false;
    } catch (const Error& e) {
      if (e.code() != Errc::malformed_output) throw;
      rec.coded = CodedOutput{report.id, {}, {}, {}};
      if (rec.truncated) rec.coded.salvage_notes.emplace_back("completion_truncated");
      rec.coded.salvage_notes.emplace_back("malformed_output");
      rec.malformed = true;
    }
  }

 private:
  RawCompletion complete(const Prompt& prompt, Trace& trace) {
    RawCompletion raw = completions_.complete(prompt, params_);
    if (raw.retrieved_from_cache)
      ++trace.cache_hits;
    else
      ++trace.requests;
    return raw;
  }

  CompletionService& completions_;
  EmbeddingService& embedder_;
  const Templates& templates_;
  InferenceParams params_;
  double threshold_;
};

/// Builds prompts, completes, distills and scores every (report, strategy)
/// item with a bounded worker pool. Records are appended to results.jsonl as
/// they finish; a completed run rewrites the file in dataset order. A rerun
/// with the same configuration keeps finished records and serves completed
/// prompts from the cache.
inline RunSummary run_pipeline(const RunConfig& config, const RunControl& control = {}, const Overrides& overrides = {}) {
  namespace fs = std::filesystem;
  using Clock = std::chrono::steady_clock;
  config.validate();
  const auto dataset = std::make_shared<const Dataset>(load_dataset(config.dataset));
  if (dataset->empty()) throw Error(Errc::empty_input, "dataset " + config.dataset.string() + " has no reports");
  const Templates templates = load_templates(config.templates);
  const Sleeper sleep = overrides.sleep ? *overrides.sleep : real_sleeper();

  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) throw Error(Errc::io, "cannot create output directory " + config.output_dir.string() + ": " + ec.message());
  auto cache = std::make_shared<BlobCache>(config.cache_dir);

  auto backend = overrides.backend ? overrides.backend : make_backend(config, dataset);
  try {
    backend->probe();
  } catch (const Error& e) {
    if (e.code() == Errc::credential) throw;
    throw Error(Errc::config, "backend " + backend->name() + " failed the startup probe: " + e.message());
  }

  CompletionService::Options copts;
  copts.cache = cache;
  copts.retry = retry_policy(config.backend);
  copts.limiter = std::make_shared<ConcurrencyLimiter>(config.concurrency);
  if (config.backend.rps > 0) copts.bucket = std::make_shared<TokenBucket>(config.backend.rps, std::max(1.0, config.backend.rps));
  copts.sleep = sleep;
  CompletionService completions(backend, copts);
  EmbeddingService embedder(overrides.embedder ? overrides.embedder : make_embedder(config, cache, sleep));
  RecordBuilder builder(completions, embedder, templates, config.backend.params, config.fuzzy_threshold);

  // Work items in canonical order.
  std::vector<run_detail::Item> items;
  for (const auto& r : dataset->reports)
    for (Strategy s : config.strategies()) items.push_back({&r, s});

  const fs::path results_path = config.output_dir / kResultsFile;
  const fs::path log_path = config.output_dir / kRunLogFile;
  const fs::path state_path = config.output_dir / kRunStateFile;
  const std::string fingerprint = run_detail::run_fingerprint(config);

  // Resume: keep records from an earlier run of the same configuration.
  std::map<std::string, EvaluationRecord> done;
  bool resuming = false;
  if (fs::exists(state_path) && fs::exists(results_path)) {
    std::ifstream sin(state_path);
    auto state = nlohmann::json::parse(sin, nullptr, false);
    if (!state.is_discarded() && state.value("fingerprint", "") == fingerprint) {
      resuming = true;
      for (auto& r : load_results(results_path)) done.emplace(run_detail::key_of(r.report_id, r.strategy), std::move(r));
    }
  }
  {
    std::ofstream sout(state_path, std::ios::trunc);
    sout << nlohmann::json{{"fingerprint", fingerprint}, {"complete", false}}.dump() << '\n';
    if (!sout) throw Error(Errc::io, "cannot write " + state_path.string());
  }

  RunSummary summary;
  summary.results = results_path;
  summary.items = items.size();

  std::vector<size_t> todo;
  for (size_t i = 0; i < items.size(); ++i) {
    if (done.count(run_detail::key_of(items[i].report->id, items[i].strategy))) ++summary.resumed;
    else todo.push_back(i);
  }

  // Start the append stream from the kept records so a torn tail is dropped.
  std::ofstream results(results_path, std::ios::binary | std::ios::trunc);
  std::ofstream runlog(log_path, std::ios::binary | (resuming ? std::ios::app : std::ios::trunc));
  if (!results || !runlog) throw Error(Errc::io, "cannot open output files in " + config.output_dir.string());
  for (const auto& item : items)
    if (auto it = done.find(run_detail::key_of(item.report->id, item.strategy)); it != done.end())
      write_record(results, it->second);
  results.flush();

  std::mutex out_mu;
  std::atomic<size_t> next{0};
  std::atomic<size_t> finished{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;
  run_detail::Counters counters;

  auto worker = [&] {
    for (;;) {
      if (stop.load()) return;
      const size_t slot = next.fetch_add(1);
      if (slot >= todo.size()) return;
      const run_detail::Item& item = items[todo[slot]];
      const auto t0 = Clock::now();
      try {
        const GoldAnnotation* g = dataset->gold_for(item.report->id);
        RecordBuilder::Trace trace;
        EvaluationRecord rec = builder.build(*item.report, g ? g->links : TermLinks{}, item.strategy, trace);
        const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0).count();
        counters.requests += trace.requests;
        counters.cache_hits += trace.cache_hits;
        if (rec.malformed) ++counters.malformed;
        nlohmann::ordered_json log{{"id", rec.report_id},
                                   {"strategy", std::string(to_string(rec.strategy))},
                                   {"model", rec.model},
                                   {"ms", ms},
                                   {"requests", trace.requests},
                                   {"cache_hits", trace.cache_hits},
                                   {"malformed", rec.malformed},
                                   {"truncated", rec.truncated},
                                   {"salvage_notes", rec.coded.salvage_notes}};
        if (rec.phase1) log["phase1_salvage_notes"] = rec.phase1->salvage_notes;
        std::lock_guard lock(out_mu);
        write_record(results, rec);
        results.flush();
        runlog << log.dump() << '\n';
        runlog.flush();
        done.emplace(run_detail::key_of(rec.report_id, rec.strategy), std::move(rec));
        const size_t n = ++finished;
        if (control.should_stop && control.should_stop(summary.resumed + n)) stop = true;
      } catch (...) {
        std::lock_guard lock(out_mu);
        if (!failure) failure = std::current_exception();
        stop = true;
        return;
      }
    }
  };

  const size_t threads = std::min(config.concurrency, std::max<size_t>(1, todo.size()));
  std::vector<std::thread> pool;
  for (size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  results.close();
  runlog.close();
  if (failure) std::rethrow_exception(failure);

  summary.completed = summary.resumed + finished.load();
  summary.malformed = counters.malformed.load();
  summary.cache_hits = counters.cache_hits.load();
  summary.requests = counters.requests.load();
  summary.interrupted = summary.completed < items.size();
  if (summary.interrupted) return summary;

  std::vector<EvaluationRecord> ordered;
  for (const auto& item : items) ordered.push_back(done.at(run_detail::key_of(item.report->id, item.strategy)));
  save_results(results_path, ordered);
  std::ofstream sout(state_path, std::ios::trunc);
  sout << nlohmann::json{{"fingerprint", fingerprint}, {"complete", true}}.dump() << '\n';
  return summary;
}

// ---------------------------------------------------------------------------
// Re-distill and re-score
// ---------------------------------------------------------------------------

/// Re-runs distillation over the raw completions (from the cache when the
/// body is there, else the text stored in the record), then rescores.
inline std::vector<EvaluationRecord> redistill(std::vector<EvaluationRecord> records, const Dataset& dataset,
                                               const BlobCache* cache, double threshold, EmbeddingService& embedder) {
  auto raw_of = [&](const std::string& ref, std::string& text, bool& truncated) {
    if (cache == nullptr || ref.empty()) return;
    if (auto body = cache->get(ref)) {
      const ChatReply reply = parse_chat_body(*body);
      text = reply.text;
      truncated = reply.truncated;
    }
  };
  for (auto& rec : records) {
    const Report* report = dataset.find(rec.report_id);
    if (report == nullptr) throw Error(Errc::not_found, "report " + rec.report_id + " is not in dataset " + dataset.name);
    if (rec.phase1) {
      auto& ph = *rec.phase1;
      raw_of(ph.raw_ref, ph.raw, ph.truncated);
      try {
        ExtractionList ex = distill_extraction(ph.raw, ph.truncated);
        ph.mentions = std::move(ex.mentions);
        ph.salvage_notes = std::move(ex.salvage_notes);
        ph.malformed = false;
      } catch (const Error& e) {
        if (e.code() != Errc::malformed_output) throw;
        ph.mentions.clear();
        ph.salvage_notes = {"malformed_output"};
        ph.malformed = true;
      }
    }
    raw_of(rec.raw_ref, rec.raw, rec.truncated);
    RecordBuilder::apply_distill(rec, *report);
    if (const auto* g = dataset.gold_for(rec.report_id)) rec.gold = g->links;
    score_record(rec, threshold, embedder);
  }
  return records;
}

/// Recomputes alignments and MATCH triples from stored links and gold.
inline std::vector<EvaluationRecord> rescore(std::vector<EvaluationRecord> records, double threshold,
                                             EmbeddingService& embedder, const Dataset* dataset = nullptr) {
  for (auto& rec : records) {
    if (dataset != nullptr)
      if (const auto* g = dataset->gold_for(rec.report_id)) rec.gold = g->links;
    score_record(rec, threshold, embedder);
  }
  return records;
}

}  // namespace symcode
