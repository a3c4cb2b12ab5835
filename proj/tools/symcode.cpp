// symcode: symptom coding pipeline driver.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "symcode/analysis.hpp"
#include "symcode/corpus.hpp"
#include "symcode/pipeline.hpp"

namespace fs = std::filesystem;
using namespace symcode;

namespace {

void emit(const std::string& content, const std::string& out_path) {
  if (out_path.empty() || out_path == "-") {
    std::cout << content;
    std::cout.flush();
    return;
  }
  write_text_file(out_path, content);
}

std::vector<EvaluationRecord> load_all(const std::vector<std::string>& paths) {
  std::vector<EvaluationRecord> all;
  for (const auto& p : paths) {
    bool torn = false;
    auto recs = load_results(p, &torn);
    if (torn) std::cerr << "warning: ignored a truncated final line in " << p << "\n";
    all.insert(all.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  return all;
}

std::shared_ptr<Embedder> embedder_for(const RunConfig& c) {
  return make_embedder(c, std::make_shared<BlobCache>(c.cache_dir), real_sleeper());
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string data, symptoms, out, name;
};

int cmd_ingest(const IngestArgs& a) {
  auto result = ingest_vaers(a.data, a.symptoms, a.name.empty() ? fs::path(a.out).stem().string() : a.name);
  save_dataset(result.dataset, a.out);
  std::cerr << "ingested " << result.dataset.reports.size() << " reports";
  if (!result.skipped.empty()) std::cerr << ", skipped " << result.skipped.size() << " without text or symptoms";
  std::cerr << "\n";
  return kExitOk;
}

struct StatsArgs {
  std::string dataset, results, format = "text", out;
  bool histogram = false;
};

int cmd_stats(const StatsArgs& a) {
  const Dataset ds = load_dataset(a.dataset);
  std::vector<size_t> extracted;
  if (!a.results.empty())
    for (const auto& r : load_all({a.results})) extracted.push_back(r.coded.links.size());
  const DatasetStats stats = compute_stats(ds, extracted);
  std::string content;
  if (a.format == "json") {
    auto j = stats_to_json(ds.name, stats);
    if (a.histogram) {
      nlohmann::ordered_json h = nlohmann::ordered_json::object();
      for (const auto& [bucket, count] : symptom_count_histogram(ds)) h[std::to_string(bucket)] = count;
      j["symptom_count_histogram"] = std::move(h);
    }
    content = j.dump(2) + "\n";
  } else if (a.format == "text") {
    content = stats_table(ds.name, stats);
    if (a.histogram) {
      content += "\nsymptoms per report: reports\n";
      for (const auto& [bucket, count] : symptom_count_histogram(ds))
        content += "  " + std::to_string(bucket) + ": " + std::to_string(count) + "\n";
    }
  } else {
    throw Error(Errc::argument, "unknown stats format '" + a.format + "'");
  }
  emit(content, a.out);
  return kExitOk;
}

struct SubsetArgs {
  std::string dataset, out, name;
  std::optional<size_t> top, bottom;
};

int cmd_subset(const SubsetArgs& a) {
  if (a.top.has_value() == a.bottom.has_value()) throw Error(Errc::argument, "give exactly one of --top or --bottom");
  const Dataset ds = load_dataset(a.dataset);
  Dataset sub = a.top ? build_subset(ds, SubsetSelector::top_k, *a.top) : build_subset(ds, SubsetSelector::bottom_k, *a.bottom);
  if (!a.name.empty()) sub.name = a.name;
  save_dataset(sub, a.out);
  std::cerr << sub.name << ": " << sub.reports.size() << " reports\n";
  return kExitOk;
}

struct RunArgs {
  std::string config;
  std::optional<std::string> dataset, strategy, backend, base_url, api_key_env, model, embedder, cache_dir, output_dir;
  std::optional<std::string> taco_template, tasi_phase1_template, tasi_phase2_template, echo_text;
  std::optional<int> max_new_tokens, retries;
  std::optional<long long> backoff_ms, timeout_s;
  std::optional<double> temperature, rps, threshold, perturb;
  std::optional<size_t> concurrency, drop_terms, add_spurious;
  bool retry_on_truncation = false;
  bool print_config = false;
};

RunConfig resolve_config(const RunArgs& a) {
  RunConfig c = a.config.empty() ? RunConfig{} : load_config(a.config);
  if (a.dataset) c.dataset = *a.dataset;
  if (a.strategy) c.strategy = *a.strategy;
  if (a.backend) c.backend.kind = *a.backend;
  if (a.base_url) c.backend.base_url = *a.base_url;
  if (a.api_key_env) c.backend.api_key_env = *a.api_key_env;
  if (a.model) c.backend.params.model = *a.model;
  if (a.embedder) c.embedder.kind = *a.embedder;
  if (a.cache_dir) c.cache_dir = *a.cache_dir;
  if (a.output_dir) c.output_dir = *a.output_dir;
  if (a.taco_template) c.templates.taco = *a.taco_template;
  if (a.tasi_phase1_template) c.templates.tasi_phase1 = *a.tasi_phase1_template;
  if (a.tasi_phase2_template) c.templates.tasi_phase2 = *a.tasi_phase2_template;
  if (a.echo_text) c.backend.echo_text = *a.echo_text;
  if (a.max_new_tokens) c.backend.params.max_new_tokens = *a.max_new_tokens;
  if (a.retries) c.backend.retries = *a.retries;
  if (a.backoff_ms) c.backend.backoff_ms = *a.backoff_ms;
  if (a.timeout_s) c.backend.timeout_s = *a.timeout_s;
  if (a.temperature) c.backend.params.temperature = *a.temperature;
  if (a.rps) c.backend.rps = *a.rps;
  if (a.threshold) c.fuzzy_threshold = *a.threshold;
  if (a.perturb) c.backend.noise.perturb_mentions = *a.perturb;
  if (a.concurrency) c.concurrency = *a.concurrency;
  if (a.drop_terms) c.backend.noise.drop_terms = *a.drop_terms;
  if (a.add_spurious) c.backend.noise.add_spurious = *a.add_spurious;
  if (a.retry_on_truncation) c.backend.retry_on_truncation = true;
  return c;
}

int cmd_run(const RunArgs& a) {
  const RunConfig c = resolve_config(a);
  if (a.print_config) {
    c.validate();
    std::cout << config_to_json(c).dump(2) << "\n";
    return kExitOk;
  }
  const RunSummary s = run_pipeline(c);
  std::cerr << "run: " << s.completed << "/" << s.items << " items (" << s.resumed << " resumed), " << s.requests
            << " requests, " << s.cache_hits << " from cache, " << s.malformed << " malformed\n"
            << "results: " << s.results.string() << "\n";
  return kExitOk;
}

struct RescoreArgs {
  std::string results, dataset, out, cache_dir;
  std::optional<std::string> embedder;
  std::optional<double> threshold;
  std::string config;
};

/// Config file values first, then explicit flags.
RunConfig rescore_config(const RescoreArgs& a) {
  RunConfig c = a.config.empty() ? RunConfig{} : load_config(a.config);
  if (a.embedder) c.embedder.kind = *a.embedder;
  if (a.threshold) c.fuzzy_threshold = *a.threshold;
  if (!a.cache_dir.empty()) c.cache_dir = a.cache_dir;
  return c;
}

int cmd_distill(const RescoreArgs& a) {
  RunConfig c = rescore_config(a);
  const Dataset ds = load_dataset(a.dataset.empty() ? c.dataset : fs::path(a.dataset));
  const fs::path results = a.results.empty() ? c.output_dir / kResultsFile : fs::path(a.results);
  BlobCache cache(c.cache_dir);
  EmbeddingService emb(embedder_for(c));
  auto recs = redistill(load_all({results.string()}), ds, &cache, c.fuzzy_threshold, emb);
  save_results(a.out.empty() ? results : fs::path(a.out), recs);
  size_t malformed = 0;
  for (const auto& r : recs) malformed += r.malformed ? 1 : 0;
  std::cerr << "distilled " << recs.size() << " records, " << malformed << " malformed\n";
  return kExitOk;
}

int cmd_eval(const RescoreArgs& a) {
  RunConfig c = rescore_config(a);
  if (!(c.fuzzy_threshold > 0.0 && c.fuzzy_threshold <= 1.0)) throw Error(Errc::config, "fuzzy threshold must lie in (0, 1]");
  const fs::path results = a.results.empty() ? c.output_dir / kResultsFile : fs::path(a.results);
  std::optional<Dataset> ds;
  if (!a.dataset.empty()) ds = load_dataset(a.dataset);
  EmbeddingService emb(embedder_for(c));
  auto recs = rescore(load_all({results.string()}), c.fuzzy_threshold, emb, ds ? &*ds : nullptr);
  save_results(a.out.empty() ? results : fs::path(a.out), recs);
  std::cerr << "rescored " << recs.size() << " records at threshold " << c.fuzzy_threshold << "\n";
  return kExitOk;
}

struct ReportArgs {
  std::vector<std::string> results;
  std::string format = "text", out, dataset, exhibit, chart_data;
  std::vector<std::string> subsets, terms;
  bool macro = false, unpaired_zero = false;
};

int cmd_report(const ReportArgs& a) {
  const auto records = load_all(a.results);
  const ExportFormat format = parse_export_format(a.format);
  ScoreOptions opts;
  opts.averaging = a.macro ? Averaging::macro : Averaging::micro;
  opts.unpaired = a.unpaired_zero ? UnpairedPolicy::score_as_zero : UnpairedPolicy::exclude;

  if (!a.exhibit.empty()) {
    const Exhibit ex = exhibit(a.exhibit, records);
    emit(format == ExportFormat::json ? exhibit_to_json(ex).dump(2) + "\n" : exhibit_text(ex), a.out);
    return kExitOk;
  }

  if (!a.terms.empty()) {
    if (a.dataset.empty()) throw Error(Errc::argument, "--terms needs --dataset");
    const Dataset ds = load_dataset(a.dataset);
    std::string content;
    for (const auto& [key, members] : group_records(records)) {
      std::vector<EvaluationRecord> group;
      for (const auto* r : members) group.push_back(*r);
      const auto rows = symptom_breakdown(group, ds, a.terms);
      if (format == ExportFormat::json) {
        auto j = breakdown_to_json(ds.name, rows);
        j["model"] = key.first;
        j["strategy"] = key.second;
        content += j.dump(2) + "\n";
      } else {
        content += "== " + key.first + " (" + strategy_label(key.second) + "), dataset " + ds.name + " ==\n";
        for (const auto& b : rows) {
          content += b.term + " [" + std::to_string(b.report_count) + " reports]\n";
          content += "  gold:  " + variants_text(b.gold_variants) + "\n";
          content += "  model: " + variants_text(b.model_variants) + "\n";
        }
      }
    }
    emit(content, a.out);
    return kExitOk;
  }

  if (!a.subsets.empty()) {
    std::vector<Dataset> sets;
    for (const auto& p : a.subsets) sets.push_back(load_dataset(p));
    std::vector<const Dataset*> ptrs;
    for (const auto& s : sets) ptrs.push_back(&s);
    const auto groups = subset_compare(records, ptrs, opts);
    if (!a.chart_data.empty()) write_text_file(a.chart_data, subset_series_csv(groups));
    std::string content;
    if (format == ExportFormat::csv) {
      content = subset_series_csv(groups);
    } else if (format == ExportFormat::json) {
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (const auto& g : groups)
        arr.push_back({{"subset", g.subset},
                       {"model", g.model},
                       {"strategy", g.strategy},
                       {"empty", g.empty},
                       {"scores", g.scores ? score_row_to_json(*g.scores) : nlohmann::ordered_json(nullptr)}});
      content = arr.dump(2) + "\n";
    } else {
      content = subset_text(groups);
    }
    emit(content, a.out);
    return kExitOk;
  }

  const auto rows = records.empty() ? std::vector<ScoreRow>{} : aggregate(records, opts);
  emit(render_scores(rows, format), a.out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"symcode: LLM symptom coding and LINK/MATCH evaluation"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Convert VAERS data and symptom CSV files into a dataset file");
  c_ingest->add_option("--data", ingest.data, "VAERS data CSV (VAERS_ID, SYMPTOM_TEXT)")->required();
  c_ingest->add_option("--symptoms", ingest.symptoms, "VAERS symptoms CSV (VAERS_ID, SYMPTOM1..5)")->required();
  c_ingest->add_option("-o,--out", ingest.out, "Output dataset path")->required();
  c_ingest->add_option("--name", ingest.name, "Dataset name");

  StatsArgs stats;
  auto* c_stats = app.add_subcommand("stats", "Dataset statistics (text length, suggested and extracted symptom counts)");
  c_stats->add_option("dataset", stats.dataset)->required();
  c_stats->add_option("--results", stats.results, "Results file for the extracted-symptom column");
  c_stats->add_option("--format", stats.format, "text or json")->check(CLI::IsMember({"text", "json"}));
  c_stats->add_flag("--histogram", stats.histogram, "Include the symptoms-per-report histogram");
  c_stats->add_option("-o,--out", stats.out, "Output path (default stdout)");

  SubsetArgs subset;
  auto* c_subset = app.add_subcommand("subset", "Frequency-based subset (top or bottom k gold terms)");
  c_subset->add_option("dataset", subset.dataset)->required();
  c_subset->add_option("--top", subset.top, "Keep reports with any of the k most frequent terms");
  c_subset->add_option("--bottom", subset.bottom, "Keep reports with any of the k least frequent terms");
  c_subset->add_option("-o,--out", subset.out, "Output dataset path")->required();
  c_subset->add_option("--name", subset.name, "Subset name (default <name>-top-k / <name>-bottom-k)");

  RunArgs run;
  auto* c_run = app.add_subcommand("run", "Prompt, complete, distill and score every report");
  c_run->add_option("-c,--config", run.config, "JSON config file");
  c_run->add_option("--dataset", run.dataset);
  c_run->add_option("--strategy", run.strategy, "taco, tasi or both");
  c_run->add_option("--backend", run.backend, "openai, mock-oracle or mock-echo");
  c_run->add_option("--base-url", run.base_url);
  c_run->add_option("--api-key-env", run.api_key_env, "Environment variable holding the API key");
  c_run->add_option("--model", run.model);
  c_run->add_option("--max-new-tokens", run.max_new_tokens);
  c_run->add_option("--temperature", run.temperature);
  c_run->add_option("--retries", run.retries);
  c_run->add_option("--backoff-ms", run.backoff_ms);
  c_run->add_option("--timeout-s", run.timeout_s);
  c_run->add_option("--rps", run.rps, "Request rate limit, 0 for none");
  c_run->add_flag("--retry-on-truncation", run.retry_on_truncation);
  c_run->add_option("--embedder", run.embedder, "offline or remote");
  c_run->add_option("--fuzzy-threshold", run.threshold);
  c_run->add_option("--concurrency", run.concurrency);
  c_run->add_option("--cache-dir", run.cache_dir);
  c_run->add_option("--output-dir", run.output_dir);
  c_run->add_option("--taco-template", run.taco_template);
  c_run->add_option("--tasi-phase1-template", run.tasi_phase1_template);
  c_run->add_option("--tasi-phase2-template", run.tasi_phase2_template);
  c_run->add_option("--echo-text", run.echo_text, "Reply text for the mock-echo backend");
  c_run->add_option("--drop-terms", run.drop_terms, "Oracle noise: drop the k rarest gold terms");
  c_run->add_option("--add-spurious", run.add_spurious, "Oracle noise: add j unlinked suggested terms");
  c_run->add_option("--perturb-mentions", run.perturb, "Oracle noise: fraction of mentions to edit");
  c_run->add_flag("--print-config", run.print_config, "Print the resolved config and exit");

  RescoreArgs distill_args;
  auto* c_distill = app.add_subcommand("distill", "Re-distill raw completions of a results file and rescore");
  RescoreArgs eval_args;
  auto* c_eval = app.add_subcommand("eval", "Rescore existing records (new threshold or embedder)");
  for (auto [cmd, args] : {std::pair{c_distill, &distill_args}, std::pair{c_eval, &eval_args}}) {
    cmd->add_option("-c,--config", args->config, "Run config (supplies paths, threshold and embedder)");
    cmd->add_option("--results", args->results, "Results file (default <output_dir>/results.jsonl)");
    cmd->add_option("--dataset", args->dataset, "Dataset file");
    cmd->add_option("--cache-dir", args->cache_dir);
    cmd->add_option("--embedder", args->embedder)->check(CLI::IsMember({"offline", "remote"}));
    cmd->add_option("--fuzzy-threshold", args->threshold);
    cmd->add_option("-o,--out", args->out, "Output results path (default: overwrite input)");
  }

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "Score tables, subset comparisons, breakdowns and exhibits");
  c_report->add_option("results", report.results, "Results files")->required();
  c_report->add_option("--format", report.format, "text, json or csv")->check(CLI::IsMember({"text", "table", "json", "csv"}));
  c_report->add_option("-o,--out", report.out, "Output path (default stdout)");
  c_report->add_flag("--macro", report.macro, "Macro-average LINK scores per report");
  c_report->add_flag("--unpaired-zero", report.unpaired_zero, "Score unpaired mentions as zero in MATCH means");
  c_report->add_option("--subset", report.subsets, "Subset dataset files to compare (repeatable)");
  c_report->add_option("--chart-data", report.chart_data, "Write subset comparison series CSV here");
  c_report->add_option("--terms", report.terms, "Per-symptom breakdown for these terms")->delimiter(',');
  c_report->add_option("--dataset", report.dataset, "Dataset for --terms");
  c_report->add_option("--exhibit", report.exhibit, "Render the side-by-side exhibit for this report id");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*c_ingest) return cmd_ingest(ingest);
    if (*c_stats) return cmd_stats(stats);
    if (*c_subset) return cmd_subset(subset);
    if (*c_run) return cmd_run(run);
    if (*c_distill) return cmd_distill(distill_args);
    if (*c_eval) return cmd_eval(eval_args);
    if (*c_report) return cmd_report(report);
  } catch (const Error& e) {
    std::cerr << "symcode: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "symcode: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitUsage;
}
