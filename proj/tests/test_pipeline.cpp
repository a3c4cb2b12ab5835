#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "support/fixture.hpp"
#include "symcode/oracle.hpp"
#include "symcode/pipeline.hpp"

using namespace symcode;
namespace fs = std::filesystem;

namespace {

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("symcode_pipeline_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  RunConfig config(const Dataset& ds, const std::string& strategy = "both") {
    RunConfig c;
    c.dataset = fixture::write(ds, dir_);
    c.strategy = strategy;
    c.backend.kind = "mock-oracle";
    c.backend.backoff_ms = 0;
    c.cache_dir = dir_ / "cache";
    c.output_dir = dir_ / "out";
    return c;
  }

  fs::path dir_;
};

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::argument;
}

}  // namespace

TEST(Config, ParsesAndResolvesRelativePaths) {
  const auto doc = nlohmann::json::parse(R"({
    "dataset": "data/full.jsonl",
    "strategy": "tasi",
    "backend": {"kind": "mock-oracle", "model": "gpt-4", "max_new_tokens": 128, "temperature": 0.2,
                "noise": {"drop_terms": 1}},
    "embedder": "offline",
    "concurrency": 2
  })");
  const RunConfig c = parse_config(doc, "/etc/run");
  EXPECT_EQ(c.dataset, fs::path("/etc/run/data/full.jsonl"));
  EXPECT_EQ(c.cache_dir, fs::path("/etc/run/cache"));
  EXPECT_EQ(c.output_dir, fs::path("/etc/run/out"));
  EXPECT_EQ(c.strategy, "tasi");
  EXPECT_EQ(c.backend.params.model, "gpt-4");
  EXPECT_EQ(c.backend.params.max_new_tokens, 128);
  EXPECT_EQ(c.backend.noise.drop_terms, 1u);
  EXPECT_EQ(c.concurrency, 2u);
  EXPECT_EQ(c.strategies(), std::vector<Strategy>{Strategy::tasi});

  const RunConfig abs = parse_config(nlohmann::json::parse(R"({"cache_dir": "/tmp/c"})"), "/etc/run");
  EXPECT_EQ(abs.cache_dir, fs::path("/tmp/c"));
}

TEST(Config, RejectsUnknownKeysSecretsAndBadValues) {
  auto code = [](const char* text) { return code_of([&] { parse_config(nlohmann::json::parse(text)); }); };
  EXPECT_EQ(code(R"({"datset": "x"})"), Errc::config);
  EXPECT_EQ(code(R"({"api_key": "sk-123"})"), Errc::config);
  EXPECT_EQ(code(R"({"backend": {"api_key": "sk-123"}})"), Errc::config);
  EXPECT_EQ(code(R"({"concurrency": 0})"), Errc::config);
  EXPECT_EQ(code(R"({"concurrency": "four"})"), Errc::config);
  EXPECT_EQ(code(R"([1, 2])"), Errc::config);

  RunConfig c;
  EXPECT_EQ(code_of([&] { c.validate(); }), Errc::config);
}

TEST(Config, RoundTripsThroughJsonWithoutSecrets) {
  RunConfig c = parse_config(nlohmann::json::parse(R"({"dataset": "/d.jsonl", "backend": {"kind": "openai"}})"));
  const auto j = config_to_json(c);
  EXPECT_EQ(j.dump().find("api_key\""), std::string::npos);
  EXPECT_EQ(j["backend"]["api_key_env"], "OPENAI_API_KEY");
  const RunConfig back = parse_config(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.dataset, c.dataset);
  EXPECT_EQ(back.backend.kind, "openai");
  EXPECT_EQ(back.cache_dir, c.cache_dir);
}

TEST(OracleNoise, SpecArithmetic) {
  const Dataset ds = fixture::uniform(1, 4, 3);
  const Report& r = ds.reports[0];
  const GoldAnnotation& g = *ds.gold_for(r.id);
  EmbeddingService emb(std::make_shared<OfflineEmbedder>());

  auto score = [&](NoiseProfile noise) {
    const CodedOutput coded = distill(oracle_complete(r, g, noise), r);
    const std::vector<ReportAlignments> als{evaluate_report(coded.links, g.links, kDefaultFuzzyThreshold, emb).alignments};
    return link_scores(als)[MatchMode::em];
  };
  const auto clean = score({});
  EXPECT_DOUBLE_EQ(*clean.precision, 1.0);
  EXPECT_DOUBLE_EQ(*clean.recall, 1.0);
  EXPECT_DOUBLE_EQ(*score({.drop_terms = 1}).recall, 3.0 / 4.0);
  EXPECT_DOUBLE_EQ(*score({.add_spurious = 1}).precision, 4.0 / 5.0);

  EXPECT_EQ(code_of([&] { oracle_complete(r, g, {.drop_terms = 5}); }), Errc::range);
  EXPECT_EQ(code_of([&] { oracle_complete(r, g, {.add_spurious = 3}); }), Errc::range);
}

TEST(OracleNoise, ZeroNoiseDistillsToGold) {
  const Dataset ds = fixture::make();
  for (const auto& r : ds.reports) {
    const auto& gold = ds.gold_for(r.id)->links;
    TermLinks want;
    for (const auto& l : gold) want.push_back({normalize_term(l.term), l.mentions});
    EXPECT_EQ(distill(oracle_complete(r, *ds.gold_for(r.id), {}), r).links, want);
    const auto phase1 = distill_extraction(oracle_complete(r, *ds.gold_for(r.id), {}, PromptKind::tasi_phase1));
    size_t total = 0;
    for (const auto& l : gold) total += l.mentions.size();
    EXPECT_LE(phase1.mentions.size(), total);
    EXPECT_FALSE(phase1.mentions.empty());
  }
}

TEST_F(PipelineTest, OracleRunScoresOneAndSecondRunHitsCache) {
  const Dataset ds = fixture::make({.reports = 8, .seed = 4}, "small");
  RunConfig c = config(ds);
  const RunSummary first = run_pipeline(c);
  EXPECT_EQ(first.items, 16u);
  EXPECT_EQ(first.completed, 16u);
  EXPECT_FALSE(first.interrupted);
  EXPECT_EQ(first.requests, 8u + 16u);  // TACO once, TASI twice
  const auto records = load_results(first.results);
  ASSERT_EQ(records.size(), 16u);
  EXPECT_EQ(records[0].report_id, ds.reports[0].id);
  EXPECT_EQ(records[0].strategy, Strategy::taco);
  EXPECT_EQ(records[1].strategy, Strategy::tasi);
  ASSERT_TRUE(records[1].phase1.has_value());
  for (const auto& row : aggregate(records)) {
    for (MatchMode m : kMatchModes) EXPECT_DOUBLE_EQ(*row.link[m].recall, 1.0);
    EXPECT_DOUBLE_EQ(*row.match.fuzzy, 1.0);
  }
  EXPECT_TRUE(fs::exists(c.output_dir / kRunLogFile));

  // A fresh output directory with the same cache makes no backend requests.
  c.output_dir = dir_ / "out2";
  const RunSummary second = run_pipeline(c);
  EXPECT_EQ(second.requests, 0u);
  EXPECT_EQ(second.cache_hits, 24u);
  EXPECT_EQ(load_results(second.results), records);
}

TEST_F(PipelineTest, InterruptedRunResumesToSameResult) {
  const Dataset ds = fixture::make({.reports = 10, .seed = 8}, "resume");
  RunConfig c = config(ds);
  c.backend.noise.add_spurious = 1;
  c.concurrency = 1;
  RunControl half{[](size_t n) { return n >= 7; }};
  const RunSummary partial = run_pipeline(c, half);
  EXPECT_TRUE(partial.interrupted);
  EXPECT_LT(partial.completed, 20u);

  const RunSummary resumed = run_pipeline(c);
  EXPECT_FALSE(resumed.interrupted);
  EXPECT_EQ(resumed.resumed, partial.completed);

  RunConfig fresh = c;
  fresh.output_dir = dir_ / "fresh";
  fresh.cache_dir = dir_ / "fresh-cache";
  run_pipeline(fresh);
  EXPECT_EQ(load_results(resumed.results), load_results(fs::path(fresh.output_dir) / kResultsFile));
}

TEST_F(PipelineTest, ChangedConfigStartsOver) {
  const Dataset ds = fixture::make({.reports = 4, .seed = 2}, "restart");
  RunConfig c = config(ds, "taco");
  run_pipeline(c);
  c.backend.noise.drop_terms = 1;
  const RunSummary s = run_pipeline(c);
  EXPECT_EQ(s.resumed, 0u);
}

TEST_F(PipelineTest, MalformedOutputIsRecordedNotFatal) {
  const Dataset ds = fixture::make({.reports = 3, .seed = 1}, "echo");
  RunConfig c = config(ds, "both");
  c.backend.kind = "mock-echo";
  c.backend.echo_text = "I cannot assist with that.";
  const RunSummary s = run_pipeline(c);
  EXPECT_EQ(s.malformed, 6u);
  for (const auto& r : load_results(s.results)) {
    EXPECT_TRUE(r.malformed);
    EXPECT_TRUE(r.coded.links.empty());
    EXPECT_EQ(r.coded.salvage_notes.back(), "malformed_output");
    EXPECT_TRUE(r.alignment(MatchMode::em).pairs.empty());
  }
}

TEST_F(PipelineTest, CredentialFailureAborts) {
  const Dataset ds = fixture::make({.reports = 2, .seed = 1}, "cred");
  RunConfig c = config(ds, "taco");
  Overrides o;
  o.backend = std::make_shared<MockBackend>(
      [](const Prompt&, const InferenceParams&) { return MockReply{401, "invalid key", "stop"}; });
  EXPECT_EQ(code_of([&] { run_pipeline(c, {}, o); }), Errc::credential);
  EXPECT_EQ(exit_code_for(Errc::credential), kExitTransport);
}

TEST_F(PipelineTest, MissingApiKeyIsCredentialError) {
  const Dataset ds = fixture::make({.reports = 2, .seed = 1}, "nokey");
  RunConfig c = config(ds, "taco");
  c.backend.kind = "openai";
  c.backend.api_key_env = "SYMCODE_TEST_UNSET_KEY_VARIABLE";
  ::unsetenv("SYMCODE_TEST_UNSET_KEY_VARIABLE");
  EXPECT_EQ(code_of([&] { run_pipeline(c); }), Errc::credential);
}

TEST_F(PipelineTest, RedistillAndRescoreAreStable) {
  const Dataset ds = fixture::make({.reports = 5, .seed = 6}, "again");
  RunConfig c = config(ds);
  c.backend.noise.perturb_mentions = 0.5;
  const RunSummary s = run_pipeline(c);
  const auto records = load_results(s.results);
  EmbeddingService emb(std::make_shared<OfflineEmbedder>());
  BlobCache cache(c.cache_dir);
  EXPECT_EQ(redistill(records, ds, &cache, kDefaultFuzzyThreshold, emb), records);
  EXPECT_EQ(redistill(records, ds, nullptr, kDefaultFuzzyThreshold, emb), records);
  EXPECT_EQ(rescore(records, kDefaultFuzzyThreshold, emb, &ds), records);

  // A stricter threshold never adds fuzzy pairs.
  const auto strict = rescore(records, 1.0, emb);
  size_t loose_pairs = 0, strict_pairs = 0;
  for (size_t i = 0; i < records.size(); ++i) {
    loose_pairs += records[i].alignment(MatchMode::fuzzy).pairs.size();
    strict_pairs += strict[i].alignment(MatchMode::fuzzy).pairs.size();
  }
  EXPECT_LE(strict_pairs, loose_pairs);
}
