// Acceptance suite: one PASS/FAIL (or SKIP) line per criterion.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "support/fixture.hpp"
#include "support/oracles.hpp"
#include "symcode/analysis.hpp"
#include "symcode/assignment.hpp"
#include "symcode/corpus.hpp"
#include "symcode/distillation.hpp"
#include "symcode/metrics.hpp"
#include "symcode/oracle.hpp"
#include "symcode/pipeline.hpp"

#ifndef SYMCODE_TEST_DATA_DIR
#define SYMCODE_TEST_DATA_DIR "tests/data"
#endif

namespace fs = std::filesystem;
using namespace symcode;

namespace {

enum class Verdict { pass, fail, skip };

struct Outcome {
  Verdict verdict = Verdict::pass;
  std::string detail;
};

Outcome fail(std::string why) { return {Verdict::fail, std::move(why)}; }
Outcome skip(std::string why) { return {Verdict::skip, std::move(why)}; }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("symcode-acceptance-" + std::to_string(::getpid()) + "-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig oracle_config(const fs::path& dataset, const fs::path& dir, const std::string& strategy) {
  RunConfig c;
  c.dataset = dataset;
  c.strategy = strategy;
  c.backend.kind = "mock-oracle";
  c.backend.params.model = "oracle";
  c.backend.backoff_ms = 0;
  c.concurrency = 4;
  c.cache_dir = dir / "cache";
  c.output_dir = dir / "out";
  return c;
}

bool near(const std::optional<double>& v, double want, double tol) { return v && std::fabs(*v - want) <= tol; }

// 1 -------------------------------------------------------------------------
Outcome oracle_identity() {
  const fs::path dir = scratch("c1");
  const Dataset ds = fixture::make();
  if (ds.reports.size() != 25) return fail("fixture has " + std::to_string(ds.reports.size()) + " reports");
  const fs::path path = fixture::write(ds, dir);

  const auto t0 = std::chrono::steady_clock::now();
  const RunSummary s = run_pipeline(oracle_config(path, dir, "both"));
  const auto records = load_results(s.results);
  const auto rows = aggregate(records);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (records.size() != 50) return fail("expected 50 records, got " + std::to_string(records.size()));
  if (rows.size() != 2) return fail("expected TACO and TASI rows");
  for (const auto& row : rows) {
    for (MatchMode m : kMatchModes) {
      if (!near(row.link[m].precision, 1.0, 1e-9) || !near(row.link[m].recall, 1.0, 1e-9))
        return fail(row.strategy + " " + std::string(to_string(m)) + " is not 1.0");
    }
    if (!near(row.match.bleu, 1.0, 1e-9) || !near(row.match.fuzzy, 1.0, 1e-9) || !near(row.match.cosine, 1.0, 1e-9))
      return fail(row.strategy + " MATCH scores are not 1.0");
  }
  fs::remove_all(dir);
  if (secs >= 10.0) return fail("took " + std::to_string(secs) + " s");
  std::ostringstream os;
  os << "25 reports x {TACO, TASI}, 6 LINK + 3 MATCH values = 1.0, " << std::fixed << std::setprecision(2) << secs << " s";
  return {Verdict::pass, os.str()};
}

// 2 -------------------------------------------------------------------------
Outcome noise_arithmetic() {
  const fs::path dir = scratch("c2");
  EmbeddingService emb(std::make_shared<OfflineEmbedder>());
  size_t checks = 0;
  for (size_t n : {3, 4, 5}) {
    const Dataset ds = fixture::uniform(20, n, 100 + n);
    const FrequencyRank rank = frequency_rank(ds);
    for (size_t k : {0, 1, 2})
      for (size_t j : {0, 1, 2}) {
        NoiseProfile noise;
        noise.drop_terms = k;
        noise.add_spurious = j;
        std::vector<ReportAlignments> als;
        for (const auto& r : ds.reports) {
          const auto* gold = ds.gold_for(r.id);
          const RawCompletion raw = oracle_complete(r, *gold, noise, PromptKind::taco, &rank);
          const CodedOutput coded = distill(raw, r);
          als.push_back(evaluate_report(coded.links, gold->links, kDefaultFuzzyThreshold, emb).alignments);
        }
        const LinkScores scores = link_scores(als);
        for (MatchMode m : kMatchModes) {
          const ModeScores& s = scores[m];
          // recall = (n-k)/n and precision = (n-k)/(n-k+j) in integers.
          // With k = 0 the latter is the stated n/(n+j).
          const bool recall_ok = s.matched * n == s.gold * (n - k);
          const bool precision_ok = s.matched * (n - k + j) == s.predicted * (n - k);
          if (!recall_ok || !precision_ok) {
            std::ostringstream os;
            os << "n=" << n << " k=" << k << " j=" << j << " " << to_string(m) << ": matched=" << s.matched
               << " predicted=" << s.predicted << " gold=" << s.gold;
            return fail(os.str());
          }
          ++checks;
        }
      }
  }
  fs::remove_all(dir);
  return {Verdict::pass, std::to_string(checks) + " exact (n,k,j,mode) checks, recall (n-k)/n, precision n/(n+j)"};
}

// 3 -------------------------------------------------------------------------
std::string mutate(const std::string& s, fixture::Rng& rng) {
  std::string out = s;
  switch (rng.below(5)) {
    case 0: return out;  // identical
    case 1: out.insert(out.begin() + static_cast<std::ptrdiff_t>(rng.below(out.size() + 1)), 'a' + static_cast<char>(rng.below(26))); return out;
    case 2:
      if (out.size() > 1) out.erase(out.begin() + static_cast<std::ptrdiff_t>(rng.below(out.size())));
      return out;
    case 3: out[rng.below(out.size())] = 'a' + static_cast<char>(rng.below(26)); return out;
    default: {
      std::string up = out;
      for (auto& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      return up;
    }
  }
}

Outcome cascade_dominance() {
  fixture::Rng rng(2024);
  const auto& vocab = fixture::vocabulary();
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> pred, gold;
    const size_t ng = rng.below(7), np = rng.below(7);
    for (size_t i = 0; i < ng; ++i) gold.push_back(vocab[rng.below(vocab.size())].term);
    for (size_t i = 0; i < np; ++i) {
      const std::string base = (i < gold.size() && rng.below(3) != 0) ? gold[i] : vocab[rng.below(vocab.size())].term;
      pred.push_back(mutate(base, rng));
    }
    ReportAlignments al;
    for (MatchMode m : kMatchModes) al[static_cast<size_t>(m)] = match_terms(pred, gold, m);
    const LinkScores s = link_scores(std::vector<ReportAlignments>{al});
    const auto& em = s[MatchMode::em];
    const auto& emf = s[MatchMode::em_fuzzy];
    if (em.precision && (!emf.precision || *emf.precision < *em.precision))
      return fail("trial " + std::to_string(trial) + ": EMFuzzy precision below EM");
    if (em.recall && (!emf.recall || *emf.recall < *em.recall))
      return fail("trial " + std::to_string(trial) + ": EMFuzzy recall below EM");

    for (MatchMode m : {MatchMode::fuzzy, MatchMode::em_fuzzy}) {
      size_t previous = std::numeric_limits<size_t>::max();
      for (double t : {0.6, 0.7, 0.8, 0.9}) {
        const size_t pairs = match_terms(pred, gold, m, t).pairs.size();
        if (pairs > previous)
          return fail("trial " + std::to_string(trial) + ": " + std::string(to_string(m)) + " pair count rose at " +
                      std::to_string(t));
        previous = pairs;
      }
    }
  }
  return {Verdict::pass, "1000 random set pairs; EMFuzzy >= EM; pair counts non-increasing over 0.6..0.9"};
}

// 4 -------------------------------------------------------------------------
std::string random_word(fixture::Rng& rng) {
  static const std::vector<std::string> stems{"fever", "rash", "ache", "pain", "swelling", "tired", "chill", "red"};
  std::string w = stems[rng.below(stems.size())];
  if (rng.below(2)) w += " " + stems[rng.below(stems.size())];
  if (rng.below(3) == 0) w.insert(w.begin() + static_cast<std::ptrdiff_t>(rng.below(w.size())), 'a' + static_cast<char>(rng.below(26)));
  return w;
}

Outcome assignment_optimality() {
  fixture::Rng rng(99);
  size_t thresholded = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::string> pred, gold;
    const size_t np = 1 + rng.below(6), ng = 1 + rng.below(6);
    for (size_t i = 0; i < np; ++i) pred.push_back(random_word(rng));
    for (size_t i = 0; i < ng; ++i) gold.push_back(random_word(rng));

    std::vector<std::vector<oracle::Rational>> w(np, std::vector<oracle::Rational>(ng));
    for (size_t i = 0; i < np; ++i)
      for (size_t j = 0; j < ng; ++j) w[i][j] = oracle::fuzzy(pred[i], gold[j]);

    // Mention alignment: all pairs allowed.
    const oracle::Best best = oracle::brute_force(w);
    const MentionAlignment got = align_mentions(pred, gold);
    oracle::Rational total(0);
    for (const auto& p : got.pairs) {
      const auto pi = std::find(pred.begin(), pred.end(), p.predicted) - pred.begin();
      const auto gi = std::find(gold.begin(), gold.end(), p.gold) - gold.begin();
      total += w[static_cast<size_t>(pi)][static_cast<size_t>(gi)];
    }
    if (got.pairs.size() != best.pairs || total != best.total) {
      std::ostringstream os;
      os << "trial " << trial << ": alignment total " << total << " vs brute force " << best.total;
      return fail(os.str());
    }

    // Thresholded matching on the raw matrix: cardinality, then total.
    const oracle::Rational threshold(4, 5);
    std::vector<std::vector<bool>> allowed(np, std::vector<bool>(ng));
    Matrix<double> wd(np, std::vector<double>(ng));
    for (size_t i = 0; i < np; ++i)
      for (size_t j = 0; j < ng; ++j) {
        allowed[i][j] = w[i][j] >= threshold;
        wd[i][j] = boost::rational_cast<double>(w[i][j]);
      }
    const oracle::Best tb = oracle::brute_force(w, allowed);
    const auto tm = max_weight_matching(wd, [&](size_t i, size_t j) { return static_cast<bool>(allowed[i][j]); });
    oracle::Rational tt(0);
    for (auto [i, j] : tm) tt += w[i][j];
    if (tm.size() != tb.pairs || tt != tb.total) {
      std::ostringstream os;
      os << "trial " << trial << ": thresholded matching (" << tm.size() << ", " << tt << ") vs brute force ("
         << tb.pairs << ", " << tb.total << ")";
      return fail(os.str());
    }
    thresholded += tb.pairs;
  }
  return {Verdict::pass, "500 random instances (<= 6 per side), exact rational totals equal brute force; " +
                             std::to_string(thresholded) + " thresholded pairs checked"};
}

// 5 -------------------------------------------------------------------------
Outcome metric_oracles() {
  const double f = fuzzy_ratio("fever", "fevers");
  const double ref = boost::rational_cast<double>(oracle::fuzzy("fever", "fevers"));
  if (oracle::edit_distance("fever", "fevers") != 1) return fail("oracle edit distance is not 1");
  if (std::fabs(f - ref) > 1e-6 || std::fabs(f - 5.0 / 6.0) > 1e-6) return fail("fuzzy_ratio(fever, fevers) = " + std::to_string(f));

  // BLEU golden values, worked by hand:
  //  "redness at the injection site" vs "redness": c=5, r=1, p1=1/5,
  //  p2..p4 = (0+1)/(4+1), (0+1)/(3+1), (0+1)/(2+1); BP=1 (c>r);
  //  BLEU = (1/5 * 1/5 * 1/4 * 1/3)^(1/4) = 300^(-1/4).
  //  "fever" vs "fever lasted": N=1, p1=1, c=1 <= r=2, BP=exp(1-2) = e^-1.
  //  "lack of appetite" vs "lack appetite": N=3, p1=2/3, p2=(0+1)/(2+1),
  //  p3=(0+1)/(1+1); BP=1; BLEU=(2/3 * 1/3 * 1/2)^(1/3) = (1/9)^(1/3).
  const struct {
    const char* cand;
    const char* ref;
    double want;
  } golden[] = {
      {"redness at the injection site", "redness", std::pow(300.0, -0.25)},
      {"fever", "fever lasted", std::exp(-1.0)},
      {"lack of appetite", "lack appetite", std::cbrt(1.0 / 9.0)},
  };
  for (const auto& g : golden) {
    const double got = bleu(g.cand, std::string(g.ref));
    if (std::fabs(got - g.want) > 1e-9)
      return fail(std::string("BLEU(") + g.cand + ") = " + std::to_string(got) + ", want " + std::to_string(g.want));
  }

  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> dist(-10.0, 10.0);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> v(1 + static_cast<size_t>(i % 64)), v2;
    for (auto& x : v) x = dist(gen);
    v[0] = v[0] == 0.0 ? 1.0 : v[0];
    for (double x : v) v2.push_back(2.0 * x);
    const double c = cosine_similarity(v, v2);
    if (std::fabs(c - 1.0) > 1e-12) return fail("cos(v, 2v) = " + std::to_string(c));
  }
  return {Verdict::pass, "fuzzy(fever, fevers)=5/6 vs oracle; 3 BLEU golden values; cos(v,2v)=1 on 100 vectors"};
}

// 6 -------------------------------------------------------------------------
Outcome dataset_facts() {
  fs::path full;
  if (const char* env = std::getenv("SYMCODE_SYMPCODER_FULL")) full = env;
  else if (fs::exists("data/sympcoder_full.jsonl")) full = "data/sympcoder_full.jsonl";
  if (full.empty() || !fs::exists(full))
    return skip("released SYMPCODER file not present (set SYMCODE_SYMPCODER_FULL)");
  const Dataset ds = load_dataset(full);
  const size_t top = build_subset(ds, SubsetSelector::top_k, 50).reports.size();
  const size_t bottom = build_subset(ds, SubsetSelector::bottom_k, 50).reports.size();
  std::ostringstream os;
  os << "full=" << ds.reports.size() << " top-50=" << top << " bottom-50=" << bottom;
  if (ds.reports.size() != 487 || top != 427 || bottom != 22) return fail(os.str() + " (want 487/427/22)");
  return {Verdict::pass, os.str()};
}

// 7 -------------------------------------------------------------------------
Outcome distiller_corpus() {
  const fs::path path = fs::path(SYMCODE_TEST_DATA_DIR) / "distill_golden.json";
  std::ifstream in(path);
  if (!in) return fail("cannot open " + path.string());
  const auto doc = nlohmann::ordered_json::parse(in);
  size_t cases = 0, idempotent = 0;
  for (const auto& c : doc.at("cases")) {
    const std::string name = c.at("name").get<std::string>();
    Report report{"golden", "text", {}};
    for (const auto& t : c.at("suggested")) report.suggested.push_back({t.get<std::string>(), std::nullopt});
    const std::string raw = c.at("raw").get<std::string>();
    const bool truncated = c.value("truncated", false);
    ++cases;
    if (c.contains("error")) {
      try {
        distill(raw, report, truncated);
        return fail(name + ": expected MalformedOutput");
      } catch (const Error& e) {
        if (e.code() != Errc::malformed_output) return fail(name + ": wrong error " + e.what());
      }
      continue;
    }
    const CodedOutput got = distill(raw, report, truncated);
    TermLinks want;
    for (const auto& [k, v] : c.at("links").items()) want.push_back({k, v.get<std::vector<std::string>>()});
    if (got.links != want) return fail(name + ": links " + links_to_text(got.links));
    if (got.unlinkable_keys != c.at("unlinkable_keys").get<std::vector<std::string>>())
      return fail(name + ": unlinkable keys differ");
    if (got.salvage_notes != c.at("salvage_notes").get<std::vector<std::string>>()) {
      std::string notes;
      for (const auto& n : got.salvage_notes) notes += n + ";";
      return fail(name + ": salvage notes " + notes);
    }
    const CodedOutput again = distill(links_to_text(got.links), report);
    if (again.links != got.links) return fail(name + ": distill is not idempotent");
    ++idempotent;
  }
  if (cases != 30) return fail("golden file has " + std::to_string(cases) + " cases, want 30");
  return {Verdict::pass, std::to_string(cases) + " golden cases exact; idempotence on " + std::to_string(idempotent) +
                             " parseable cases"};
}

// 8 -------------------------------------------------------------------------
Outcome resumability() {
  const fs::path dir = scratch("c8");
  const Dataset ds = fixture::make({.reports = 20, .seed = 31}, "resume");
  const fs::path path = fixture::write(ds, dir);

  RunConfig whole = oracle_config(path, dir / "whole", "both");
  whole.backend.noise.perturb_mentions = 0.3;
  whole.backend.noise.add_spurious = 1;
  const RunSummary a = run_pipeline(whole);

  RunConfig parts = whole;
  parts.cache_dir = dir / "parts" / "cache";
  parts.output_dir = dir / "parts" / "out";
  const size_t half = a.items / 2;
  const RunSummary first = run_pipeline(parts, RunControl{[&](size_t done) { return done >= half; }});
  if (!first.interrupted) return fail("first run was not interrupted");
  {
    // Simulate a kill mid-append.
    std::ofstream torn(first.results, std::ios::app | std::ios::binary);
    torn << "{\"id\": \"R10";
  }
  const RunSummary second = run_pipeline(parts);
  if (second.interrupted || second.resumed == 0) return fail("restart did not resume");

  const auto x = load_results(a.results);
  const auto y = load_results(second.results);
  if (x != y) return fail("resumed results differ from the uninterrupted run");
  std::ostringstream os;
  os << "stopped after " << first.completed << "/" << first.items << ", resumed " << second.resumed
     << ", results value-equal (" << x.size() << " records)";
  fs::remove_all(dir);
  return {Verdict::pass, os.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle identity", oracle_identity},
      {"noise arithmetic", noise_arithmetic},
      {"cascade dominance", cascade_dominance},
      {"assignment optimality", assignment_optimality},
      {"metric oracles", metric_oracles},
      {"dataset facts", dataset_facts},
      {"distiller robustness", distiller_corpus},
      {"resumability", resumability},
  };
  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::fail ? "FAIL" : "SKIP";
    std::cout << tag << " [" << (i + 1) << "] " << criteria[i].first << ": " << o.detail << std::endl;
    if (o.verdict == Verdict::fail) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
