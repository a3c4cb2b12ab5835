#pragma once

// Deterministic synthetic corpora for tests and the acceptance suite.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "symcode/corpus.hpp"

namespace fixture {

struct Vocab {
  std::string term;
  std::vector<std::string> mentions;
};

/// Terms chosen to be pairwise far apart under the fuzzy ratio (< 0.8).
inline const std::vector<Vocab>& vocabulary() {
  static const std::vector<Vocab> v{
      {"Pyrexia", {"fever", "high temperature", "feverish"}},
      {"Headache", {"headache", "head pain", "pounding head"}},
      {"Fatigue", {"fatigue", "tiredness", "exhaustion"}},
      {"Nausea", {"nausea", "felt sick", "queasy"}},
      {"Myalgia", {"muscle aches", "body aches", "sore muscles"}},
      {"Chills", {"chills", "shivering", "rigors"}},
      {"Dizziness", {"dizziness", "lightheaded", "dizzy spells"}},
      {"Vomiting", {"vomiting", "threw up", "emesis"}},
      {"Arthralgia", {"joint pain", "aching joints"}},
      {"Injection site erythema", {"redness", "redness at the injection site", "red arm"}},
      {"Decreased appetite", {"lack of appetite", "not eating", "poor appetite"}},
      {"Dyspnoea", {"shortness of breath", "trouble breathing"}},
      {"Syncope", {"fainted", "passed out", "syncopal episode"}},
      {"Urticaria", {"hives", "welts"}},
      {"Pruritus", {"itching", "itchy skin"}},
      {"Diarrhoea", {"diarrhea", "loose stools"}},
      {"Lymphadenopathy", {"swollen lymph nodes", "swollen glands"}},
      {"Tachycardia", {"racing heart", "heart rate of 130"}},
      {"Insomnia", {"could not sleep", "sleeplessness"}},
      {"Malaise", {"malaise", "felt unwell"}},
      {"Chest pain", {"chest pain", "tight chest"}},
      {"Rash", {"rash", "spots on the skin"}},
      {"Paraesthesia", {"tingling", "pins and needles"}},
      {"Abdominal pain", {"stomach ache", "abdominal cramps"}},
      {"Cough", {"cough", "coughing"}},
  };
  return v;
}

/// Small portable RNG so fixtures do not depend on library distributions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed * 6364136223846793005ULL + 1442695040888963407ULL) {}
  uint64_t next() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 2685821657736338717ULL;
  }
  size_t below(size_t n) { return static_cast<size_t>(next() % n); }

 private:
  uint64_t state_;
};

struct Options {
  size_t reports = 25;
  size_t min_terms = 1;
  size_t max_terms = 6;
  size_t distractors = 2;  // suggested but unlinked
  size_t max_mentions = 2;
  uint64_t seed = 7;
};

/// Reports whose text embeds every gold mention; suggested lists hold the
/// gold terms (in shuffled order) plus distractors.
inline symcode::Dataset make(const Options& o = {}, const std::string& name = "fixture") {
  const auto& vocab = vocabulary();
  Rng rng(o.seed);
  symcode::Dataset ds;
  ds.name = name;
  for (size_t r = 0; r < o.reports; ++r) {
    const size_t n = o.min_terms + rng.below(o.max_terms - o.min_terms + 1);
    std::vector<size_t> order(vocab.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    symcode::Report rep;
    rep.id = "R" + std::to_string(1000 + r);
    symcode::GoldAnnotation gold;
    gold.report_id = rep.id;
    std::string text = "Patient received the vaccine.";
    for (size_t k = 0; k < n; ++k) {
      const Vocab& v = vocab[order[k]];
      const size_t count = 1 + rng.below(std::min(o.max_mentions, v.mentions.size()));
      const size_t start = rng.below(v.mentions.size());
      std::vector<std::string> mentions;
      for (size_t m = 0; m < count; ++m) mentions.push_back(v.mentions[(start + m) % v.mentions.size()]);
      for (const auto& m : mentions) text += " Reported " + m + " on day " + std::to_string(1 + rng.below(5)) + ".";
      gold.links.push_back({v.term, mentions});
    }
    std::vector<symcode::SuggestedTerm> suggested;
    for (size_t k = 0; k < n + o.distractors && k < order.size(); ++k)
      suggested.push_back({vocab[order[k]].term, "MDR" + std::to_string(10000000 + order[k])});
    for (size_t i = suggested.size(); i > 1; --i) std::swap(suggested[i - 1], suggested[rng.below(i)]);
    rep.suggested = std::move(suggested);
    rep.text = std::move(text);
    ds.gold.emplace(rep.id, std::move(gold));
    ds.reports.push_back(std::move(rep));
  }
  return ds;
}

/// Every report has exactly n gold terms.
inline symcode::Dataset uniform(size_t reports, size_t n, uint64_t seed = 11) {
  Options o;
  o.reports = reports;
  o.min_terms = n;
  o.max_terms = n;
  o.seed = seed;
  return make(o, "uniform-" + std::to_string(n));
}

inline std::filesystem::path write(const symcode::Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto path = dir / (ds.name + ".jsonl");
  symcode::save_dataset(ds, path);
  return path;
}

}  // namespace fixture
