#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "symcode/backends.hpp"
#include "symcode/corpus.hpp"
#include "symcode/error.hpp"
#include "symcode/prompting.hpp"
#include "symcode/text.hpp"

namespace symcode {

/// Controlled degradation of gold answers.
struct NoiseProfile {
  size_t drop_terms = 0;        // remove the k lowest-frequency linked terms
  size_t add_spurious = 0;      // add j suggested-but-unlinked terms
  double perturb_mentions = 0;  // fraction of mentions given a one-character edit

  bool zero() const { return drop_terms == 0 && add_spurious == 0 && perturb_mentions == 0.0; }

  void validate() const {
    if (!(perturb_mentions >= 0.0 && perturb_mentions <= 1.0))
      throw Error(Errc::argument, "perturb_mentions must lie in [0, 1]");
  }
};

/// Normalized term -> position in corpus frequency order (0 = most frequent).
using FrequencyRank = std::unordered_map<std::string, size_t>;

inline FrequencyRank frequency_rank(const Dataset& dataset) {
  FrequencyRank rank;
  const auto freqs = symptom_frequencies(dataset);
  for (size_t i = 0; i < freqs.size(); ++i) rank.emplace(freqs[i].normalized, i);
  return rank;
}

inline constexpr std::string_view kOracleModel = "oracle";

/// Gold links after noise. Without a rank, later links count as rarer.
inline TermLinks noisy_links(const Report& report, const GoldAnnotation& gold, const NoiseProfile& noise,
                             const FrequencyRank* rank = nullptr) {
  noise.validate();
  TermLinks links = gold.links;
  if (noise.drop_terms > links.size())
    throw Error(Errc::range, "report " + report.id + ": cannot drop " + std::to_string(noise.drop_terms) + " of " +
                                 std::to_string(links.size()) + " linked terms");

  if (noise.drop_terms > 0) {
    std::vector<size_t> order(links.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto rank_of = [&](size_t i) -> size_t {
      if (rank != nullptr) {
        if (auto it = rank->find(normalize_term(links[i].term)); it != rank->end()) return it->second;
        return rank->size();
      }
      return i;
    };
    // Rarest first; equal ranks drop the later link first.
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      const size_t ra = rank_of(a), rb = rank_of(b);
      return ra != rb ? ra > rb : a > b;
    });
    std::unordered_set<size_t> dropped(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(noise.drop_terms));
    TermLinks kept;
    for (size_t i = 0; i < links.size(); ++i)
      if (!dropped.count(i)) kept.push_back(std::move(links[i]));
    links = std::move(kept);
  }

  if (noise.add_spurious > 0) {
    std::unordered_set<std::string> linked;
    for (const auto& l : gold.links) linked.insert(normalize_term(l.term));
    std::vector<std::string> candidates;
    for (const auto& s : report.suggested)
      if (!linked.count(normalize_term(s.term))) candidates.push_back(s.term);
    if (noise.add_spurious > candidates.size())
      throw Error(Errc::range, "report " + report.id + ": only " + std::to_string(candidates.size()) +
                                   " suggested terms are unlinked, cannot add " + std::to_string(noise.add_spurious));
    for (size_t i = 0; i < noise.add_spurious; ++i)
      links.push_back({candidates[i], {"reported " + normalize_term(candidates[i])}});
  }

  if (noise.perturb_mentions > 0.0) {
    struct Slot {
      uint64_t key;
      size_t link;
      size_t mention;
    };
    std::vector<Slot> slots;
    for (size_t i = 0; i < links.size(); ++i)
      for (size_t j = 0; j < links[i].mentions.size(); ++j)
        slots.push_back({fnv1a64(report.id + '\x1f' + std::to_string(i) + '\x1f' + std::to_string(j)), i, j});
    std::sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) {
      return a.key != b.key ? a.key < b.key : std::tie(a.link, a.mention) < std::tie(b.link, b.mention);
    });
    const auto count = static_cast<size_t>(std::llround(noise.perturb_mentions * static_cast<double>(slots.size())));
    for (size_t s = 0; s < count; ++s) links[slots[s].link].mentions[slots[s].mention] += 'x';
  }
  return links;
}

inline std::string oracle_text(PromptKind kind, const TermLinks& links) {
  if (kind == PromptKind::tasi_phase1) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& l : links)
      for (const auto& m : l.mentions) list.push_back(m);
    return list.dump();
  }
  return links_to_json(links).dump();
}

/// Well-formed answer derived from gold. With zero noise, distilling it
/// reproduces the gold links.
inline RawCompletion oracle_complete(const Report& report, const GoldAnnotation& gold, const NoiseProfile& noise,
                                     PromptKind kind = PromptKind::taco, const FrequencyRank* rank = nullptr) {
  RawCompletion out;
  out.text = oracle_text(kind, noisy_links(report, gold, noise, rank));
  out.model = std::string(kOracleModel);
  out.prompt_fingerprint = hex64(fnv1a64(std::string(to_string(kind)) + '\x1f' + report.id));
  return out;
}

/// Chat backend answering every prompt from the dataset's gold annotations.
class OracleBackend : public ChatBackend {
 public:
  OracleBackend(std::shared_ptr<const Dataset> dataset, NoiseProfile noise)
      : dataset_(std::move(dataset)), noise_(noise) {
    if (!dataset_) throw Error(Errc::config, "oracle backend needs a dataset");
    noise_.validate();
    if (dataset_->has_gold()) rank_ = frequency_rank(*dataset_);
  }

  std::string name() const override { return "mock-oracle"; }

  std::string send(const Prompt& prompt, const InferenceParams& params) override {
    ++calls_;
    const Report* report = dataset_->find(prompt.report_id);
    if (report == nullptr) throw TransportError(404, false, "oracle has no report " + prompt.report_id);
    const GoldAnnotation* gold = dataset_->gold_for(prompt.report_id);
    // Unannotated reports get an empty but well-formed answer.
    if (gold == nullptr) return make_chat_body(oracle_text(prompt.kind, {}), params.model);
    return make_chat_body(oracle_complete(*report, *gold, noise_, prompt.kind, &rank_).text, params.model);
  }

  int calls() const { return calls_.load(); }

 private:
  std::shared_ptr<const Dataset> dataset_;
  NoiseProfile noise_;
  FrequencyRank rank_;
  std::atomic<int> calls_{0};
};

}  // namespace symcode
