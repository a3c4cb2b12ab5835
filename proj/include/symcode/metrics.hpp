#pragma once

#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "symcode/assignment.hpp"
#include "symcode/corpus.hpp"
#include "symcode/distillation.hpp"
#include "symcode/embedding.hpp"
#include "symcode/error.hpp"
#include "symcode/similarity.hpp"
#include "symcode/text.hpp"

namespace symcode {

inline constexpr double kDefaultFuzzyThreshold = 0.8;

enum class MatchMode { em = 0, fuzzy = 1, em_fuzzy = 2 };
inline constexpr std::array<MatchMode, 3> kMatchModes{MatchMode::em, MatchMode::fuzzy, MatchMode::em_fuzzy};

constexpr std::string_view to_string(MatchMode m) {
  switch (m) {
    case MatchMode::em: return "EM";
    case MatchMode::fuzzy: return "Fuzzy";
    case MatchMode::em_fuzzy: return "EMFuzzy";
  }
  return "?";
}

inline MatchMode parse_match_mode(std::string_view s) {
  for (MatchMode m : kMatchModes)
    if (s == to_string(m)) return m;
  throw Error(Errc::parse, "unknown match mode '" + std::string(s) + "'");
}

enum class MatchKind { exact, fuzzy };

struct TermPair {
  std::string predicted;
  std::string gold;
  MatchKind kind = MatchKind::exact;
  double similarity = 1.0;

  bool operator==(const TermPair&) const = default;
};

struct TermAlignment {
  std::vector<TermPair> pairs;
  std::vector<std::string> unmatched_predicted;
  std::vector<std::string> unmatched_gold;

  size_t predicted_count() const { return pairs.size() + unmatched_predicted.size(); }
  size_t gold_count() const { return pairs.size() + unmatched_gold.size(); }

  bool operator==(const TermAlignment&) const = default;
};

// ---------------------------------------------------------------------------
// LINK: term matching
// ---------------------------------------------------------------------------

namespace metrics_detail {

struct Keyed {
  std::string original;
  std::string normalized;
};

/// Deduplicates under normalization and orders by normalized form.
inline std::vector<Keyed> canonical_terms(std::span<const std::string> terms) {
  std::vector<Keyed> out;
  std::unordered_set<std::string> seen;
  for (const auto& t : terms) {
    std::string n = normalize_term(t);
    if (seen.insert(n).second) out.push_back({t, std::move(n)});
  }
  std::sort(out.begin(), out.end(), [](const Keyed& a, const Keyed& b) {
    return a.normalized != b.normalized ? a.normalized < b.normalized : a.original < b.original;
  });
  return out;
}

inline void exact_pass(std::vector<Keyed>& pred, std::vector<Keyed>& gold, TermAlignment& out) {
  std::vector<Keyed> pred_left;
  std::vector<char> gold_used(gold.size(), 0);
  for (auto& p : pred) {
    auto it = std::lower_bound(gold.begin(), gold.end(), p.normalized,
                               [](const Keyed& g, const std::string& key) { return g.normalized < key; });
    if (it != gold.end() && it->normalized == p.normalized) {
      gold_used[static_cast<size_t>(it - gold.begin())] = 1;
      out.pairs.push_back({p.original, it->original, MatchKind::exact, 1.0});
    } else {
      pred_left.push_back(std::move(p));
    }
  }
  std::vector<Keyed> gold_left;
  for (size_t i = 0; i < gold.size(); ++i)
    if (!gold_used[i]) gold_left.push_back(std::move(gold[i]));
  pred = std::move(pred_left);
  gold = std::move(gold_left);
}

inline void fuzzy_pass(std::vector<Keyed>& pred, std::vector<Keyed>& gold, double threshold, TermAlignment& out) {
  Matrix<double> sim(pred.size(), std::vector<double>(gold.size(), 0.0));
  for (size_t i = 0; i < pred.size(); ++i)
    for (size_t j = 0; j < gold.size(); ++j) sim[i][j] = fuzzy_ratio(pred[i].normalized, gold[j].normalized);
  const auto matched = max_weight_matching(sim, [&](size_t i, size_t j) { return sim[i][j] >= threshold; });

  std::vector<char> pred_used(pred.size(), 0), gold_used(gold.size(), 0);
  for (auto [i, j] : matched) {
    pred_used[i] = gold_used[j] = 1;
    const bool same = pred[i].normalized == gold[j].normalized;
    out.pairs.push_back({pred[i].original, gold[j].original, same ? MatchKind::exact : MatchKind::fuzzy,
                         same ? 1.0 : sim[i][j]});
  }
  std::vector<Keyed> pred_left, gold_left;
  for (size_t i = 0; i < pred.size(); ++i)
    if (!pred_used[i]) pred_left.push_back(std::move(pred[i]));
  for (size_t j = 0; j < gold.size(); ++j)
    if (!gold_used[j]) gold_left.push_back(std::move(gold[j]));
  pred = std::move(pred_left);
  gold = std::move(gold_left);
}

}  // namespace metrics_detail

/// One-to-one alignment of predicted and gold terms.
///  EM: equal normalized forms.
///  Fuzzy: optimal matching over pairs with fuzzy_ratio >= threshold.
///  EMFuzzy: EM first, then Fuzzy over both sides' leftovers.
inline TermAlignment match_terms(std::span<const std::string> predicted, std::span<const std::string> gold,
                                 MatchMode mode, double threshold = kDefaultFuzzyThreshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw Error(Errc::argument, "fuzzy threshold must lie in (0, 1]");
  auto pred = metrics_detail::canonical_terms(predicted);
  auto gld = metrics_detail::canonical_terms(gold);
  TermAlignment out;
  if (mode == MatchMode::em || mode == MatchMode::em_fuzzy) metrics_detail::exact_pass(pred, gld, out);
  if (mode == MatchMode::fuzzy || mode == MatchMode::em_fuzzy) metrics_detail::fuzzy_pass(pred, gld, threshold, out);
  for (auto& p : pred) out.unmatched_predicted.push_back(std::move(p.original));
  for (auto& g : gld) out.unmatched_gold.push_back(std::move(g.original));
  return out;
}

struct ModeScores {
  size_t matched = 0;
  size_t predicted = 0;
  size_t gold = 0;
  std::optional<double> precision;  // null when nothing was predicted
  std::optional<double> recall;     // null when there is no gold

  bool operator==(const ModeScores&) const = default;
};

struct LinkScores {
  std::array<ModeScores, 3> modes;

  const ModeScores& operator[](MatchMode m) const { return modes[static_cast<size_t>(m)]; }
  ModeScores& operator[](MatchMode m) { return modes[static_cast<size_t>(m)]; }

  bool operator==(const LinkScores&) const = default;
};

using ReportAlignments = std::array<TermAlignment, 3>;

enum class Averaging { micro, macro };

inline ModeScores aggregate_mode(std::span<const ReportAlignments> reports, MatchMode mode, Averaging avg) {
  ModeScores s;
  double p_sum = 0.0, r_sum = 0.0;
  size_t p_n = 0, r_n = 0;
  for (const auto& rep : reports) {
    const TermAlignment& a = rep[static_cast<size_t>(mode)];
    s.matched += a.pairs.size();
    s.predicted += a.predicted_count();
    s.gold += a.gold_count();
    if (a.predicted_count() != 0) {
      p_sum += static_cast<double>(a.pairs.size()) / static_cast<double>(a.predicted_count());
      ++p_n;
    }
    if (a.gold_count() != 0) {
      r_sum += static_cast<double>(a.pairs.size()) / static_cast<double>(a.gold_count());
      ++r_n;
    }
  }
  if (avg == Averaging::micro) {
    if (s.predicted != 0) s.precision = static_cast<double>(s.matched) / static_cast<double>(s.predicted);
    if (s.gold != 0) s.recall = static_cast<double>(s.matched) / static_cast<double>(s.gold);
  } else {
    if (p_n != 0) s.precision = p_sum / static_cast<double>(p_n);
    if (r_n != 0) s.recall = r_sum / static_cast<double>(r_n);
  }
  return s;
}

/// Corpus-level precision and recall per mode, micro-averaged by default.
inline LinkScores link_scores(std::span<const ReportAlignments> reports, Averaging avg = Averaging::micro) {
  if (reports.empty()) throw Error(Errc::empty_input, "no alignments to score");
  LinkScores out;
  for (MatchMode m : kMatchModes) out[m] = aggregate_mode(reports, m, avg);
  return out;
}

// ---------------------------------------------------------------------------
// MATCH: mention fidelity
// ---------------------------------------------------------------------------

struct MentionPair {
  std::string predicted;
  std::string gold;
  double similarity = 0.0;
};

struct MentionAlignment {
  std::vector<MentionPair> pairs;
  size_t unpaired_predicted = 0;
  size_t unpaired_gold = 0;
};

/// Maximum-total-fuzzy_ratio one-to-one pairing of two mention lists (no
/// threshold, so min(|pred|, |gold|) pairs).
inline MentionAlignment align_mentions(std::span<const std::string> predicted, std::span<const std::string> gold) {
  Matrix<double> sim(predicted.size(), std::vector<double>(gold.size(), 0.0));
  for (size_t i = 0; i < predicted.size(); ++i)
    for (size_t j = 0; j < gold.size(); ++j) sim[i][j] = fuzzy_ratio(predicted[i], gold[j]);
  MentionAlignment out;
  for (auto [i, j] : max_weight_matching(sim)) out.pairs.push_back({predicted[i], gold[j], sim[i][j]});
  out.unpaired_predicted = predicted.size() - out.pairs.size();
  out.unpaired_gold = gold.size() - out.pairs.size();
  return out;
}

inline std::vector<std::string> bleu_tokens(std::string_view s) { return split_whitespace(normalize_term(s)); }

/// Sentence BLEU: modified n-gram precision for n = 1..min(4, |candidate|),
/// add-one smoothing for n >= 2, geometric mean, brevity penalty against
/// the closest reference length (shorter wins ties).
inline double bleu(std::string_view candidate, std::span<const std::string> references) {
  if (references.empty()) throw Error(Errc::argument, "BLEU needs at least one reference");
  const auto cand = bleu_tokens(candidate);
  if (cand.empty()) return 0.0;
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : references) refs.push_back(bleu_tokens(r));

  auto ngram_counts = [](const std::vector<std::string>& toks, size_t n) {
    std::map<std::vector<std::string>, size_t> counts;
    for (size_t i = 0; i + n <= toks.size(); ++i) ++counts[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
    return counts;
  };

  const size_t max_n = std::min<size_t>(4, cand.size());
  double log_sum = 0.0;
  for (size_t n = 1; n <= max_n; ++n) {
    const auto cand_counts = ngram_counts(cand, n);
    std::map<std::vector<std::string>, size_t> max_ref;
    for (const auto& r : refs)
      for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    size_t clipped = 0;
    for (const auto& [g, c] : cand_counts) {
      auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(c, it->second);
    }
    const size_t total = cand.size() - n + 1;
    double p;
    if (n == 1) {
      if (clipped == 0) return 0.0;
      p = static_cast<double>(clipped) / static_cast<double>(total);
    } else {
      p = static_cast<double>(clipped + 1) / static_cast<double>(total + 1);
    }
    log_sum += std::log(p);
  }

  const double c = static_cast<double>(cand.size());
  size_t closest = refs.front().size();
  for (const auto& r : refs) {
    const auto d = std::abs(static_cast<long long>(r.size()) - static_cast<long long>(cand.size()));
    const auto best = std::abs(static_cast<long long>(closest) - static_cast<long long>(cand.size()));
    if (d < best || (d == best && r.size() < closest)) closest = r.size();
  }
  const double r = static_cast<double>(closest);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(max_n));
}

inline double bleu(std::string_view candidate, std::string_view reference) {
  const std::string ref(reference);
  return bleu(candidate, std::span<const std::string>(&ref, 1));
}

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw Error(Errc::dimension, "vector lengths differ: " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw Error(Errc::degenerate_vector, "cosine similarity of a zero vector");
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

inline double cosine_similarity(const EmbeddingVector& u, const EmbeddingVector& v) {
  return cosine_similarity(std::span<const double>(u.values), std::span<const double>(v.values));
}

/// Scores for one aligned mention pair.
struct MatchTriple {
  std::string term;  // gold term the mentions belong to
  std::string predicted;
  std::string gold;
  double bleu = 0.0;
  double fuzzy = 0.0;
  double cosine = 0.0;

  bool operator==(const MatchTriple&) const = default;
};

struct MatchScores {
  std::optional<double> bleu;
  std::optional<double> fuzzy;
  std::optional<double> cosine;
  size_t pair_count = 0;
  size_t unpaired_count = 0;
  /// No aligned mention pair anywhere; the means are null.
  bool empty_coverage = true;

  /// Fraction of mentions on aligned terms that found a counterpart.
  std::optional<double> coverage() const {
    const size_t total = 2 * pair_count + unpaired_count;
    if (total == 0) return std::nullopt;
    return static_cast<double>(2 * pair_count) / static_cast<double>(total);
  }

  bool operator==(const MatchScores&) const = default;
};

enum class UnpairedPolicy { exclude, score_as_zero };

/// Arithmetic means of BLEU, fuzzy ratio and cosine over all aligned mention
/// pairs. Unpaired mentions are excluded unless scored as zero.
inline MatchScores match_scores(std::span<const MatchTriple> triples, size_t unpaired = 0,
                                UnpairedPolicy policy = UnpairedPolicy::exclude) {
  MatchScores out;
  out.pair_count = triples.size();
  out.unpaired_count = unpaired;
  out.empty_coverage = triples.empty();
  const size_t denom = triples.size() + (policy == UnpairedPolicy::score_as_zero ? unpaired : 0);
  if (triples.empty()) return out;
  double b = 0.0, f = 0.0, c = 0.0;
  for (const auto& t : triples) {
    b += t.bleu;
    f += t.fuzzy;
    c += t.cosine;
  }
  const auto d = static_cast<double>(denom);
  out.bleu = b / d;
  out.fuzzy = f / d;
  out.cosine = c / d;
  return out;
}

// ---------------------------------------------------------------------------
// Per-report evaluation
// ---------------------------------------------------------------------------

struct ReportEvaluation {
  ReportAlignments alignments;
  std::vector<MatchTriple> match_pairs;
  size_t unpaired_mentions = 0;
};

inline std::vector<std::string> link_terms(const TermLinks& links) {
  std::vector<std::string> out;
  out.reserve(links.size());
  for (const auto& l : links) out.push_back(l.term);
  return out;
}

inline const TermMentions* find_link(const TermLinks& links, std::string_view term) {
  const std::string key = normalize_term(term);
  for (const auto& l : links)
    if (normalize_term(l.term) == key) return &l;
  return nullptr;
}

/// LINK alignments for all three modes, then MATCH triples for every
/// mention pair under the EMFuzzy term pairs.
inline ReportEvaluation evaluate_report(const TermLinks& predicted, const TermLinks& gold, double threshold,
                                        EmbeddingService& embedder) {
  ReportEvaluation ev;
  const auto pred_terms = link_terms(predicted);
  const auto gold_terms = link_terms(gold);
  for (MatchMode m : kMatchModes) ev.alignments[static_cast<size_t>(m)] = match_terms(pred_terms, gold_terms, m, threshold);

  for (const auto& tp : ev.alignments[static_cast<size_t>(MatchMode::em_fuzzy)].pairs) {
    const TermMentions* pm = find_link(predicted, tp.predicted);
    const TermMentions* gm = find_link(gold, tp.gold);
    if (pm == nullptr || gm == nullptr) continue;
    const MentionAlignment ma = align_mentions(pm->mentions, gm->mentions);
    ev.unpaired_mentions += ma.unpaired_predicted + ma.unpaired_gold;
    for (const auto& mp : ma.pairs) {
      MatchTriple t{tp.gold, mp.predicted, mp.gold, bleu(mp.predicted, mp.gold), mp.similarity, 0.0};
      // Signed remote embeddings can go negative; reported scores stay in [0, 1].
      t.cosine = std::max(0.0, cosine_similarity(embedder.embed(mp.predicted), embedder.embed(mp.gold)));
      ev.match_pairs.push_back(std::move(t));
    }
  }
  return ev;
}

}  // namespace symcode
