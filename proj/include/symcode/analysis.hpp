#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "symcode/corpus.hpp"
#include "symcode/distillation.hpp"
#include "symcode/embedding.hpp"
#include "symcode/error.hpp"
#include "symcode/metrics.hpp"
#include "symcode/prompting.hpp"

namespace symcode {

// ---------------------------------------------------------------------------
// Evaluation records
// ---------------------------------------------------------------------------

/// TASI phase-1 trace.
struct PhaseRecord {
  std::string raw_ref;
  std::string raw;
  bool truncated = false;
  std::vector<std::string> mentions;
  std::vector<std::string> salvage_notes;
  bool malformed = false;

  bool operator==(const PhaseRecord&) const = default;
};

struct EvaluationRecord {
  std::string report_id;
  std::string model;
  Strategy strategy = Strategy::taco;
  std::string raw_ref;  // prompt fingerprint of the final completion
  std::string raw;
  bool truncated = false;
  std::optional<PhaseRecord> phase1;
  CodedOutput coded;
  bool malformed = false;
  TermLinks gold;
  ReportAlignments alignments;
  std::vector<MatchTriple> match_pairs;
  size_t unpaired_mentions = 0;

  const TermAlignment& alignment(MatchMode m) const { return alignments[static_cast<size_t>(m)]; }

  bool operator==(const EvaluationRecord&) const = default;
};

/// Fills alignments and MATCH triples from the coded output and gold.
inline void score_record(EvaluationRecord& rec, double threshold, EmbeddingService& embedder) {
  ReportEvaluation ev = evaluate_report(rec.coded.links, rec.gold, threshold, embedder);
  rec.alignments = std::move(ev.alignments);
  rec.match_pairs = std::move(ev.match_pairs);
  rec.unpaired_mentions = ev.unpaired_mentions;
}

namespace analysis_detail {

using ojson = nlohmann::ordered_json;

inline ojson alignment_to_json(const TermAlignment& a) {
  ojson pairs = ojson::array();
  for (const auto& p : a.pairs)
    pairs.push_back({{"pred", p.predicted},
                     {"gold", p.gold},
                     {"kind", p.kind == MatchKind::exact ? "exact" : "fuzzy"},
                     {"similarity", p.similarity}});
  return {{"pairs", std::move(pairs)}, {"unmatched_predicted", a.unmatched_predicted}, {"unmatched_gold", a.unmatched_gold}};
}

inline TermAlignment alignment_from_json(const ojson& j) {
  TermAlignment a;
  for (const auto& p : j.at("pairs")) {
    const std::string kind = p.at("kind").get<std::string>();
    if (kind != "exact" && kind != "fuzzy") throw Error(Errc::schema, "unknown pair kind '" + kind + "'");
    a.pairs.push_back({p.at("pred").get<std::string>(), p.at("gold").get<std::string>(),
                       kind == "exact" ? MatchKind::exact : MatchKind::fuzzy, p.at("similarity").get<double>()});
  }
  a.unmatched_predicted = j.at("unmatched_predicted").get<std::vector<std::string>>();
  a.unmatched_gold = j.at("unmatched_gold").get<std::vector<std::string>>();
  return a;
}

inline TermLinks plain_links_from_json(const ojson& obj) {
  if (!obj.is_object()) throw Error(Errc::schema, "links must be an object");
  TermLinks links;
  for (const auto& [term, mentions] : obj.items()) links.push_back({term, mentions.get<std::vector<std::string>>()});
  return links;
}

}  // namespace analysis_detail

inline nlohmann::ordered_json evaluation_to_json(const EvaluationRecord& r) {
  using analysis_detail::ojson;
  ojson j;
  j["id"] = r.report_id;
  j["model"] = r.model;
  j["strategy"] = std::string(to_string(r.strategy));
  j["raw_ref"] = r.raw_ref;
  j["raw"] = r.raw;
  j["truncated"] = r.truncated;
  if (r.phase1) {
    j["phase1"] = {{"raw_ref", r.phase1->raw_ref},         {"raw", r.phase1->raw},
                   {"truncated", r.phase1->truncated},     {"mentions", r.phase1->mentions},
                   {"salvage_notes", r.phase1->salvage_notes}, {"malformed", r.phase1->malformed}};
  } else {
    j["phase1"] = nullptr;
  }
  j["links"] = links_to_json(r.coded.links);
  j["unlinkable_keys"] = r.coded.unlinkable_keys;
  j["salvage_notes"] = r.coded.salvage_notes;
  j["malformed"] = r.malformed;
  j["gold"] = links_to_json(r.gold);
  ojson al = ojson::object();
  for (MatchMode m : kMatchModes) al[std::string(to_string(m))] = analysis_detail::alignment_to_json(r.alignment(m));
  j["alignments"] = std::move(al);
  ojson mp = ojson::array();
  for (const auto& t : r.match_pairs)
    mp.push_back({{"term", t.term}, {"pred", t.predicted}, {"gold", t.gold}, {"bleu", t.bleu}, {"fuzzy", t.fuzzy}, {"cosine", t.cosine}});
  j["match_pairs"] = std::move(mp);
  j["unpaired_mentions"] = r.unpaired_mentions;
  return j;
}

inline EvaluationRecord evaluation_from_json(const nlohmann::ordered_json& j) {
  EvaluationRecord r;
  try {
    r.report_id = j.at("id").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.strategy = parse_strategy(j.at("strategy").get<std::string>());
    r.raw_ref = j.at("raw_ref").get<std::string>();
    r.raw = j.value("raw", "");
    r.truncated = j.value("truncated", false);
    if (auto p = j.find("phase1"); p != j.end() && p->is_object()) {
      PhaseRecord ph;
      ph.raw_ref = p->value("raw_ref", "");
      ph.raw = p->value("raw", "");
      ph.truncated = p->value("truncated", false);
      ph.mentions = p->value("mentions", std::vector<std::string>{});
      ph.salvage_notes = p->value("salvage_notes", std::vector<std::string>{});
      ph.malformed = p->value("malformed", false);
      r.phase1 = std::move(ph);
    }
    r.coded.report_id = r.report_id;
    r.coded.links = analysis_detail::plain_links_from_json(j.at("links"));
    r.coded.unlinkable_keys = j.value("unlinkable_keys", std::vector<std::string>{});
    r.coded.salvage_notes = j.value("salvage_notes", std::vector<std::string>{});
    r.malformed = j.value("malformed", false);
    if (auto g = j.find("gold"); g != j.end()) r.gold = analysis_detail::plain_links_from_json(*g);
    const auto& al = j.at("alignments");
    for (MatchMode m : kMatchModes) {
      const std::string key(to_string(m));
      if (!al.contains(key)) throw Error(Errc::schema, "record " + r.report_id + " lacks the " + key + " alignment");
      r.alignments[static_cast<size_t>(m)] = analysis_detail::alignment_from_json(al.at(key));
    }
    for (const auto& t : j.at("match_pairs"))
      r.match_pairs.push_back({t.value("term", ""), t.at("pred").get<std::string>(), t.at("gold").get<std::string>(),
                               t.at("bleu").get<double>(), t.at("fuzzy").get<double>(), t.at("cosine").get<double>()});
    r.unpaired_mentions = j.value("unpaired_mentions", size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::schema, std::string("bad results record: ") + e.what());
  }
  return r;
}

inline void write_record(std::ostream& out, const EvaluationRecord& r) { out << evaluation_to_json(r).dump() << '\n'; }

/// Reads a results file. A final line without a newline that fails to parse
/// is treated as a torn append from an interrupted run and skipped.
inline std::vector<EvaluationRecord> load_results(const std::filesystem::path& path, bool* torn_tail = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open results file " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (torn_tail != nullptr) *torn_tail = false;
  std::vector<EvaluationRecord> out;
  size_t pos = 0, line_no = 0;
  while (pos < content.size()) {
    const size_t nl = content.find('\n', pos);
    const bool last = nl == std::string::npos;
    const std::string line = content.substr(pos, last ? std::string::npos : nl - pos);
    pos = last ? content.size() : nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    auto j = nlohmann::ordered_json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      if (last) {
        if (torn_tail != nullptr) *torn_tail = true;
        break;
      }
      throw Error(Errc::parse, path.string() + ":" + std::to_string(line_no) + ": malformed record");
    }
    try {
      out.push_back(evaluation_from_json(j));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.message());
    }
  }
  return out;
}

inline void save_results(const std::filesystem::path& path, const std::vector<EvaluationRecord>& records) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write " + tmp.string());
    for (const auto& r : records) write_record(out, r);
    if (!out) throw Error(Errc::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(Errc::io, "cannot move results into place at " + path.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct ScoreOptions {
  Averaging averaging = Averaging::micro;
  UnpairedPolicy unpaired = UnpairedPolicy::exclude;
};

struct ScoreRow {
  std::string model;
  std::string strategy;
  size_t report_count = 0;
  LinkScores link;
  MatchScores match;

  bool operator==(const ScoreRow&) const = default;
};

inline ScoreRow score_records(std::span<const EvaluationRecord* const> records, const ScoreOptions& opts = {}) {
  if (records.empty()) throw Error(Errc::empty_input, "no records to score");
  ScoreRow row;
  row.model = records.front()->model;
  row.strategy = std::string(to_string(records.front()->strategy));
  row.report_count = records.size();
  std::vector<ReportAlignments> als;
  std::vector<MatchTriple> triples;
  size_t unpaired = 0;
  for (const auto* r : records) {
    als.push_back(r->alignments);
    triples.insert(triples.end(), r->match_pairs.begin(), r->match_pairs.end());
    unpaired += r->unpaired_mentions;
  }
  row.link = link_scores(als, opts.averaging);
  row.match = match_scores(triples, unpaired, opts.unpaired);
  return row;
}

using GroupKey = std::pair<std::string, std::string>;  // (model, strategy)

inline std::map<GroupKey, std::vector<const EvaluationRecord*>> group_records(const std::vector<EvaluationRecord>& records) {
  std::map<GroupKey, std::vector<const EvaluationRecord*>> groups;
  for (const auto& r : records) groups[{r.model, std::string(to_string(r.strategy))}].push_back(&r);
  return groups;
}

/// One row per (model, strategy), ordered by model then strategy.
inline std::vector<ScoreRow> aggregate(const std::vector<EvaluationRecord>& records, const ScoreOptions& opts = {}) {
  std::vector<ScoreRow> rows;
  for (const auto& [key, members] : group_records(records)) rows.push_back(score_records(members, opts));
  return rows;
}

struct SubsetGroup {
  std::string subset;
  std::string model;
  std::string strategy;
  bool empty = true;  // no records of this group fall in the subset
  std::optional<ScoreRow> scores;
};

/// Scores recomputed over the records that fall in each subset, for every
/// (model, strategy) present. Groups without coverage are flagged empty.
inline std::vector<SubsetGroup> subset_compare(const std::vector<EvaluationRecord>& records,
                                               const std::vector<const Dataset*>& subsets, const ScoreOptions& opts = {}) {
  std::vector<SubsetGroup> out;
  const auto groups = group_records(records);
  for (const Dataset* subset : subsets) {
    std::unordered_set<std::string> ids;
    for (const auto& r : subset->reports) ids.insert(r.id);
    for (const auto& [key, members] : groups) {
      std::vector<const EvaluationRecord*> in;
      for (const auto* r : members)
        if (ids.count(r->report_id)) in.push_back(r);
      SubsetGroup g{subset->name, key.first, key.second, in.empty(), std::nullopt};
      if (!in.empty()) g.scores = score_records(in, opts);
      out.push_back(std::move(g));
    }
  }
  return out;
}

inline std::vector<SubsetGroup> subset_compare(const std::vector<EvaluationRecord>& records, const Dataset& common,
                                               const Dataset& rare, const ScoreOptions& opts = {}) {
  return subset_compare(records, {&common, &rare}, opts);
}

// ---------------------------------------------------------------------------
// Per-symptom breakdown
// ---------------------------------------------------------------------------

struct MentionVariant {
  std::string display;  // most frequent raw form
  size_t count = 0;

  bool operator==(const MentionVariant&) const = default;
};

struct SymptomBreakdown {
  std::string term;
  size_t report_count = 0;
  std::optional<double> precision;  // EMFuzzy, over the scanned records
  std::optional<double> recall;
  std::optional<double> mean_cosine;
  std::vector<MentionVariant> gold_variants;   // by count, then display form
  std::vector<MentionVariant> model_variants;
};

namespace analysis_detail {

class VariantTally {
 public:
  void add(const std::string& raw) {
    auto& slot = groups_[normalize_term(raw)];
    ++slot.total;
    ++slot.forms[raw];
  }

  std::vector<MentionVariant> result() const {
    std::vector<MentionVariant> out;
    for (const auto& [norm, g] : groups_) {
      auto best = g.forms.begin();
      for (auto it = g.forms.begin(); it != g.forms.end(); ++it)
        if (it->second > best->second) best = it;
      out.push_back({best->first, g.total});
    }
    std::sort(out.begin(), out.end(), [](const MentionVariant& a, const MentionVariant& b) {
      return a.count != b.count ? a.count > b.count : a.display < b.display;
    });
    return out;
  }

 private:
  struct Group {
    size_t total = 0;
    std::map<std::string, size_t> forms;  // ordered so ties pick the smallest form
  };
  std::map<std::string, Group> groups_;
};

inline std::vector<std::string> near_misses(const std::string& term, const std::set<std::string>& known) {
  std::vector<std::pair<double, std::string>> scored;
  for (const auto& k : known) scored.emplace_back(fuzzy_ratio(term, k), k);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> out;
  for (const auto& [score, k] : scored) {
    if (out.size() == 3 || score < 0.5) break;
    out.push_back(k);
  }
  return out;
}

}  // namespace analysis_detail

/// Gold and model mention variants per term, with EMFuzzy precision and
/// recall restricted to that term over the given records.
inline std::vector<SymptomBreakdown> symptom_breakdown(const std::vector<EvaluationRecord>& records,
                                                       const Dataset& dataset, const std::vector<std::string>& terms) {
  std::set<std::string> known;
  std::map<std::string, std::string> display;
  for (const auto& [id, g] : dataset.gold)
    for (const auto& l : g.links) {
      known.insert(normalize_term(l.term));
      display.emplace(normalize_term(l.term), l.term);
    }

  std::vector<SymptomBreakdown> out;
  for (const auto& requested : terms) {
    const std::string norm = normalize_term(requested);
    if (!known.count(norm)) {
      std::string msg = "unknown term '" + requested + "'";
      const auto near = analysis_detail::near_misses(norm, known);
      if (!near.empty()) {
        msg += "; did you mean";
        for (size_t i = 0; i < near.size(); ++i) msg += (i == 0 ? " '" : ", '") + display[near[i]] + "'";
        msg += "?";
      }
      throw Error(Errc::unknown_term, msg);
    }

    SymptomBreakdown b;
    b.term = display[norm];
    analysis_detail::VariantTally gold_tally, model_tally;
    for (const auto& r : dataset.reports) {
      const auto* g = dataset.gold_for(r.id);
      if (g == nullptr) continue;
      bool seen = false;
      for (const auto& l : g->links) {
        if (normalize_term(l.term) != norm) continue;
        seen = true;
        for (const auto& m : l.mentions) gold_tally.add(m);
      }
      if (seen) ++b.report_count;
    }

    size_t matched = 0, predicted = 0, gold = 0, cos_n = 0;
    double cos_sum = 0.0;
    for (const auto& rec : records) {
      for (const auto& l : rec.coded.links)
        if (normalize_term(l.term) == norm)
          for (const auto& m : l.mentions) model_tally.add(m);
      const TermAlignment& a = rec.alignment(MatchMode::em_fuzzy);
      for (const auto& p : a.pairs) {
        if (normalize_term(p.predicted) == norm) ++predicted;
        if (normalize_term(p.gold) == norm) {
          ++gold;
          ++matched;
        }
      }
      for (const auto& t : a.unmatched_predicted)
        if (normalize_term(t) == norm) ++predicted;
      for (const auto& t : a.unmatched_gold)
        if (normalize_term(t) == norm) ++gold;
      for (const auto& t : rec.match_pairs)
        if (normalize_term(t.term) == norm) {
          cos_sum += t.cosine;
          ++cos_n;
        }
    }
    if (predicted != 0) b.precision = static_cast<double>(matched) / static_cast<double>(predicted);
    if (gold != 0) b.recall = static_cast<double>(matched) / static_cast<double>(gold);
    if (cos_n != 0) b.mean_cosine = cos_sum / static_cast<double>(cos_n);
    b.gold_variants = gold_tally.result();
    b.model_variants = model_tally.result();
    out.push_back(std::move(b));
  }
  return out;
}

inline nlohmann::ordered_json breakdown_to_json(const std::string& dataset_name, const std::vector<SymptomBreakdown>& rows) {
  using analysis_detail::ojson;
  auto opt = [](const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); };
  auto variants = [](const std::vector<MentionVariant>& vs) {
    ojson a = ojson::array();
    for (const auto& v : vs) a.push_back({{"mention", v.display}, {"count", v.count}});
    return a;
  };
  ojson terms = ojson::array();
  for (const auto& b : rows)
    terms.push_back({{"term", b.term},
                     {"report_count", b.report_count},
                     {"precision", opt(b.precision)},
                     {"recall", opt(b.recall)},
                     {"mean_cosine", opt(b.mean_cosine)},
                     {"gold_variants", variants(b.gold_variants)},
                     {"model_variants", variants(b.model_variants)}});
  return {{"dataset", dataset_name}, {"terms", std::move(terms)}};
}

inline std::string variants_text(const std::vector<MentionVariant>& vs) {
  std::string s;
  for (size_t i = 0; i < vs.size(); ++i) s += (i ? ", " : "") + vs[i].display + " (" + std::to_string(vs[i].count) + ")";
  return s.empty() ? "-" : s;
}

// ---------------------------------------------------------------------------
// Exhibits
// ---------------------------------------------------------------------------

enum class LinkMark { correct, missing, spurious };

constexpr std::string_view to_string(LinkMark m) {
  switch (m) {
    case LinkMark::correct: return "correct";
    case LinkMark::missing: return "missing";
    case LinkMark::spurious: return "spurious";
  }
  return "?";
}

struct ExhibitEntry {
  std::string term;
  LinkMark mark = LinkMark::correct;
  std::vector<std::string> predicted;
  std::vector<std::string> gold;
  std::vector<MentionPair> divergent;  // aligned mentions with fuzzy ratio < 1
};

struct ModelExhibit {
  std::string model;
  std::string strategy;
  std::vector<ExhibitEntry> entries;  // gold terms first, then spurious
};

struct Exhibit {
  std::string report_id;
  TermLinks gold;
  std::vector<ModelExhibit> models;
};

/// Side-by-side gold and model links for one report, per-term marked.
inline Exhibit exhibit(const std::string& report_id, const std::vector<EvaluationRecord>& records) {
  Exhibit ex;
  ex.report_id = report_id;
  bool any = false;
  for (const auto& rec : records) {
    if (rec.report_id != report_id) continue;
    if (!any) ex.gold = rec.gold;
    any = true;
    ModelExhibit me{rec.model, std::string(to_string(rec.strategy)), {}};
    const TermAlignment& a = rec.alignment(MatchMode::em_fuzzy);
    for (const auto& g : rec.gold) {
      ExhibitEntry e;
      e.term = g.term;
      e.gold = g.mentions;
      e.mark = LinkMark::missing;
      for (const auto& p : a.pairs) {
        if (normalize_term(p.gold) != normalize_term(g.term)) continue;
        e.mark = LinkMark::correct;
        if (const auto* pm = find_link(rec.coded.links, p.predicted)) {
          e.predicted = pm->mentions;
          for (const auto& mp : align_mentions(pm->mentions, g.mentions).pairs)
            if (mp.similarity < 1.0) e.divergent.push_back(mp);
        }
        break;
      }
      me.entries.push_back(std::move(e));
    }
    for (const auto& t : a.unmatched_predicted) {
      ExhibitEntry e;
      e.term = t;
      e.mark = LinkMark::spurious;
      if (const auto* pm = find_link(rec.coded.links, t)) e.predicted = pm->mentions;
      me.entries.push_back(std::move(e));
    }
    ex.models.push_back(std::move(me));
  }
  if (!any) throw Error(Errc::not_found, "no records for report " + report_id);
  return ex;
}

inline std::string exhibit_text(const Exhibit& ex) {
  auto list = [](const std::vector<std::string>& v) {
    std::string s = "[";
    for (size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
    return s + "]";
  };
  std::ostringstream os;
  os << "Report " << ex.report_id << "\n";
  os << "  Gold Labels: ";
  for (size_t i = 0; i < ex.gold.size(); ++i) os << (i ? ", " : "") << ex.gold[i].term << ": " << list(ex.gold[i].mentions);
  os << "\n";
  for (const auto& m : ex.models) {
    os << "  " << m.model << " (" << m.strategy << ")\n";
    for (const auto& e : m.entries) {
      os << "    [" << to_string(e.mark) << "] " << e.term << ": " << list(e.predicted);
      if (!e.divergent.empty()) {
        os << "  divergent:";
        for (const auto& d : e.divergent) os << " '" << d.predicted << "' vs '" << d.gold << "'";
      }
      os << "\n";
    }
  }
  return os.str();
}

inline nlohmann::ordered_json exhibit_to_json(const Exhibit& ex) {
  using analysis_detail::ojson;
  ojson models = ojson::array();
  for (const auto& m : ex.models) {
    ojson entries = ojson::array();
    for (const auto& e : m.entries) {
      ojson div = ojson::array();
      for (const auto& d : e.divergent) div.push_back({{"pred", d.predicted}, {"gold", d.gold}, {"fuzzy", d.similarity}});
      entries.push_back({{"term", e.term},
                         {"mark", std::string(to_string(e.mark))},
                         {"predicted", e.predicted},
                         {"gold", e.gold},
                         {"divergent", std::move(div)}});
    }
    models.push_back({{"model", m.model}, {"strategy", m.strategy}, {"entries", std::move(entries)}});
  }
  return {{"id", ex.report_id}, {"gold", links_to_json(ex.gold)}, {"models", std::move(models)}};
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

enum class ExportFormat { text, json, csv };

inline ExportFormat parse_export_format(std::string_view s) {
  if (s == "text" || s == "table") return ExportFormat::text;
  if (s == "json") return ExportFormat::json;
  if (s == "csv") return ExportFormat::csv;
  throw Error(Errc::argument, "unknown export format '" + std::string(s) + "'");
}

inline const std::vector<std::string>& score_columns() {
  static const std::vector<std::string> cols{"EM-Precision",       "EM-Recall",          "Fuzzy-Precision",
                                             "Fuzzy-Recall",       "EM-Fuzzy-Precision", "EM-Fuzzy-Recall",
                                             "BLEU",               "Fuzzy",              "Similarity"};
  return cols;
}

inline std::vector<std::optional<double>> score_values(const ScoreRow& r) {
  return {r.link[MatchMode::em].precision,       r.link[MatchMode::em].recall,
          r.link[MatchMode::fuzzy].precision,    r.link[MatchMode::fuzzy].recall,
          r.link[MatchMode::em_fuzzy].precision, r.link[MatchMode::em_fuzzy].recall,
          r.match.bleu,                          r.match.fuzzy,
          r.match.cosine};
}

inline std::string strategy_label(const std::string& s) {
  std::string up = s;
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return up;
}

namespace analysis_detail {

inline ojson opt_json(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

inline std::optional<double> opt_from(const ojson& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

inline ojson mode_to_json(const ModeScores& m) {
  return {{"matched", m.matched}, {"predicted", m.predicted}, {"gold", m.gold},
          {"precision", opt_json(m.precision)}, {"recall", opt_json(m.recall)}};
}

inline ModeScores mode_from_json(const ojson& j) {
  return {j.at("matched").get<size_t>(), j.at("predicted").get<size_t>(), j.at("gold").get<size_t>(),
          opt_from(j, "precision"), opt_from(j, "recall")};
}

inline std::string fixed3(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << v;
  return os.str();
}

inline std::string csv_cell(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace analysis_detail

inline nlohmann::ordered_json score_row_to_json(const ScoreRow& r) {
  using namespace analysis_detail;
  ojson link = ojson::object();
  for (MatchMode m : kMatchModes) link[std::string(to_string(m))] = mode_to_json(r.link[m]);
  return {{"model", r.model},
          {"strategy", r.strategy},
          {"reports", r.report_count},
          {"link", std::move(link)},
          {"match",
           {{"bleu", opt_json(r.match.bleu)},
            {"fuzzy", opt_json(r.match.fuzzy)},
            {"cosine", opt_json(r.match.cosine)},
            {"pairs", r.match.pair_count},
            {"unpaired", r.match.unpaired_count},
            {"empty_coverage", r.match.empty_coverage}}}};
}

inline ScoreRow score_row_from_json(const nlohmann::ordered_json& j) {
  using namespace analysis_detail;
  try {
    ScoreRow r;
    r.model = j.at("model").get<std::string>();
    r.strategy = j.at("strategy").get<std::string>();
    r.report_count = j.at("reports").get<size_t>();
    for (MatchMode m : kMatchModes) r.link[m] = mode_from_json(j.at("link").at(std::string(to_string(m))));
    const auto& mt = j.at("match");
    r.match.bleu = opt_from(mt, "bleu");
    r.match.fuzzy = opt_from(mt, "fuzzy");
    r.match.cosine = opt_from(mt, "cosine");
    r.match.pair_count = mt.at("pairs").get<size_t>();
    r.match.unpaired_count = mt.at("unpaired").get<size_t>();
    r.match.empty_coverage = mt.at("empty_coverage").get<bool>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::schema, std::string("bad score row: ") + e.what());
  }
}

inline nlohmann::ordered_json scores_to_json(const std::vector<ScoreRow>& rows) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) arr.push_back(score_row_to_json(r));
  return {{"columns", score_columns()}, {"rows", std::move(arr)}};
}

inline std::vector<ScoreRow> scores_from_json(const nlohmann::ordered_json& j) {
  std::vector<ScoreRow> rows;
  if (!j.contains("rows") || !j.at("rows").is_array()) throw Error(Errc::schema, "scores document has no rows array");
  for (const auto& r : j.at("rows")) rows.push_back(score_row_from_json(r));
  return rows;
}

inline std::string scores_csv(const std::vector<ScoreRow>& rows) {
  std::ostringstream os;
  os << "Prompt Type,Models";
  for (const auto& c : score_columns()) os << ',' << c;
  os << '\n';
  for (const auto& r : rows) {
    os << analysis_detail::csv_cell(strategy_label(r.strategy)) << ',' << analysis_detail::csv_cell(r.model);
    for (const auto& v : score_values(r)) {
      os << ',';
      if (v) os << analysis_detail::fixed3(*v);
    }
    os << '\n';
  }
  return os.str();
}

inline std::string scores_text(const std::vector<ScoreRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Prompt Type", "Models"};
  header.insert(header.end(), score_columns().begin(), score_columns().end());
  cells.push_back(header);
  for (const auto& r : rows) {
    std::vector<std::string> line{strategy_label(r.strategy), r.model};
    for (const auto& v : score_values(r)) line.push_back(v ? analysis_detail::fixed3(*v) : "-");
    cells.push_back(std::move(line));
  }
  std::vector<size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::ostringstream os;
  for (const auto& line : cells) {
    for (size_t i = 0; i < line.size(); ++i) {
      std::string c = line[i];
      c.resize(width[i], ' ');
      os << (i ? "  " : "") << c;
    }
    os << '\n';
  }
  return os.str();
}

inline std::string render_scores(const std::vector<ScoreRow>& rows, ExportFormat format) {
  switch (format) {
    case ExportFormat::text: return scores_text(rows);
    case ExportFormat::json: return scores_to_json(rows).dump(2) + "\n";
    case ExportFormat::csv: return scores_csv(rows);
  }
  return {};
}

inline void write_text_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  out << content;
  if (!out) throw Error(Errc::io, "write failed for " + path.string());
}

inline void export_report(const std::vector<ScoreRow>& rows, ExportFormat format, const std::filesystem::path& path) {
  write_text_file(path, render_scores(rows, format));
}

/// Long-format series for plotting subset comparisons:
/// subset,model,strategy,metric,value (value empty for flagged groups).
inline std::string subset_series_csv(const std::vector<SubsetGroup>& groups) {
  std::ostringstream os;
  os << "subset,model,strategy,metric,value\n";
  for (const auto& g : groups) {
    std::vector<std::optional<double>> values(score_columns().size());
    if (g.scores) values = score_values(*g.scores);
    for (size_t i = 0; i < values.size(); ++i) {
      os << analysis_detail::csv_cell(g.subset) << ',' << analysis_detail::csv_cell(g.model) << ','
         << analysis_detail::csv_cell(g.strategy) << ',' << score_columns()[i] << ',';
      if (values[i]) os << analysis_detail::fixed3(*values[i]);
      os << '\n';
    }
  }
  return os.str();
}

inline std::string subset_text(const std::vector<SubsetGroup>& groups) {
  std::ostringstream os;
  std::vector<std::string> order;
  for (const auto& g : groups)
    if (std::find(order.begin(), order.end(), g.subset) == order.end()) order.push_back(g.subset);
  for (const auto& name : order) {
    os << "== " << name << " ==\n";
    std::vector<ScoreRow> rows;
    for (const auto& g : groups)
      if (g.subset == name && g.scores) rows.push_back(*g.scores);
    if (!rows.empty()) os << scores_text(rows);
    for (const auto& g : groups)
      if (g.subset == name && !g.scores)
        os << strategy_label(g.strategy) << "  " << g.model << "  (empty: no records in subset)\n";
  }
  return os.str();
}

}  // namespace symcode
