#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "symcode/csv.hpp"
#include "symcode/error.hpp"
#include "symcode/text.hpp"

namespace symcode {

using ojson = nlohmann::ordered_json;

struct SuggestedTerm {
  std::string term;
  std::optional<std::string> code;

  bool operator==(const SuggestedTerm&) const = default;
};

struct Report {
  std::string id;
  std::string text;
  std::vector<SuggestedTerm> suggested;

  bool operator==(const Report&) const = default;
};

/// One standard term with the mention strings linked to it.
struct TermMentions {
  std::string term;
  std::vector<std::string> mentions;

  bool operator==(const TermMentions&) const = default;
};

using TermLinks = std::vector<TermMentions>;

struct GoldAnnotation {
  std::string report_id;
  TermLinks links;

  bool operator==(const GoldAnnotation&) const = default;
};

struct Dataset {
  std::string name;
  std::vector<Report> reports;
  std::map<std::string, GoldAnnotation> gold;

  bool empty() const { return reports.empty(); }
  bool has_gold() const { return !gold.empty(); }

  const Report* find(std::string_view id) const {
    for (const auto& r : reports)
      if (r.id == id) return &r;
    return nullptr;
  }

  const GoldAnnotation* gold_for(std::string_view id) const {
    auto it = gold.find(std::string(id));
    return it == gold.end() ? nullptr : &it->second;
  }
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace detail {

inline void require(bool ok, const std::string& report_id, const std::string& what) {
  if (!ok) throw Error(Errc::validation, "report " + report_id + ": " + what);
}

}  // namespace detail

inline void validate_report(const Report& report, const GoldAnnotation* gold) {
  detail::require(!report.id.empty(), "<empty>", "id is empty");
  detail::require(!trim(report.text).empty(), report.id, "text is empty");
  detail::require(!report.suggested.empty(), report.id, "suggested list is empty");

  std::unordered_set<std::string> seen;
  for (const auto& s : report.suggested) {
    const std::string norm = normalize_term(s.term);
    detail::require(!norm.empty(), report.id, "suggested term is empty");
    detail::require(seen.insert(norm).second, report.id, "duplicate suggested term '" + s.term + "'");
  }
  if (gold == nullptr) return;

  std::unordered_set<std::string> gold_keys;
  for (const auto& link : gold->links) {
    const std::string norm = normalize_term(link.term);
    detail::require(seen.count(norm) != 0, report.id,
                    "gold term '" + link.term + "' is not in the suggested list");
    detail::require(gold_keys.insert(norm).second, report.id, "duplicate gold term '" + link.term + "'");
    detail::require(!link.mentions.empty(), report.id, "gold term '" + link.term + "' has no mentions");
    for (const auto& m : link.mentions)
      detail::require(!trim(m).empty(), report.id, "gold term '" + link.term + "' has an empty mention");
  }
}

inline void validate_dataset(const Dataset& dataset) {
  std::unordered_set<std::string> ids;
  for (const auto& r : dataset.reports) {
    if (!ids.insert(r.id).second) throw Error(Errc::duplicate_id, "duplicate report id " + r.id);
    validate_report(r, dataset.gold_for(r.id));
  }
  for (const auto& [id, _] : dataset.gold)
    if (ids.count(id) == 0) throw Error(Errc::validation, "gold annotation references unknown report " + id);
}

// ---------------------------------------------------------------------------
// Dataset file (one JSON record per line)
// ---------------------------------------------------------------------------

inline ojson links_to_json(const TermLinks& links) {
  ojson out = ojson::object();
  for (const auto& link : links) out[link.term] = link.mentions;
  return out;
}

inline ojson record_to_json(const Report& report, const GoldAnnotation* gold) {
  ojson suggested = ojson::array();
  for (const auto& s : report.suggested) {
    ojson term{{"term", s.term}};
    term["code"] = s.code ? ojson(*s.code) : ojson(nullptr);
    suggested.push_back(std::move(term));
  }
  ojson rec{{"id", report.id}, {"text", report.text}, {"suggested", std::move(suggested)}};
  if (gold != nullptr) rec["gold"] = links_to_json(gold->links);
  return rec;
}

/// Mentions may be plain strings or token lists; token lists are joined
/// with single spaces.
inline std::string mention_from_json(const ojson& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_array()) {
    std::string joined;
    for (const auto& tok : value) {
      if (!tok.is_string()) throw Error(Errc::parse, "mention token is not a string");
      if (!joined.empty()) joined += ' ';
      joined += tok.get<std::string>();
    }
    return joined;
  }
  throw Error(Errc::parse, "mention is neither a string nor a token list");
}

inline TermLinks links_from_json(const ojson& obj) {
  if (!obj.is_object()) throw Error(Errc::parse, "\"gold\" must be an object");
  TermLinks links;
  for (const auto& [term, mentions] : obj.items()) {
    if (!mentions.is_array()) throw Error(Errc::parse, "gold value for '" + term + "' must be a list");
    TermMentions tm{term, {}};
    for (const auto& m : mentions) tm.mentions.push_back(mention_from_json(m));
    links.push_back(std::move(tm));
  }
  return links;
}

inline Dataset parse_dataset(std::istream& in, std::string name) {
  Dataset ds;
  ds.name = std::move(name);
  std::string line;
  size_t line_no = 0;
  std::unordered_map<std::string, size_t> id_lines;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    ojson rec;
    try {
      rec = ojson::parse(line);
    } catch (const ojson::parse_error& e) {
      throw Error(Errc::parse, where + ": " + e.what());
    }
    try {
      if (!rec.is_object()) throw Error(Errc::parse, "record is not an object");
      Report report;
      report.id = rec.at("id").get<std::string>();
      report.text = rec.at("text").get<std::string>();
      for (const auto& s : rec.at("suggested")) {
        SuggestedTerm term;
        term.term = s.at("term").get<std::string>();
        if (s.contains("code") && !s["code"].is_null()) term.code = s["code"].get<std::string>();
        report.suggested.push_back(std::move(term));
      }
      if (auto [it, fresh] = id_lines.emplace(report.id, line_no); !fresh)
        throw Error(Errc::duplicate_id, "report id " + report.id + " already defined on line " +
                                            std::to_string(it->second));
      if (rec.contains("gold") && !rec["gold"].is_null())
        ds.gold.emplace(report.id, GoldAnnotation{report.id, links_from_json(rec["gold"])});
      ds.reports.push_back(std::move(report));
    } catch (const Error& e) {
      throw Error(e.code() == Errc::duplicate_id ? Errc::duplicate_id : Errc::parse, where + ": " + e.message());
    } catch (const ojson::exception& e) {
      throw Error(Errc::parse, where + ": " + e.what());
    }
    const Report& added = ds.reports.back();
    try {
      validate_report(added, ds.gold_for(added.id));
    } catch (const Error& e) {
      throw Error(Errc::validation, where + ": " + e.message());
    }
  }
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open dataset " + path.string());
  return parse_dataset(in, path.stem().string());
}

inline void write_dataset(std::ostream& out, const Dataset& dataset) {
  for (const auto& r : dataset.reports) out << record_to_json(r, dataset.gold_for(r.id)).dump() << '\n';
}

inline void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write dataset " + path.string());
  write_dataset(out, dataset);
  if (!out) throw Error(Errc::io, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Raw VAERS ingestion
// ---------------------------------------------------------------------------

struct IngestResult {
  Dataset dataset;
  /// Reports left out because their text or symptom list was empty.
  std::vector<std::string> skipped;
};

inline IngestResult ingest_vaers(const csv::Table& data, const csv::Table& symptoms, std::string name = "vaers") {
  const size_t id_col = data.column("VAERS_ID");
  const size_t text_col = data.column("SYMPTOM_TEXT");
  const size_t sym_id_col = symptoms.column("VAERS_ID");
  std::vector<size_t> sym_cols;
  for (int k = 1; k <= 5; ++k) sym_cols.push_back(symptoms.column("SYMPTOM" + std::to_string(k)));

  std::map<std::string, std::vector<SuggestedTerm>> terms_by_id;
  std::map<std::string, std::unordered_set<std::string>> seen_by_id;
  for (const auto& row : symptoms.rows()) {
    const std::string id(trim(csv::Table::cell(row, sym_id_col)));
    if (id.empty()) continue;
    for (size_t col : sym_cols) {
      const std::string term = ensure_utf8(trim(csv::Table::cell(row, col)));
      if (term.empty()) continue;
      if (seen_by_id[id].insert(normalize_term(term)).second) terms_by_id[id].push_back({term, std::nullopt});
    }
  }

  IngestResult result;
  result.dataset.name = std::move(name);
  std::unordered_set<std::string> ids;
  for (const auto& row : data.rows()) {
    const std::string id(trim(csv::Table::cell(row, id_col)));
    if (id.empty()) continue;
    if (!ids.insert(id).second) throw Error(Errc::duplicate_id, "duplicate VAERS_ID " + id + " in data table");
    Report report{id, ensure_utf8(csv::Table::cell(row, text_col)), {}};
    if (auto it = terms_by_id.find(id); it != terms_by_id.end()) report.suggested = it->second;
    if (trim(report.text).empty() || report.suggested.empty()) {
      result.skipped.push_back(id);
      continue;
    }
    result.dataset.reports.push_back(std::move(report));
  }
  return result;
}

inline IngestResult ingest_vaers(const std::string& data_path, const std::string& symptoms_path,
                                 std::string name = "vaers") {
  return ingest_vaers(csv::Table::read_file(data_path), csv::Table::read_file(symptoms_path), std::move(name));
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct ColumnStats {
  double average = 0.0;
  size_t median = 0;
  size_t min = 0;
  size_t max = 0;

  long long rounded_average() const { return std::llround(average); }
};

/// Median of an even-length sample is the lower of the two middle values.
inline ColumnStats summarize(std::vector<size_t> values) {
  if (values.empty()) throw Error(Errc::empty_input, "cannot summarize an empty column");
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (size_t v : values) sum += static_cast<double>(v);
  return {sum / static_cast<double>(values.size()), values[(values.size() - 1) / 2], values.front(), values.back()};
}

struct DatasetStats {
  size_t report_count = 0;
  ColumnStats text_length;
  ColumnStats gold_links;
  std::optional<ColumnStats> extracted;
};

inline size_t gold_link_count(const Dataset& dataset, const Report& report) {
  const auto* gold = dataset.gold_for(report.id);
  return gold == nullptr ? 0 : gold->links.size();
}

/// `extracted` holds one linked-term count per model output; pass an empty
/// span when no model results are available.
inline DatasetStats compute_stats(const Dataset& dataset, std::span<const size_t> extracted = {}) {
  if (dataset.empty()) throw Error(Errc::empty_input, "dataset " + dataset.name + " has no reports");
  std::vector<size_t> lengths;
  std::vector<size_t> links;
  for (const auto& r : dataset.reports) {
    lengths.push_back(word_count(r.text));
    links.push_back(gold_link_count(dataset, r));
  }
  DatasetStats stats;
  stats.report_count = dataset.reports.size();
  stats.text_length = summarize(std::move(lengths));
  stats.gold_links = summarize(std::move(links));
  if (!extracted.empty()) stats.extracted = summarize({extracted.begin(), extracted.end()});
  return stats;
}

inline ojson column_to_json(const ColumnStats& c) {
  return {{"average", c.average}, {"average_rounded", c.rounded_average()},
          {"median", c.median},   {"min", c.min},
          {"max", c.max}};
}

inline ojson stats_to_json(const std::string& name, const DatasetStats& s) {
  ojson out{{"dataset", name},
            {"report_count", s.report_count},
            {"clinical_text", column_to_json(s.text_length)},
            {"suggested_symptoms", column_to_json(s.gold_links)}};
  out["extracted_symptoms"] = s.extracted ? column_to_json(*s.extracted) : ojson(nullptr);
  return out;
}

inline std::string stats_table(const std::string& name, const DatasetStats& s) {
  auto cell = [](std::ostringstream& os, const std::string& v) {
    os << ' ';
    os.width(20);
    os << v;
  };
  std::ostringstream os;
  os << name << " (# of Reports: " << s.report_count << ")\n";
  os << "                ";
  cell(os, "Clinical Text");
  cell(os, "Suggested Symptoms");
  cell(os, "Extracted Symptoms");
  os << '\n';
  struct RowDef {
    const char* label;
    std::string (*get)(const ColumnStats&);
  };
  const RowDef rows[] = {
      {"Average Length", [](const ColumnStats& c) { return std::to_string(c.rounded_average()); }},
      {"Median Length", [](const ColumnStats& c) { return std::to_string(c.median); }},
      {"Min Length", [](const ColumnStats& c) { return std::to_string(c.min); }},
      {"Max Length", [](const ColumnStats& c) { return std::to_string(c.max); }},
  };
  for (const auto& row : rows) {
    std::string label = row.label;
    label.resize(16, ' ');
    os << label;
    cell(os, row.get(s.text_length));
    cell(os, row.get(s.gold_links));
    cell(os, s.extracted ? row.get(*s.extracted) : "-");
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Frequencies and subsets
// ---------------------------------------------------------------------------

struct TermFrequency {
  std::string term;        // first surface form seen in dataset order
  std::string normalized;
  size_t reports = 0;

  bool operator==(const TermFrequency&) const = default;
};

/// Report-level document frequency of each gold term, most frequent first;
/// ties are ordered by the normalized term.
inline std::vector<TermFrequency> symptom_frequencies(const Dataset& dataset) {
  if (!dataset.has_gold()) throw Error(Errc::empty_input, "dataset " + dataset.name + " has no gold annotations");
  std::vector<TermFrequency> freqs;
  std::unordered_map<std::string, size_t> slot;
  for (const auto& r : dataset.reports) {
    const auto* gold = dataset.gold_for(r.id);
    if (gold == nullptr) continue;
    std::unordered_set<std::string> in_report;
    for (const auto& link : gold->links) {
      std::string norm = normalize_term(link.term);
      if (!in_report.insert(norm).second) continue;
      auto [it, fresh] = slot.emplace(norm, freqs.size());
      if (fresh) freqs.push_back({link.term, norm, 0});
      ++freqs[it->second].reports;
    }
  }
  std::sort(freqs.begin(), freqs.end(), [](const TermFrequency& a, const TermFrequency& b) {
    if (a.reports != b.reports) return a.reports > b.reports;
    return a.normalized < b.normalized;
  });
  return freqs;
}

enum class SubsetSelector { top_k, bottom_k };

inline std::string subset_name(const std::string& base, SubsetSelector sel, size_t k) {
  return base + (sel == SubsetSelector::top_k ? "-top-" : "-bottom-") + std::to_string(k);
}

/// Reports whose gold links contain at least one of the k most (or least)
/// frequent terms. Gold annotations are carried over whole.
inline Dataset build_subset(const Dataset& dataset, SubsetSelector selector, size_t k) {
  const auto freqs = symptom_frequencies(dataset);
  if (k == 0) throw Error(Errc::range, "k must be positive");
  if (k > freqs.size())
    throw Error(Errc::range, "k=" + std::to_string(k) + " exceeds the " + std::to_string(freqs.size()) +
                                 " distinct gold terms");
  std::unordered_set<std::string> selected;
  if (selector == SubsetSelector::top_k) {
    for (size_t i = 0; i < k; ++i) selected.insert(freqs[i].normalized);
  } else {
    for (size_t i = freqs.size() - k; i < freqs.size(); ++i) selected.insert(freqs[i].normalized);
  }

  Dataset subset;
  subset.name = subset_name(dataset.name, selector, k);
  for (const auto& r : dataset.reports) {
    const auto* gold = dataset.gold_for(r.id);
    if (gold == nullptr) continue;
    const bool hit = std::any_of(gold->links.begin(), gold->links.end(),
                                 [&](const TermMentions& l) { return selected.count(normalize_term(l.term)) != 0; });
    if (!hit) continue;
    subset.reports.push_back(r);
    subset.gold.emplace(r.id, *gold);
  }
  return subset;
}

/// Number of reports per gold-link count.
inline std::map<size_t, size_t> symptom_count_histogram(const Dataset& dataset) {
  if (dataset.empty()) throw Error(Errc::empty_input, "dataset " + dataset.name + " has no reports");
  std::map<size_t, size_t> buckets;
  for (const auto& r : dataset.reports) ++buckets[gold_link_count(dataset, r)];
  return buckets;
}

}  // namespace symcode
