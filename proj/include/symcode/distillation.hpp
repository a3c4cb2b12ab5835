#pragma once

#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "symcode/backends.hpp"
#include "symcode/corpus.hpp"
#include "symcode/error.hpp"
#include "symcode/similarity.hpp"
#include "symcode/text.hpp"

namespace symcode {

/// Model output mapped onto the report's suggested terms. Link keys are
/// normalized suggested terms.
struct CodedOutput {
  std::string report_id;
  TermLinks links;
  std::vector<std::string> unlinkable_keys;
  std::vector<std::string> salvage_notes;

  bool operator==(const CodedOutput&) const = default;

  const TermMentions* find(std::string_view normalized_term) const {
    for (const auto& l : links)
      if (l.term == normalized_term) return &l;
    return nullptr;
  }
};

struct ExtractionList {
  std::string report_id;
  std::vector<std::string> mentions;
  std::vector<std::string> salvage_notes;

  bool operator==(const ExtractionList&) const = default;
};

inline constexpr double kKeyFuzzyThreshold = 0.9;

namespace distill_detail {

using ojson = nlohmann::ordered_json;

inline bool is_non_prediction(std::string_view mention) {
  const std::string n = normalize_term(mention);
  return n.empty() || n == "none" || n == "n/a";
}

/// Rewrites common near-JSON into JSON: single-quoted strings, trailing
/// commas, Python None/True/False.
inline std::string relax(std::string_view in) {
  std::string out;
  out.reserve(in.size() + 8);
  size_t i = 0;
  auto prev_significant = [&]() -> char {
    for (size_t k = out.size(); k > 0; --k)
      if (!std::isspace(static_cast<unsigned char>(out[k - 1]))) return out[k - 1];
    return '\0';
  };
  while (i < in.size()) {
    const char c = in[i];
    if (c == '"') {
      size_t j = i + 1;
      while (j < in.size() && in[j] != '"') j += (in[j] == '\\') ? 2 : 1;
      j = std::min(j, in.size() - 1);
      out.append(in.substr(i, j - i + 1));
      i = j + 1;
      continue;
    }
    if (c == '\'') {
      std::string s;
      size_t j = i + 1;
      for (; j < in.size() && in[j] != '\''; ++j) {
        if (in[j] == '\\' && j + 1 < in.size()) {
          s += in[j + 1] == '\'' ? std::string("'") : std::string(in.substr(j, 2));
          ++j;
        } else if (in[j] == '"') {
          s += "\\\"";
        } else {
          s += in[j];
        }
      }
      out += '"' + s + '"';
      i = j + 1;
      continue;
    }
    if (c == ',') {
      size_t j = i + 1;
      while (j < in.size() && std::isspace(static_cast<unsigned char>(in[j]))) ++j;
      if (j < in.size() && (in[j] == '}' || in[j] == ']')) {
        i = j;
        continue;
      }
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      size_t j = i;
      while (j < in.size() && std::isalnum(static_cast<unsigned char>(in[j]))) ++j;
      const std::string_view word = in.substr(i, j - i);
      const char before = prev_significant();
      if (before == ':' || before == '[' || before == ',') {
        if (word == "None") { out += "null"; i = j; continue; }
        if (word == "True") { out += "true"; i = j; continue; }
        if (word == "False") { out += "false"; i = j; continue; }
      }
      out.append(word);
      i = j;
      continue;
    }
    out += c;
    ++i;
  }
  return out;
}

inline std::optional<ojson> parse_lenient(std::string_view text, std::vector<std::string>& notes) {
  ojson v = ojson::parse(text, nullptr, false);
  if (!v.is_discarded()) return v;
  v = ojson::parse(relax(text), nullptr, false);
  if (v.is_discarded()) return std::nullopt;
  notes.emplace_back("relaxed_syntax");
  return v;
}

/// Result of scanning a bracketed value starting at `start`.
struct Scan {
  bool complete = false;
  size_t end = 0;  // one past the closing bracket when complete
  // Truncation state, valid when !complete.
  std::string open_closers;      // closers still owed at end of text, innermost last
  bool in_string = false;
  size_t string_start = 0;
  std::vector<std::pair<size_t, std::string>> commas;  // position, closers owed there
};

inline Scan scan_balanced(std::string_view text, size_t start) {
  Scan scan;
  std::string closers;
  bool in_string = false;
  char quote = '"';
  size_t string_start = 0;
  char prev_sig = '\0';
  for (size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == quote) {
        in_string = false;
        prev_sig = c;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_string = true;
        quote = '"';
        string_start = i;
        break;
      case '\'':
        if (prev_sig == '{' || prev_sig == '[' || prev_sig == ',' || prev_sig == ':') {
          in_string = true;
          quote = '\'';
          string_start = i;
        }
        break;
      case '{': closers.push_back('}'); break;
      case '[': closers.push_back(']'); break;
      case '}':
      case ']':
        if (closers.empty() || closers.back() != c) return scan;  // mismatched: not a candidate
        closers.pop_back();
        if (closers.empty()) {
          scan.complete = true;
          scan.end = i + 1;
          return scan;
        }
        break;
      case ',':
        scan.commas.emplace_back(i, closers);
        break;
      default:
        break;
    }
    if (!std::isspace(static_cast<unsigned char>(c))) prev_sig = c;
  }
  scan.open_closers = closers;
  scan.in_string = in_string;
  scan.string_start = string_start;
  return scan;
}

inline std::string reversed(std::string s) { return {s.rbegin(), s.rend()}; }

inline std::string_view rstrip_commas(std::string_view s) {
  while (!s.empty() && (std::isspace(static_cast<unsigned char>(s.back())) || s.back() == ',' || s.back() == ':'))
    s.remove_suffix(1);
  return s;
}

/// Closure completion for a value cut off by the token limit: drop any
/// partial string, then close the open brackets; failing that, retreat to
/// earlier element boundaries.
inline std::optional<ojson> close_truncated(std::string_view text, size_t start, const Scan& scan,
                                            std::vector<std::string>& notes) {
  const size_t cut = scan.in_string ? scan.string_start : text.size();
  auto attempt = [&](size_t end, const std::string& closers) -> std::optional<ojson> {
    std::string candidate(rstrip_commas(text.substr(start, end - start)));
    candidate += reversed(closers);
    std::vector<std::string> local;
    auto v = parse_lenient(candidate, local);
    if (v) {
      notes.emplace_back("truncation_closed");
      notes.insert(notes.end(), local.begin(), local.end());
    }
    return v;
  };
  if (auto v = attempt(cut, scan.open_closers)) return v;
  for (auto it = scan.commas.rbegin(); it != scan.commas.rend(); ++it) {
    if (it->first >= cut) continue;
    if (auto v = attempt(it->first, it->second)) return v;
  }
  return std::nullopt;
}

/// First complete (or, when the text ends inside it, salvaged) bracketed
/// value whose opening character is one of `openers`.
inline std::optional<ojson> first_balanced(std::string_view text, std::string_view openers, bool allow_closure,
                                           std::vector<std::string>& notes) {
  for (size_t pos = text.find_first_of(openers); pos != std::string_view::npos;
       pos = text.find_first_of(openers, pos + 1)) {
    const Scan scan = scan_balanced(text, pos);
    if (scan.complete) {
      std::vector<std::string> local;
      if (auto v = parse_lenient(text.substr(pos, scan.end - pos), local)) {
        notes.insert(notes.end(), local.begin(), local.end());
        return v;
      }
      continue;
    }
    if (scan.open_closers.empty()) continue;  // mismatched bracket
    if (!allow_closure) return std::nullopt;
    return close_truncated(text, pos, scan, notes);
  }
  return std::nullopt;
}

inline std::vector<std::string> fenced_blocks(std::string_view text) {
  static const std::regex fence(R"(```[A-Za-z0-9_+-]*[ \t]*\r?\n?([\s\S]*?)```)");
  std::vector<std::string> blocks;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), fence); it != std::sregex_iterator(); ++it)
    blocks.push_back((*it)[1].str());
  return blocks;
}

inline std::string strip_quotes(std::string_view s) {
  s = trim(s);
  while (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
    s = trim(s.substr(1, s.size() - 2));
  return std::string(s);
}

/// "Term: [m1, m2]" pairs, one or several per line.
inline std::optional<ojson> harvest_pairs(std::string_view text) {
  static const std::regex pair(
      R"rx((?:^|[\n,;{])[ \t]*(?:[-*]|\d+[.)])?[ \t]*["']?([^\n"'\[\]{}:,]+?)["']?[ \t]*:[ \t]*\[([^\]\n]*)\])rx");
  const std::string s(text);
  ojson obj = ojson::object();
  for (auto it = std::sregex_iterator(s.begin(), s.end(), pair); it != std::sregex_iterator(); ++it) {
    const std::string key = strip_quotes((*it)[1].str());
    if (key.empty()) continue;
    ojson items = ojson::array();
    const std::string inner = (*it)[2].str();
    size_t from = 0;
    while (from <= inner.size()) {
      size_t comma = inner.find(',', from);
      if (comma == std::string::npos) comma = inner.size();
      std::string item = strip_quotes(std::string_view(inner).substr(from, comma - from));
      if (!item.empty()) items.push_back(item);
      from = comma + 1;
    }
    if (obj.contains(key)) {
      for (auto& m : items) obj[key].push_back(m);
    } else {
      obj[key] = std::move(items);
    }
  }
  if (obj.empty()) return std::nullopt;
  return obj;
}

/// Bulleted or numbered list lines.
inline std::optional<ojson> harvest_list(std::string_view text) {
  static const std::regex item(R"rx((?:^|\n)[ \t]*(?:[-*]|\d+[.)])[ \t]+([^\n]+))rx");
  const std::string s(text);
  ojson arr = ojson::array();
  for (auto it = std::sregex_iterator(s.begin(), s.end(), item); it != std::sregex_iterator(); ++it) {
    std::string v = (*it)[1].str();
    while (!v.empty() && (v.back() == ',' || std::isspace(static_cast<unsigned char>(v.back())))) v.pop_back();
    v = strip_quotes(v);
    if (!v.empty()) arr.push_back(v);
  }
  if (arr.empty()) return std::nullopt;
  return arr;
}

/// Strings and numbers become mentions; a nested list of strings is a
/// token list and is joined with single spaces.
inline void collect_strings(const ojson& v, std::vector<std::string>& out, bool nested = false) {
  if (v.is_string()) {
    out.emplace_back(trim(v.get<std::string>()));
  } else if (v.is_number()) {
    out.push_back(v.dump());
  } else if (v.is_array() && !nested) {
    for (const auto& e : v) collect_strings(e, out, true);
  } else if (v.is_array()) {
    std::string joined;
    for (const auto& t : v) {
      if (!t.is_string()) continue;
      const std::string_view tok = trim(t.get<std::string>());
      if (tok.empty()) continue;
      if (!joined.empty()) joined += ' ';
      joined += tok;
    }
    if (!joined.empty()) out.push_back(std::move(joined));
  }
}

inline std::vector<std::string> mentions_of(const ojson& value) {
  std::vector<std::string> raw;
  collect_strings(value, raw);
  std::vector<std::string> kept;
  for (auto& m : raw)
    if (!is_non_prediction(m)) kept.push_back(std::move(m));
  return kept;
}

struct TermIndex {
  std::vector<std::string> normalized;  // report order
  std::unordered_map<std::string, size_t> exact;

  explicit TermIndex(const Report& report) {
    for (const auto& s : report.suggested) {
      normalized.push_back(normalize_term(s.term));
      exact.emplace(normalized.back(), normalized.size() - 1);
    }
  }

  bool contains(std::string_view key) const { return exact.count(normalize_term(key)) != 0; }
};

inline CodedOutput link_object(ojson obj, const Report& report, std::vector<std::string> notes) {
  const TermIndex index(report);
  for (int depth = 0; depth < 2 && obj.is_object() && obj.size() == 1; ++depth) {
    auto it = obj.begin();
    if (!it.value().is_object() || index.contains(it.key())) break;
    notes.push_back("unwrapped:" + it.key());
    ojson inner = it.value();
    obj = std::move(inner);
  }

  CodedOutput out;
  out.report_id = report.id;
  for (const auto& [key, value] : obj.items()) {
    std::vector<std::string> mentions = mentions_of(value);
    if (mentions.empty()) {
      notes.push_back("dropped_empty:" + key);
      continue;
    }
    const std::string nk = normalize_term(key);
    std::optional<size_t> slot;
    if (auto hit = index.exact.find(nk); hit != index.exact.end()) {
      slot = hit->second;
    } else {
      double best = kKeyFuzzyThreshold;
      for (size_t i = 0; i < index.normalized.size(); ++i) {
        const double r = fuzzy_ratio(nk, index.normalized[i]);
        if (r >= best && (!slot || r > best)) {
          best = r;
          slot = i;
        }
      }
      if (slot) notes.push_back("fuzzy_key:" + key + "=>" + index.normalized[*slot]);
    }
    if (!slot) {
      out.unlinkable_keys.push_back(key);
      continue;
    }
    const std::string& term = index.normalized[*slot];
    auto existing = std::find_if(out.links.begin(), out.links.end(), [&](const TermMentions& l) { return l.term == term; });
    if (existing != out.links.end()) {
      notes.push_back("merged_key:" + key + "=>" + term);
      existing->mentions.insert(existing->mentions.end(), mentions.begin(), mentions.end());
    } else {
      out.links.push_back({term, std::move(mentions)});
    }
  }
  out.salvage_notes = std::move(notes);
  return out;
}

}  // namespace distill_detail

/// Recovers a term -> mentions mapping from raw model output. Strategies,
/// first success wins: fenced code block, first balanced object (with
/// closure completion when the text ends inside it), "Term: [..]" harvest.
inline CodedOutput distill(std::string_view raw_text, const Report& report, bool truncated = false) {
  using namespace distill_detail;
  std::vector<std::string> notes;
  if (truncated) notes.emplace_back("completion_truncated");

  for (const auto& block : fenced_blocks(raw_text)) {
    std::vector<std::string> local;
    if (auto v = first_balanced(block, "{", false, local); v && v->is_object()) {
      notes.emplace_back("strategy:fenced");
      notes.insert(notes.end(), local.begin(), local.end());
      return link_object(std::move(*v), report, std::move(notes));
    }
  }
  {
    std::vector<std::string> local;
    if (auto v = first_balanced(raw_text, "{", true, local); v && v->is_object()) {
      notes.emplace_back("strategy:balanced");
      notes.insert(notes.end(), local.begin(), local.end());
      return link_object(std::move(*v), report, std::move(notes));
    }
  }
  if (auto v = harvest_pairs(raw_text)) {
    notes.emplace_back("strategy:harvest");
    return link_object(std::move(*v), report, std::move(notes));
  }
  throw Error(Errc::malformed_output, "no term mapping found in output for report " + report.id);
}

inline CodedOutput distill(const RawCompletion& raw, const Report& report) {
  return distill(raw.text, report, raw.truncated);
}

namespace distill_detail {

inline ExtractionList to_extraction(const ojson& value, std::vector<std::string> notes) {
  std::vector<std::string> raw;
  if (value.is_object()) {
    notes.emplace_back("flattened_object");
    for (const auto& [_, v] : value.items()) collect_strings(v, raw);
  } else {
    collect_strings(value, raw);
  }
  ExtractionList out;
  std::unordered_set<std::string> seen;
  for (auto& m : raw) {
    if (is_non_prediction(m)) continue;
    if (seen.insert(normalize_term(m)).second) out.mentions.push_back(std::move(m));
  }
  out.salvage_notes = std::move(notes);
  return out;
}

}  // namespace distill_detail

/// Phase-1 list recovery with the same ladder, adapted to list shapes.
/// Mentions are deduplicated under normalization, first occurrence kept.
inline ExtractionList distill_extraction(std::string_view raw_text, bool truncated = false) {
  using namespace distill_detail;
  std::vector<std::string> notes;
  if (truncated) notes.emplace_back("completion_truncated");

  for (const auto& block : fenced_blocks(raw_text)) {
    std::vector<std::string> local;
    if (auto v = first_balanced(block, "[{", false, local)) {
      notes.emplace_back("strategy:fenced");
      notes.insert(notes.end(), local.begin(), local.end());
      return to_extraction(*v, std::move(notes));
    }
  }
  {
    std::vector<std::string> local;
    if (auto v = first_balanced(raw_text, "[{", true, local)) {
      notes.emplace_back("strategy:balanced");
      notes.insert(notes.end(), local.begin(), local.end());
      return to_extraction(*v, std::move(notes));
    }
  }
  if (auto v = harvest_list(raw_text)) {
    notes.emplace_back("strategy:harvest");
    return to_extraction(*v, std::move(notes));
  }
  throw Error(Errc::malformed_output, "no mention list found in output");
}

inline ExtractionList distill_extraction(const RawCompletion& raw, std::string report_id = {}) {
  ExtractionList out = distill_extraction(raw.text, raw.truncated);
  out.report_id = std::move(report_id);
  return out;
}

/// Serializes links the way a well-behaved model would answer.
inline std::string links_to_text(const TermLinks& links) { return links_to_json(links).dump(); }

}  // namespace symcode
