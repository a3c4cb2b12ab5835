#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "symcode/corpus.hpp"
#include "symcode/error.hpp"

namespace symcode {

enum class Strategy { taco, tasi };
enum class PromptKind { taco, tasi_phase1, tasi_phase2 };

constexpr std::string_view to_string(Strategy s) { return s == Strategy::taco ? "taco" : "tasi"; }

constexpr std::string_view to_string(PromptKind k) {
  switch (k) {
    case PromptKind::taco: return "taco";
    case PromptKind::tasi_phase1: return "tasi_phase1";
    case PromptKind::tasi_phase2: return "tasi_phase2";
  }
  return "unknown";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "taco" || s == "TACO") return Strategy::taco;
  if (s == "tasi" || s == "TASI") return Strategy::tasi;
  throw Error(Errc::argument, "unknown strategy '" + std::string(s) + "'");
}

inline constexpr std::string_view kClinicalText = "clinical_text";
inline constexpr std::string_view kSuggestedTerms = "suggested_terms";
inline constexpr std::string_view kExtractedList = "extracted_list";

/// Placeholder set a template of the given kind must contain, each once.
inline std::set<std::string, std::less<>> required_placeholders(PromptKind kind) {
  switch (kind) {
    case PromptKind::taco: return {std::string(kClinicalText), std::string(kSuggestedTerms)};
    case PromptKind::tasi_phase1: return {std::string(kClinicalText)};
    case PromptKind::tasi_phase2:
      return {std::string(kClinicalText), std::string(kSuggestedTerms), std::string(kExtractedList)};
  }
  return {};
}

struct Prompt {
  std::string text;
  PromptKind kind = PromptKind::taco;
  std::string report_id;

  bool operator==(const Prompt&) const = default;
};

/// Header, body and output instruction sections with {name} placeholders.
/// Braces that do not enclose a lowercase identifier (e.g. JSON examples)
/// are literal text.
class PromptTemplate {
 public:
  PromptTemplate() = default;
  PromptTemplate(PromptKind kind, std::string header, std::string body, std::string output_instruction)
      : kind_(kind), header_(std::move(header)), body_(std::move(body)), output_(std::move(output_instruction)) {
    check();
  }

  /// Parses the sectioned text format:
  ///   [header] ... [body] ... [output_instruction] ...
  static PromptTemplate parse(std::string_view text, PromptKind kind) {
    std::map<std::string, std::string, std::less<>> sections;
    std::string* current = nullptr;
    std::istringstream in{std::string(text)};
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string_view t = trim(line);
      if (t.size() > 2 && t.front() == '[' && t.back() == ']' && t.find(' ') == std::string_view::npos) {
        const std::string name(t.substr(1, t.size() - 2));
        if (name != "header" && name != "body" && name != "output_instruction")
          throw Error(Errc::template_error, "unknown section [" + name + "] on line " + std::to_string(line_no));
        if (sections.count(name) != 0) throw Error(Errc::template_error, "section [" + name + "] repeated");
        current = &sections[name];
        continue;
      }
      if (current == nullptr) {
        if (!t.empty()) throw Error(Errc::template_error, "text before the first section on line " + std::to_string(line_no));
        continue;
      }
      *current += line;
      *current += '\n';
    }
    auto take = [&](const char* name) {
      auto it = sections.find(name);
      if (it == sections.end()) throw Error(Errc::template_error, std::string("missing section [") + name + "]");
      return std::string(trim(it->second));
    };
    return PromptTemplate(kind, take("header"), take("body"), take("output_instruction"));
  }

  static PromptTemplate load(const std::filesystem::path& path, PromptKind kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io, "cannot open template " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), kind);
  }

  PromptKind kind() const { return kind_; }
  const std::string& header() const { return header_; }
  const std::string& body() const { return body_; }
  const std::string& output_instruction() const { return output_; }

  std::string joined() const {
    std::string out;
    for (const std::string* part : {&header_, &body_, &output_}) {
      if (part->empty()) continue;
      if (!out.empty()) out += "\n\n";
      out += *part;
    }
    return out;
  }

  /// Single-pass substitution; substituted values are never rescanned.
  std::string render(const std::map<std::string, std::string, std::less<>>& values) const {
    check();
    const std::string text = joined();
    std::string out;
    out.reserve(text.size() + 256);
    size_t i = 0;
    while (i < text.size()) {
      size_t len = 0;
      if (text[i] == '{' && (len = placeholder_length(text, i)) != 0) {
        const std::string_view name(text.data() + i + 1, len);
        auto it = values.find(name);
        if (it == values.end()) throw Error(Errc::template_error, "no value for placeholder {" + std::string(name) + "}");
        out += it->second;
        i += len + 2;
      } else {
        out += text[i++];
      }
    }
    return out;
  }

 private:
  /// Length of the identifier in "{identifier}" starting at pos, else 0.
  static size_t placeholder_length(std::string_view text, size_t pos) {
    size_t j = pos + 1;
    while (j < text.size() && ((text[j] >= 'a' && text[j] <= 'z') || text[j] == '_')) ++j;
    if (j == pos + 1 || j >= text.size() || text[j] != '}') return 0;
    return j - pos - 1;
  }

  void check() const {
    const auto required = required_placeholders(kind_);
    std::map<std::string, int, std::less<>> counts;
    const std::string text = joined();
    for (size_t i = 0; i < text.size(); ++i) {
      if (text[i] != '{') continue;
      if (size_t len = placeholder_length(text, i); len != 0) {
        std::string name = text.substr(i + 1, len);
        if (required.count(name) == 0)
          throw Error(Errc::template_error,
                      "placeholder {" + name + "} is not allowed in a " + std::string(to_string(kind_)) + " template");
        ++counts[name];
        i += len + 1;
      }
    }
    for (const auto& name : required) {
      const int n = counts.count(name) ? counts[name] : 0;
      if (n != 1)
        throw Error(Errc::template_error, "placeholder {" + name + "} must appear exactly once (found " +
                                              std::to_string(n) + ")");
    }
  }

  PromptKind kind_ = PromptKind::taco;
  std::string header_;
  std::string body_;
  std::string output_;
};

// Default templates. The same text ships under templates/ for editing.

inline constexpr std::string_view kDefaultTacoTemplate = R"([header]
You are coding adverse events described in a vaccine safety report. Read the clinical text, find every phrase that describes a symptom, and link each phrase to the suggested standard term it expresses. Extraction and linking are a single task: extract only phrases that support one of the suggested terms.

Clinical text:
{clinical_text}

Suggested terms:
{suggested_terms}

[body]
Guidelines:
1. Use only terms from the suggested list, spelled exactly as given.
2. For each term, list the original phrases copied verbatim from the clinical text.
3. A phrase may support more than one term.
4. Ignore procedures, medications, test results and symptoms the text says are absent.
5. Leave out any suggested term that has no supporting phrase in the text.

[output_instruction]
Respond with one JSON object and nothing else. Each key is a suggested term and each value is the list of original phrases linked to it. Format example (unrelated to this report):
{"Pyrexia": ["fever"]}
)";

inline constexpr std::string_view kDefaultTasiPhase1Template = R"([header]
Read the clinical text from a vaccine safety report and extract every phrase that describes a symptom or adverse event.

Clinical text:
{clinical_text}

[body]
Guidelines:
1. Copy each phrase verbatim from the clinical text.
2. List each distinct phrase once.
3. Ignore procedures, medications, test results and symptoms the text says are absent.

[output_instruction]
Respond with one JSON array of strings and nothing else. Format example (unrelated to this report):
["fever", "rash on the arm"]
)";

inline constexpr std::string_view kDefaultTasiPhase2Template = R"([header]
Symptom phrases were extracted from the clinical text below. Link each extracted phrase to the suggested standard term it expresses.

Clinical text:
{clinical_text}

Extracted phrases:
{extracted_list}

Suggested terms:
{suggested_terms}

[body]
Guidelines:
1. Use only terms from the suggested list, spelled exactly as given.
2. Use only phrases from the extracted list as mentions.
3. A phrase may support more than one term.
4. Leave out any suggested term that no extracted phrase supports.

[output_instruction]
Respond with one JSON object and nothing else. Each key is a suggested term and each value is the list of extracted phrases linked to it. Format example (unrelated to this report):
{"Pyrexia": ["fever"]}
)";

inline PromptTemplate default_taco_template() { return PromptTemplate::parse(kDefaultTacoTemplate, PromptKind::taco); }

struct TasiTemplates {
  PromptTemplate phase1;
  PromptTemplate phase2;
};

inline TasiTemplates default_tasi_templates() {
  return {PromptTemplate::parse(kDefaultTasiPhase1Template, PromptKind::tasi_phase1),
          PromptTemplate::parse(kDefaultTasiPhase2Template, PromptKind::tasi_phase2)};
}

/// "Pyrexia", "Rash" in report order.
inline std::string render_suggested_terms(const Report& report) {
  std::string out;
  for (const auto& s : report.suggested) {
    if (!out.empty()) out += ", ";
    out += nlohmann::json(s.term).dump();
  }
  return out;
}

/// ["fever", "rash"]; an empty list renders as [].
inline std::string render_string_list(std::span<const std::string> items) {
  std::string out = "[";
  for (size_t i = 0; i < items.size(); ++i) {
    if (i != 0) out += ", ";
    out += nlohmann::json(items[i]).dump();
  }
  return out + "]";
}

inline void require_suggested(const Report& report) {
  if (report.suggested.empty()) throw Error(Errc::argument, "report " + report.id + " has no suggested terms");
}

inline Prompt build_taco_prompt(const Report& report, const PromptTemplate& tmpl) {
  require_suggested(report);
  if (tmpl.kind() != PromptKind::taco) throw Error(Errc::template_error, "TACO prompt needs a taco template");
  return {tmpl.render({{std::string(kClinicalText), report.text},
                       {std::string(kSuggestedTerms), render_suggested_terms(report)}}),
          PromptKind::taco, report.id};
}

struct TasiPrompts {
  Prompt phase1;
  /// Renders the linking prompt from the distilled phase-1 mentions.
  std::function<Prompt(std::span<const std::string>)> phase2;
};

inline TasiPrompts build_tasi_prompts(const Report& report, const TasiTemplates& templates) {
  require_suggested(report);
  if (templates.phase1.kind() != PromptKind::tasi_phase1 || templates.phase2.kind() != PromptKind::tasi_phase2)
    throw Error(Errc::template_error, "TASI prompts need a phase-1 and a phase-2 template");
  Prompt first{templates.phase1.render({{std::string(kClinicalText), report.text}}), PromptKind::tasi_phase1,
               report.id};
  auto second = [report, tmpl = templates.phase2](std::span<const std::string> extracted) {
    return Prompt{tmpl.render({{std::string(kClinicalText), report.text},
                               {std::string(kExtractedList), render_string_list(extracted)},
                               {std::string(kSuggestedTerms), render_suggested_terms(report)}}),
                  PromptKind::tasi_phase2, report.id};
  };
  return {std::move(first), std::move(second)};
}

}  // namespace symcode
