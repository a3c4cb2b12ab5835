#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "symcode/prompting.hpp"

using namespace symcode;

namespace {

Report sample_report() {
  return {"42", "Fever of 39C {clinical_text} and a red arm.",
          {{"Pyrexia", std::nullopt}, {"Injection site erythema", "10022061"}}};
}

std::string read_file(const std::string& rel) {
  std::ifstream in(std::string(SYMCODE_SOURCE_DIR) + "/" + rel, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Errc template_code(std::string_view text, PromptKind kind) {
  try {
    PromptTemplate::parse(text, kind);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "template accepted:\n" << text;
  return Errc::argument;
}

}  // namespace

TEST(Templates, ShippedFilesMatchBuiltIns) {
  EXPECT_EQ(read_file("templates/taco.txt"), kDefaultTacoTemplate);
  EXPECT_EQ(read_file("templates/tasi_phase1.txt"), kDefaultTasiPhase1Template);
  EXPECT_EQ(read_file("templates/tasi_phase2.txt"), kDefaultTasiPhase2Template);
}

TEST(Templates, PlaceholderRules) {
  EXPECT_EQ(template_code("[header]\n{clinical_text}\n[body]\nx\n[output_instruction]\ny\n", PromptKind::taco),
            Errc::template_error);
  EXPECT_EQ(template_code("[header]\n{clinical_text} {suggested_terms} {clinical_text}\n[body]\n[output_instruction]\n",
                          PromptKind::taco),
            Errc::template_error);
  EXPECT_EQ(template_code("[header]\n{clinical_text} {suggested_terms}\n[body]\n[output_instruction]\n",
                          PromptKind::tasi_phase1),
            Errc::template_error);
  EXPECT_EQ(template_code("[header]\n{clinical_text}\n[body]\n", PromptKind::tasi_phase1), Errc::template_error);
  EXPECT_EQ(template_code("[header]\n{clinical_text}\n[footer]\n", PromptKind::tasi_phase1), Errc::template_error);
  // JSON braces are literal text.
  const auto t = PromptTemplate::parse(
      "[header]\n{clinical_text}\n[body]\n[output_instruction]\n{\"A\": [\"b\"]} {Not_a_slot}\n",
      PromptKind::tasi_phase1);
  EXPECT_EQ(t.render({{"clinical_text", "T"}}), "T\n\n{\"A\": [\"b\"]} {Not_a_slot}");
}

TEST(Templates, MissingFileIsIoError) {
  try {
    PromptTemplate::load("/nonexistent/t.txt", PromptKind::taco);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::io);
  }
}

TEST(TacoPrompt, ContainsTextAndEveryTermOnce) {
  const Report r = sample_report();
  const Prompt p = build_taco_prompt(r, default_taco_template());
  EXPECT_EQ(p.kind, PromptKind::taco);
  EXPECT_EQ(p.report_id, "42");
  EXPECT_NE(p.text.find(r.text), std::string::npos);
  EXPECT_NE(p.text.find("\"Pyrexia\", \"Injection site erythema\""), std::string::npos) << p.text;
  // A placeholder-like string inside the report is not substituted again.
  EXPECT_EQ(p.text.find("{suggested_terms}"), std::string::npos);
  EXPECT_NE(p.text.find("and a red arm"), std::string::npos);
  // Deterministic.
  EXPECT_EQ(p, build_taco_prompt(r, default_taco_template()));
}

TEST(TacoPrompt, EmptySuggestedIsArgumentError) {
  Report r = sample_report();
  r.suggested.clear();
  try {
    build_taco_prompt(r, default_taco_template());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::argument);
  }
}

TEST(TasiPrompts, PhaseTwoCarriesTextListAndTerms) {
  const Report r = sample_report();
  const auto prompts = build_tasi_prompts(r, default_tasi_templates());
  EXPECT_EQ(prompts.phase1.kind, PromptKind::tasi_phase1);
  EXPECT_NE(prompts.phase1.text.find(r.text), std::string::npos);
  EXPECT_EQ(prompts.phase1.text.find("Pyrexia\""), std::string::npos);

  const std::vector<std::string> extracted{"Fever of 39C", "red \"arm\""};
  const Prompt p2 = prompts.phase2(extracted);
  EXPECT_EQ(p2.kind, PromptKind::tasi_phase2);
  EXPECT_NE(p2.text.find(r.text), std::string::npos);
  EXPECT_NE(p2.text.find(R"(["Fever of 39C", "red \"arm\""])"), std::string::npos) << p2.text;
  EXPECT_NE(p2.text.find("\"Injection site erythema\""), std::string::npos);

  const Prompt empty = prompts.phase2({});
  EXPECT_NE(empty.text.find("Extracted phrases:\n[]"), std::string::npos) << empty.text;
}

TEST(TasiPrompts, WrongTemplateKindIsRejected) {
  TasiTemplates swapped{default_tasi_templates().phase2, default_tasi_templates().phase1};
  try {
    build_tasi_prompts(sample_report(), swapped);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::template_error);
  }
}

TEST(Strategy, ParseAndPrint) {
  EXPECT_EQ(parse_strategy("TACO"), Strategy::taco);
  EXPECT_EQ(parse_strategy("tasi"), Strategy::tasi);
  EXPECT_EQ(to_string(Strategy::tasi), "tasi");
  EXPECT_THROW(parse_strategy("both"), Error);
}
