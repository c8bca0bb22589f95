#pragma once

// Prompt templates for every generation stage. Each template is a plain text
// file with angle-bracket placeholders; the defaults below ship as editable
// files under templates/ and are compiled in as fallbacks.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctrlcot/common.hpp"
#include "ctrlcot/corpus.hpp"

namespace ctrlcot {

constexpr const char* kQuestionPlaceholder = "<QUESTION>";
constexpr const char* kAnswerPlaceholder = "<ANSWER>";
constexpr const char* kReferencePlaceholder = "<REFERENCE COT>";
constexpr const char* kBudgetPlaceholder = "<BUDGET>";
constexpr const char* kRatioPlaceholder = "<RATIO>";
constexpr const char* kCompressedPlaceholder = "<COMPRESSED>";

inline const std::vector<std::string>& known_placeholders() {
  static const std::vector<std::string> all = {
      kQuestionPlaceholder, kAnswerPlaceholder,  kReferencePlaceholder,
      kBudgetPlaceholder,   kRatioPlaceholder,   kCompressedPlaceholder,
      "<COT>"};
  return all;
}

/// Substitute placeholders and verify none of the known markers survive.
inline std::string render_template(const std::string& text,
                                   const std::map<std::string, std::string>& values) {
  std::string out = text;
  for (const auto& [placeholder, value] : values) out = replace_all(out, placeholder, value);
  for (const auto& marker : known_placeholders()) {
    if (contains(out, marker))
      throw StageError("unsubstituted placeholder " + marker + " in rendered prompt");
  }
  return out;
}

// ----------------------------------------------------------------------------
// Tier templates
// ----------------------------------------------------------------------------

struct TierTemplate {
  Tier tier = Tier::detailed;
  std::string text;

  /// Detailed/standard/concise templates carry <QUESTION> and <ANSWER>;
  /// ultra-concise carries <QUESTION> and <REFERENCE COT>.
  void validate() const {
    const bool ultra = tier == Tier::ultra_concise;
    if (!contains(text, kQuestionPlaceholder))
      throw ConfigError(to_string(tier) + " template is missing " + kQuestionPlaceholder);
    if (!ultra && !contains(text, kAnswerPlaceholder))
      throw ConfigError(to_string(tier) + " template is missing " + kAnswerPlaceholder);
    if (!ultra && contains(text, kReferencePlaceholder))
      throw ConfigError(to_string(tier) + " template must not contain " + kReferencePlaceholder);
    if (ultra && !contains(text, kReferencePlaceholder))
      throw ConfigError(to_string(tier) + " template is missing " + kReferencePlaceholder);
    if (ultra && contains(text, kAnswerPlaceholder))
      throw ConfigError(to_string(tier) + " template must not contain " + kAnswerPlaceholder);
  }
};

inline std::string default_tier_template_text(Tier tier) {
  const std::string requirements =
      "Requirements: Please reason step by step, and put your final answer within "
      "\\boxed{}.\n";
  const std::string qa_tail =
      "The question: <QUESTION>\nThe correct answer: <ANSWER>\n";
  switch (tier) {
    case Tier::detailed:
      return "You are a mathematics expert. Now I will present you with a mathematical "
             "problem and its correct answer. You need to output the correct reasoning "
             "process according to the requirements. Your output should be as detailed as "
             "possible. Don't output any other text.\n" +
             requirements + qa_tail;
    case Tier::standard:
      return "You are a mathematics expert. Now I will present you with a mathematical "
             "problem and its correct answer. You need to output the correct reasoning "
             "process according to the requirements. Don't output any other text.\n" +
             requirements + qa_tail;
    case Tier::concise:
      return "You are a mathematics expert. Now I will present you with a mathematical "
             "problem and its correct answer. You need to output the correct reasoning "
             "process according to the requirements. Your output should be as brief and "
             "concise as possible. Don't output any other text.\n" +
             requirements + qa_tail;
    case Tier::ultra_concise:
      return "You are a mathematics expert. Now I will present you with a reasoning text "
             "related to a mathematical problem. You need to rephrase the text according "
             "to the requirements. Your output should be as brief and concise as possible. "
             "Don't output any other text.\n" +
             requirements + "The question: <QUESTION>\nThe text: <REFERENCE COT>\n";
  }
  throw Error("invalid tier");
}

struct TierTemplateSet {
  std::map<Tier, TierTemplate> templates;

  const TierTemplate& get(Tier t) const {
    const auto it = templates.find(t);
    if (it == templates.end())
      throw ConfigError("no template configured for tier " + to_string(t));
    return it->second;
  }

  static TierTemplateSet defaults() {
    TierTemplateSet set;
    for (Tier t : all_tiers()) {
      set.templates[t] = {t, default_tier_template_text(t)};
      set.templates[t].validate();
    }
    return set;
  }

  /// Load tier_<name>.txt files from a directory, falling back to the
  /// built-in text for any missing file.
  static TierTemplateSet from_directory(const std::string& dir) {
    TierTemplateSet set;
    for (Tier t : all_tiers()) {
      const std::string path = dir + "/tier_" + to_string(t) + ".txt";
      const std::string text =
          file_exists(path) ? read_file(path) : default_tier_template_text(t);
      set.templates[t] = {t, text};
      set.templates[t].validate();
    }
    return set;
  }
};

/// Render the generation prompt for one tier. `reference` must be present
/// exactly for the ultra-concise tier.
inline std::string render_tier_prompt(const TierTemplate& tmpl, const Problem& problem,
                                      const std::optional<std::string>& reference) {
  tmpl.validate();
  const bool ultra = tmpl.tier == Tier::ultra_concise;
  if (ultra && !reference)
    throw StageError("ultra_concise prompt for " + problem.id + " needs a reference trace");
  if (!ultra && reference)
    throw StageError(to_string(tmpl.tier) + " prompt for " + problem.id +
                     " must not take a reference trace");
  std::map<std::string, std::string> values{{kQuestionPlaceholder, problem.question}};
  if (ultra) {
    values[kReferencePlaceholder] = *reference;
  } else {
    values[kAnswerPlaceholder] = problem.gold_answer;
  }
  return render_template(tmpl.text, values);
}

// ----------------------------------------------------------------------------
// Other stage templates
// ----------------------------------------------------------------------------

inline std::string default_mcg_template_text() {
  return "Solve the following problem with a clear, fluent chain of reasoning. Compress "
         "your reasoning to approximately <RATIO> of its natural length while keeping it "
         "fluent and coherent. Put your final answer within \\boxed{}.\n"
         "The question: <QUESTION>\n";
}

inline std::string default_budget_template_text() {
  return "<QUESTION>\nPlease answer using approximately <BUDGET> tokens for the "
         "reasoning, and put your final answer within \\boxed{}.\n";
}

inline std::string default_recovery_template_text() {
  return "Expand the following compressed reasoning into a complete, readable "
         "step-by-step solution without changing the final answer. Put the final answer "
         "within \\boxed{}.\n"
         "The question: <QUESTION>\nThe compressed reasoning: <COMPRESSED>\n";
}

/// Read a template file, or fall back to a built-in default when the path is
/// empty.
inline std::string load_template_or(const std::string& path, const std::string& fallback) {
  if (path.empty()) return fallback;
  return read_file(path);
}

}  // namespace ctrlcot
