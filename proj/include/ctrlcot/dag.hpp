#pragma once

// Distribution-alignment generation. On bucket A, ultra-concise seed traces
// are pruned to every ratio in the configured set, giving (prompt, target)
// pairs that teach an external model ratio-controlled generation. The trained
// generator is then driven over bucket B at every ratio and the outputs are
// answer-filtered, yielding traces that carry both semantic- and token-level
// compression.

#include <algorithm>
#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctrlcot/answer.hpp"
#include "ctrlcot/corpus.hpp"
#include "ctrlcot/gateway.hpp"
#include "ctrlcot/pruner.hpp"
#include "ctrlcot/sft.hpp"
#include "ctrlcot/templates.hpp"

namespace ctrlcot {

// ----------------------------------------------------------------------------
// Ratio set
// ----------------------------------------------------------------------------

struct RatioSet {
  std::vector<Rat> ratios;  // strictly increasing, each in (0, 1]

  void validate(const Rat& floor = Rat(3, 10)) const {
    if (ratios.empty()) throw ConfigError("ratio set is empty");
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      if (!(ratios[i] > 0 && ratios[i] <= 1))
        throw ConfigError("ratio " + rat_to_string(ratios[i]) + " is outside (0,1]");
      if (i > 0 && !(ratios[i] > ratios[i - 1]))
        throw ConfigError("ratio set must be strictly increasing");
      rat_to_compact(ratios[i]);  // rejects ratios needing more than 4 decimals
    }
    if (ratios.front() < floor)
      throw ConfigError("minimum ratio " + rat_to_compact(ratios.front()) +
                        " is below the floor " + rat_to_compact(floor));
  }

  bool contains(const Rat& r) const {
    return std::find(ratios.begin(), ratios.end(), r) != ratios.end();
  }

  static RatioSet from_strings(const std::vector<std::string>& texts,
                               const Rat& floor = Rat(3, 10)) {
    RatioSet set;
    for (const auto& t : texts) set.ratios.push_back(rat_from_decimal(t));
    set.validate(floor);
    return set;
  }

  /// {0.3, 0.4, ..., 1.0}
  static RatioSet defaults() {
    RatioSet set;
    for (int k = 3; k <= 10; ++k) set.ratios.push_back(Rat(k, 10));
    return set;
  }
};

// ----------------------------------------------------------------------------
// MCG training data (bucket A)
// ----------------------------------------------------------------------------

struct McgTrainingExample {
  std::string problem_id;
  Rat ratio;
  std::string prompt;  // question plus an explicit ratio directive
  std::string target;  // pruned seed trace
};

inline void validate_mcg_template(const std::string& mcg_template) {
  if (!contains(mcg_template, kQuestionPlaceholder) ||
      !contains(mcg_template, kRatioPlaceholder))
    throw ConfigError("MCG template needs " + std::string(kQuestionPlaceholder) + " and " +
                      std::string(kRatioPlaceholder));
}

inline std::string render_mcg_prompt(const std::string& mcg_template, const Problem& problem,
                                     const Rat& ratio) {
  validate_mcg_template(mcg_template);
  return render_template(mcg_template, {{kQuestionPlaceholder, problem.question},
                                        {kRatioPlaceholder, rat_to_compact(ratio)}});
}

/// Build |seeds| x |ratios| ratio-conditioned training examples from
/// ultra-concise seed traces. Seeds must come from bucket A, be marked
/// correct, and carry the ultra-concise origin.
inline std::vector<McgTrainingExample> build_mcg_training(
    const std::vector<Trace>& seeds,
    const std::unordered_map<std::string, Problem>& problems_by_id,
    const std::unordered_map<std::string, Bucket>& buckets, const TokenScorer& scorer,
    const RatioSet& ratios, const std::string& mcg_template, const Tokenizer& tokenizer) {
  ratios.validate();
  validate_mcg_template(mcg_template);

  std::vector<McgTrainingExample> out;
  out.reserve(seeds.size() * ratios.ratios.size());
  for (const Trace& seed : seeds) {
    const auto bucket = buckets.find(seed.problem_id);
    if (bucket == buckets.end() || bucket->second != Bucket::A)
      throw StageError("build_mcg_training: seed " + seed.problem_id +
                       " is not in bucket A (cross-contamination)");
    if (!seed.correct || !*seed.correct)
      throw StageError("build_mcg_training: seed " + seed.problem_id + " is not marked correct");
    if (!(seed.origin.kind == Origin::Kind::hra && seed.origin.tier == Tier::ultra_concise))
      throw StageError("build_mcg_training: seed " + seed.problem_id +
                       " is not an ultra_concise trace");
    const auto problem = problems_by_id.find(seed.problem_id);
    if (problem == problems_by_id.end())
      throw StageError("build_mcg_training: unknown problem " + seed.problem_id);

    for (const Rat& ratio : ratios.ratios) {
      McgTrainingExample ex;
      ex.problem_id = seed.problem_id;
      ex.ratio = ratio;
      ex.prompt = render_mcg_prompt(mcg_template, problem->second, ratio);
      ex.target = prune(seed.text, scorer, ratio, tokenizer);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

/// MCG examples in the shared SFT record schema (ratio in meta.origin,
/// budget = target token count), ready for export_sft.
inline std::vector<SftRecord> mcg_examples_to_sft(const std::vector<McgTrainingExample>& examples,
                                                  const Tokenizer& tokenizer) {
  std::vector<SftRecord> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    SftRecord r;
    r.instruction = ex.prompt;
    r.output = ex.target;
    r.problem_id = ex.problem_id;
    r.origin = Origin::dag(ex.ratio);
    r.budget = tokenizer.count(ex.target);
    out.push_back(std::move(r));
  }
  return out;
}

// ----------------------------------------------------------------------------
// Distribution-aligned generation (bucket B)
// ----------------------------------------------------------------------------

/// Generation request for one (problem, ratio) cell; tag dag:<ratio>:<id>.
inline ChatRequest mcg_request(const std::string& mcg_template, const Problem& problem,
                               const Rat& ratio, const std::string& model) {
  return user_request(model, render_mcg_prompt(mcg_template, problem, ratio),
                      "dag:" + rat_to_compact(ratio) + ":" + problem.id);
}

struct DagApplyReport {
  std::size_t problems = 0;
  std::size_t generation_failures = 0;
  std::map<std::string, std::size_t> survived;  // compact ratio -> count kept

  nlohmann::json to_json() const {
    nlohmann::json per_ratio = nlohmann::json::object();
    for (const auto& [ratio, count] : survived) per_ratio[ratio] = count;
    return nlohmann::json{{"problems", problems},
                          {"generation_failures", generation_failures},
                          {"survived_per_ratio", per_ratio}};
  }
};

struct DagApplyResult {
  std::vector<Trace> traces;  // answer-consistent, correct=true
  DagApplyReport report;
};

/// Drive a ratio-conditioned endpoint over bucket B problems at every ratio,
/// then answer-filter. Output order is problem order, then ratio order.
inline DagApplyResult apply_mcg(const std::vector<Problem>& problems_b, Gateway& gateway,
                                const RatioSet& ratios, const std::string& mcg_template,
                                const std::unordered_map<std::string, Bucket>& buckets,
                                const Tokenizer& tokenizer, const std::string& model,
                                std::size_t max_in_flight, std::ostream* log = nullptr) {
  ratios.validate();
  for (const Problem& p : problems_b) {
    const auto bucket = buckets.find(p.id);
    if (bucket == buckets.end() || bucket->second != Bucket::B)
      throw StageError("apply_mcg: problem " + p.id + " is not in bucket B (cross-contamination)");
  }

  std::vector<ChatRequest> requests;
  requests.reserve(problems_b.size() * ratios.ratios.size());
  for (const Problem& p : problems_b)
    for (const Rat& ratio : ratios.ratios) requests.push_back(mcg_request(mcg_template, p, ratio, model));
  const auto responses = gateway.complete_batch(requests, max_in_flight);

  DagApplyResult result;
  result.report.problems = problems_b.size();
  for (const Rat& r : ratios.ratios) result.report.survived[rat_to_compact(r)] = 0;
  const auto by_id = index_problems(problems_b);

  const std::size_t per_problem = ratios.ratios.size();
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const Problem& p = problems_b[i / per_problem];
    const Rat& ratio = ratios.ratios[i % per_problem];
    if (!responses[i].ok()) {
      ++result.report.generation_failures;
      if (log)
        *log << "dag-apply: dropped " << requests[i].tag << ": "
             << responses[i].finish_reason.detail << "\n";
      continue;
    }
    Trace candidate;
    candidate.problem_id = p.id;
    candidate.text = responses[i].text;
    candidate.origin = Origin::dag(ratio);
    candidate.token_count = tokenizer.count(candidate.text);
    const auto kept = filter_correct({candidate}, by_id);
    if (kept.empty()) continue;
    ++result.report.survived[rat_to_compact(ratio)];
    result.traces.push_back(kept.front());
  }
  return result;
}

}  // namespace ctrlcot
