#pragma once

// Hierarchical reasoning abstraction: generate detailed / standard / concise
// CoTs from tier templates, rephrase a reference trace into an ultra-concise
// CoT, and keep only the answer-consistent results.
//
// The ultra-concise tier wants a human-written concise reference; when none
// is configured for an instance, its own filtered concise trace stands in
// (recorded in the stage report). Instances with neither are skipped.

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctrlcot/answer.hpp"
#include "ctrlcot/corpus.hpp"
#include "ctrlcot/gateway.hpp"
#include "ctrlcot/templates.hpp"
#include "ctrlcot/tokenizer.hpp"

namespace ctrlcot {

/// Generation request for one (problem, tier) cell; tag hra:<tier>:<id>.
inline ChatRequest tier_request(const TierTemplateSet& templates, const Problem& problem,
                                Tier tier, const std::optional<std::string>& reference,
                                const std::string& model) {
  const std::string prompt = render_tier_prompt(templates.get(tier), problem, reference);
  return user_request(model, prompt, "hra:" + to_string(tier) + ":" + problem.id);
}

struct HraReport {
  std::size_t problems = 0;
  std::size_t generation_failures = 0;  // gateway errors, dropped
  std::size_t ultra_fallbacks = 0;      // concise trace stood in as the reference
  std::size_t ultra_skipped = 0;        // no reference available at all
  std::map<Tier, std::size_t> kept;     // answer-consistent traces per tier
  std::map<Tier, double> mean_tokens;   // over kept traces

  nlohmann::json to_json() const {
    nlohmann::json per_tier = nlohmann::json::object();
    for (Tier t : all_tiers()) {
      const auto k = kept.count(t) ? kept.at(t) : 0;
      per_tier[to_string(t)] = {{"kept", k},
                                {"mean_tokens", mean_tokens.count(t) ? mean_tokens.at(t) : 0.0}};
    }
    return nlohmann::json{{"problems", problems},
                          {"generation_failures", generation_failures},
                          {"ultra_fallbacks", ultra_fallbacks},
                          {"ultra_skipped", ultra_skipped},
                          {"tiers", per_tier}};
  }
};

struct HraResult {
  std::vector<Trace> traces;  // answer-consistent only, correct=true
  HraReport report;
};

namespace detail {

inline Trace make_hra_trace(const Problem& problem, Tier tier, const std::string& text,
                            const Tokenizer& tokenizer) {
  Trace t;
  t.problem_id = problem.id;
  t.text = text;
  t.origin = Origin::hra(tier);
  t.token_count = tokenizer.count(text);
  return t;
}

}  // namespace detail

/// Run the abstraction stage over a problem set. Base tiers go out in one
/// bounded batch; ultra-concise follows once references are known. Output
/// order is problem order, then tier order.
inline HraResult run_hra(const std::vector<Problem>& problems, Gateway& gateway,
                         const TierTemplateSet& templates,
                         const std::unordered_map<std::string, std::string>& references,
                         const Tokenizer& tokenizer, const std::string& model,
                         std::size_t max_in_flight, std::ostream* log = nullptr) {
  HraResult result;
  result.report.problems = problems.size();
  const auto by_id = index_problems(problems);

  // Base tiers (detailed, standard, concise), filtered per problem.
  static const std::vector<Tier> base_tiers = {Tier::detailed, Tier::standard, Tier::concise};
  std::vector<ChatRequest> requests;
  requests.reserve(problems.size() * base_tiers.size());
  for (const Problem& p : problems)
    for (Tier t : base_tiers) requests.push_back(tier_request(templates, p, t, std::nullopt, model));
  const auto responses = gateway.complete_batch(requests, max_in_flight);

  // per problem: filtered traces by tier
  std::unordered_map<std::string, std::map<Tier, Trace>> filtered;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const Problem& p = problems[i / base_tiers.size()];
    const Tier tier = base_tiers[i % base_tiers.size()];
    if (!responses[i].ok()) {
      ++result.report.generation_failures;
      if (log)
        *log << "hra: dropped " << requests[i].tag << ": " << responses[i].finish_reason.detail
             << "\n";
      continue;
    }
    const Trace candidate = detail::make_hra_trace(p, tier, responses[i].text, tokenizer);
    const auto kept = filter_correct({candidate}, by_id);
    if (!kept.empty()) filtered[p.id].emplace(tier, kept.front());
  }

  // Ultra-concise: human reference first, else the instance's filtered
  // concise trace.
  std::vector<ChatRequest> ultra_requests;
  std::vector<const Problem*> ultra_problems;
  for (const Problem& p : problems) {
    std::optional<std::string> reference;
    const auto ref_it = references.find(p.id);
    if (ref_it != references.end()) {
      reference = ref_it->second;
    } else {
      const auto f = filtered.find(p.id);
      if (f != filtered.end() && f->second.count(Tier::concise)) {
        reference = f->second.at(Tier::concise).text;
        ++result.report.ultra_fallbacks;
        if (log) *log << "hra: ultra reference fallback to concise trace for " << p.id << "\n";
      }
    }
    if (!reference) {
      ++result.report.ultra_skipped;
      if (log) *log << "hra: no ultra reference for " << p.id << ", tier skipped\n";
      continue;
    }
    ultra_requests.push_back(tier_request(templates, p, Tier::ultra_concise, reference, model));
    ultra_problems.push_back(&p);
  }
  const auto ultra_responses = gateway.complete_batch(ultra_requests, max_in_flight);
  for (std::size_t i = 0; i < ultra_responses.size(); ++i) {
    const Problem& p = *ultra_problems[i];
    if (!ultra_responses[i].ok()) {
      ++result.report.generation_failures;
      if (log)
        *log << "hra: dropped " << ultra_requests[i].tag << ": "
             << ultra_responses[i].finish_reason.detail << "\n";
      continue;
    }
    const Trace candidate =
        detail::make_hra_trace(p, Tier::ultra_concise, ultra_responses[i].text, tokenizer);
    const auto kept = filter_correct({candidate}, by_id);
    if (!kept.empty()) filtered[p.id].emplace(Tier::ultra_concise, kept.front());
  }

  // Flatten in (problem, tier) order and compute the per-tier statistics.
  std::map<Tier, std::size_t> token_sums;
  for (const Problem& p : problems) {
    const auto f = filtered.find(p.id);
    if (f == filtered.end()) continue;
    for (Tier t : all_tiers()) {
      const auto it = f->second.find(t);
      if (it == f->second.end()) continue;
      result.traces.push_back(it->second);
      ++result.report.kept[t];
      token_sums[t] += it->second.token_count;
    }
  }
  for (const auto& [tier, total] : token_sums)
    result.report.mean_tokens[tier] =
        static_cast<double>(total) / static_cast<double>(result.report.kept[tier]);
  return result;
}

/// Single-problem convenience wrapper: the four tiers for one instance.
inline std::vector<Trace> generate_tiers(
    const Problem& problem, Gateway& gateway, const TierTemplateSet& templates,
    const std::unordered_map<std::string, std::string>& references, const Tokenizer& tokenizer,
    const std::string& model, std::ostream* log = nullptr) {
  return run_hra({problem}, gateway, templates, references, tokenizer, model, 4, log).traces;
}

/// Optional human-written references: JSONL rows {"problem_id","reference"}.
inline std::unordered_map<std::string, std::string> load_references(const std::string& path) {
  std::unordered_map<std::string, std::string> out;
  const auto rows = read_jsonl(path);
  std::size_t line_no = 0;
  for (const auto& j : rows) {
    ++line_no;
    if (!j.contains("problem_id") || !j.contains("reference"))
      throw ParseError(path, line_no, "reference row needs problem_id and reference");
    out[j["problem_id"].get<std::string>()] = j["reference"].get<std::string>();
  }
  return out;
}

}  // namespace ctrlcot
