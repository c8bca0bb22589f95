#pragma once

// Budget-tagged data pooling and SFT export. Pools the semantic-axis and
// ratio-axis traces per problem, turns each trace into a budget-tagged
// instruction record (the budget is the trace's own token count), selects
// shortest-correct traces for the budget-free variant, and writes the
// training files consumed by external LoRA/SFT trainers.

#include <algorithm>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrlcot/answer.hpp"
#include "ctrlcot/corpus.hpp"
#include "ctrlcot/gateway.hpp"
#include "ctrlcot/templates.hpp"
#include "ctrlcot/tokenizer.hpp"

namespace ctrlcot {

// ----------------------------------------------------------------------------
// Types
// ----------------------------------------------------------------------------

struct SftRecord {
  std::string instruction;
  std::string input;  // empty by default
  std::string output;
  // meta
  std::string problem_id;
  Origin origin;
  std::uint64_t budget = 0;  // token count of the source trace
};

inline json sft_record_to_json(const SftRecord& r) {
  return json{{"instruction", r.instruction},
              {"input", r.input},
              {"output", r.output},
              {"meta", json{{"problem_id", r.problem_id},
                            {"origin", origin_to_json(r.origin)},
                            {"budget", r.budget}}}};
}

inline SftRecord sft_record_from_json(const json& j) {
  SftRecord r;
  r.instruction = j.at("instruction").get<std::string>();
  r.input = j.value("input", std::string());
  r.output = j.at("output").get<std::string>();
  const auto& meta = j.at("meta");
  r.problem_id = meta.at("problem_id").get<std::string>();
  r.origin = origin_from_json(meta.at("origin"));
  r.budget = meta.at("budget").get<std::uint64_t>();
  return r;
}

/// Candidate token budgets for budget-controlled generation, strictly
/// increasing.
struct BudgetGrid {
  std::vector<std::uint64_t> budgets;

  void validate() const {
    if (budgets.empty()) throw ConfigError("budget grid is empty");
    for (std::size_t i = 1; i < budgets.size(); ++i) {
      if (budgets[i] <= budgets[i - 1])
        throw ConfigError("budget grid must be strictly increasing");
    }
    if (budgets.front() == 0) throw ConfigError("budgets must be positive");
  }
};

// ----------------------------------------------------------------------------
// Pooling
// ----------------------------------------------------------------------------

/// Union of the two trace sets per problem, semantic axis first. Duplicate
/// texts for the same problem collapse to the first occurrence. Every input
/// trace must be marked correct.
inline std::map<std::string, std::vector<Trace>> pool(const std::vector<Trace>& hra_traces,
                                                      const std::vector<Trace>& dag_traces) {
  std::map<std::string, std::vector<Trace>> out;
  std::unordered_map<std::string, std::unordered_set<std::string>> seen_texts;
  const auto add = [&](const Trace& t) {
    if (!t.correct || !*t.correct)
      throw StageError("pool: trace for " + t.problem_id + " is not marked correct");
    if (!seen_texts[t.problem_id].insert(t.text).second) return;  // duplicate text
    out[t.problem_id].push_back(t);
  };
  for (const Trace& t : hra_traces) add(t);
  for (const Trace& t : dag_traces) add(t);
  return out;
}

/// Flatten a pool back to a deterministic trace list (problem order, then
/// insertion order within a problem).
inline std::vector<Trace> pool_to_traces(const std::map<std::string, std::vector<Trace>>& pooled) {
  std::vector<Trace> out;
  for (const auto& [id, traces] : pooled)
    out.insert(out.end(), traces.begin(), traces.end());
  return out;
}

// ----------------------------------------------------------------------------
// Budget-tagged records
// ----------------------------------------------------------------------------

/// Validate a budget template: it must carry <QUESTION> and exactly one
/// <BUDGET> so the rendered directive appears exactly once.
inline void validate_budget_template(const std::string& budget_template) {
  if (!contains(budget_template, kQuestionPlaceholder))
    throw ConfigError("budget template is missing " + std::string(kQuestionPlaceholder));
  std::size_t count = 0;
  std::size_t pos = 0;
  while ((pos = budget_template.find(kBudgetPlaceholder, pos)) != std::string::npos) {
    ++count;
    pos += std::string(kBudgetPlaceholder).size();
  }
  if (count != 1)
    throw ConfigError("budget template must contain exactly one " +
                      std::string(kBudgetPlaceholder) + ", found " + std::to_string(count));
}

/// Budget-tagged prompt for one (problem, budget) pair.
inline std::string render_budget_prompt(const std::string& budget_template,
                                        const Problem& problem, std::uint64_t budget) {
  validate_budget_template(budget_template);
  return render_template(budget_template, {{kQuestionPlaceholder, problem.question},
                                           {kBudgetPlaceholder, std::to_string(budget)}});
}

/// One budget-tagged SFT record per pooled trace; b(r) is the trace's token
/// count.
inline std::vector<SftRecord> to_sft_records(
    const std::map<std::string, std::vector<Trace>>& pooled,
    const std::unordered_map<std::string, Problem>& problems_by_id,
    const std::string& budget_template) {
  validate_budget_template(budget_template);
  std::vector<SftRecord> out;
  for (const auto& [id, traces] : pooled) {
    const auto p = problems_by_id.find(id);
    if (p == problems_by_id.end()) throw StageError("to_sft_records: unknown problem " + id);
    for (const Trace& t : traces) {
      SftRecord r;
      r.instruction = render_budget_prompt(budget_template, p->second, t.token_count);
      r.output = t.text;
      r.problem_id = id;
      r.origin = t.origin;
      r.budget = t.token_count;
      out.push_back(std::move(r));
    }
  }
  return out;
}

// ----------------------------------------------------------------------------
// Budget-free selection
// ----------------------------------------------------------------------------

/// Request for one (problem, budget) candidate; tag bfr:<budget>:<id>.
inline ChatRequest bfr_request(const std::string& budget_template, const Problem& problem,
                               std::uint64_t budget, const std::string& model) {
  return user_request(model, render_budget_prompt(budget_template, problem, budget),
                      "bfr:" + std::to_string(budget) + ":" + problem.id);
}

struct BfrCandidate {
  std::string problem_id;
  std::uint64_t requested_budget = 0;
  std::size_t token_count = 0;
  bool correct = false;
  bool selected = false;
};

struct BfrResult {
  std::vector<SftRecord> records;        // budget-free records, D_BFR
  std::vector<BfrCandidate> candidates;  // full candidate log
  std::size_t omitted = 0;               // problems with no correct candidate
};

/// Probe the budget-controlled endpoint at every budget in the grid and keep,
/// per problem, the shortest correct CoT (ties to the smaller requested
/// budget). Gateway failures count as incorrect for their budget.
inline BfrResult select_bfr(const std::vector<Problem>& problems_a, Gateway& gateway,
                            const BudgetGrid& grid, const std::string& budget_template,
                            const std::string& model, const Tokenizer& tokenizer,
                            std::size_t max_in_flight, std::ostream* log = nullptr) {
  grid.validate();
  validate_budget_template(budget_template);

  std::vector<ChatRequest> requests;
  requests.reserve(problems_a.size() * grid.budgets.size());
  for (const Problem& p : problems_a)
    for (std::uint64_t b : grid.budgets) requests.push_back(bfr_request(budget_template, p, b, model));
  const auto responses = gateway.complete_batch(requests, max_in_flight);

  BfrResult result;
  const std::size_t per_problem = grid.budgets.size();
  for (std::size_t pi = 0; pi < problems_a.size(); ++pi) {
    const Problem& p = problems_a[pi];
    std::optional<std::size_t> best;  // index into result.candidates
    for (std::size_t bi = 0; bi < per_problem; ++bi) {
      const auto& response = responses[pi * per_problem + bi];
      BfrCandidate c;
      c.problem_id = p.id;
      c.requested_budget = grid.budgets[bi];
      if (response.ok()) {
        c.token_count = tokenizer.count(response.text);
        const auto graded = grade_answer(response.text, p.gold_answer);
        c.correct = graded && graded->second;
      } else if (log) {
        *log << "bfr-select: " << requests[pi * per_problem + bi].tag
             << " failed: " << response.finish_reason.detail << "\n";
      }
      result.candidates.push_back(c);
      if (c.correct) {
        // budgets ascend, so a strict < implements the smaller-budget tie-break
        if (!best || c.token_count < result.candidates[*best].token_count)
          best = result.candidates.size() - 1;
      }
    }
    if (!best) {
      ++result.omitted;
      if (log) *log << "bfr-select: no correct candidate for " << p.id << ", omitted\n";
      continue;
    }
    result.candidates[*best].selected = true;
    const auto& chosen = result.candidates[*best];
    const auto& response =
        responses[pi * per_problem +
                  (std::find(grid.budgets.begin(), grid.budgets.end(), chosen.requested_budget) -
                   grid.budgets.begin())];
    SftRecord r;
    r.instruction = p.question;  // no budget directive
    r.output = response.text;
    r.problem_id = p.id;
    r.origin = Origin::inference(chosen.requested_budget);
    r.budget = chosen.token_count;
    result.records.push_back(std::move(r));
  }
  return result;
}

// ----------------------------------------------------------------------------
// Export
// ----------------------------------------------------------------------------

/// Write SFT records as JSONL, ordered by (problem_id, budget); re-exporting
/// the same records is byte-identical.
inline void export_sft(std::vector<SftRecord> records, const std::string& path) {
  std::stable_sort(records.begin(), records.end(), [](const SftRecord& a, const SftRecord& b) {
    if (a.problem_id != b.problem_id) return a.problem_id < b.problem_id;
    return a.budget < b.budget;
  });
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(sft_record_to_json(r));
  write_jsonl(path, rows);
}

inline std::vector<SftRecord> load_sft_records(const std::string& path) {
  std::vector<SftRecord> out;
  const auto rows = read_jsonl(path);
  std::size_t line_no = 0;
  for (const auto& j : rows) {
    ++line_no;
    try {
      out.push_back(sft_record_from_json(j));
    } catch (const json::exception& e) {
      throw ParseError(path, line_no, std::string("bad SFT row: ") + e.what());
    }
  }
  return out;
}

/// Trainer hyperparameters for the external LoRA/SFT run, as a flat YAML
/// file. Emission is byte-deterministic.
inline void emit_trainer_config(const std::string& path) {
  static const char* content =
      "adapter: lora\n"
      "lora_rank: 8\n"
      "lora_alpha: 16\n"
      "optimizer: adamw\n"
      "learning_rate: 5e-5\n"
      "lr_scheduler: cosine\n"
      "warmup_ratio: 0.1\n"
      "epochs: 3\n"
      "per_device_train_batch_size: 1\n"
      "gradient_accumulation_steps: 8\n"
      "precision: bf16\n";
  write_file(path, content);
}

/// Default candidate grid: the configured budget-table cells for this
/// (model, dataset) pair, extended with {50, 100, ..., 500}.
inline BudgetGrid default_budget_grid(const std::vector<std::uint64_t>& table_budgets) {
  std::vector<std::uint64_t> budgets = table_budgets;
  for (std::uint64_t b = 50; b <= 500; b += 50) budgets.push_back(b);
  std::sort(budgets.begin(), budgets.end());
  budgets.erase(std::unique(budgets.begin(), budgets.end()), budgets.end());
  BudgetGrid grid{budgets};
  grid.validate();
  return grid;
}

}  // namespace ctrlcot
