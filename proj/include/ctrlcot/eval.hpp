#pragma once

// Budget-conditioned evaluation: drive a reasoner endpoint over a test set,
// grade and count tokens per trace, and reduce to Accuracy / Tokens / CR / TE
// rows with exact rational arithmetic (display rounding happens last, at two
// decimals). Also: the compression-strength tables, report emission, and
// compressed-CoT recovery.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctrlcot/answer.hpp"
#include "ctrlcot/config.hpp"
#include "ctrlcot/corpus.hpp"
#include "ctrlcot/gateway.hpp"
#include "ctrlcot/sft.hpp"
#include "ctrlcot/templates.hpp"
#include "ctrlcot/tokenizer.hpp"

namespace ctrlcot {

// ----------------------------------------------------------------------------
// Compression-strength levels
// ----------------------------------------------------------------------------

enum class CsName { high_ppp, high_pp, high_p, high, mid, low, low_m, low_mm };

struct CsLevel {
  CsName name = CsName::high;
  Rat cr_target;
};

/// The fixed strength ladder, strongest first: CR targets 0.2 through 0.9.
inline const std::vector<CsLevel>& cs_levels() {
  static const std::vector<CsLevel> levels = {
      {CsName::high_ppp, Rat(2, 10)}, {CsName::high_pp, Rat(3, 10)},
      {CsName::high_p, Rat(4, 10)},   {CsName::high, Rat(5, 10)},
      {CsName::mid, Rat(6, 10)},      {CsName::low, Rat(7, 10)},
      {CsName::low_m, Rat(8, 10)},    {CsName::low_mm, Rat(9, 10)}};
  return levels;
}

inline std::string to_string(CsName n) {
  switch (n) {
    case CsName::high_ppp: return "high_ppp";
    case CsName::high_pp: return "high_pp";
    case CsName::high_p: return "high_p";
    case CsName::high: return "high";
    case CsName::mid: return "mid";
    case CsName::low: return "low";
    case CsName::low_m: return "low_m";
    case CsName::low_mm: return "low_mm";
  }
  throw Error("invalid cs name");
}

inline std::string cs_display_name(CsName n) {
  switch (n) {
    case CsName::high_ppp: return "High+++";
    case CsName::high_pp: return "High++";
    case CsName::high_p: return "High+";
    case CsName::high: return "High";
    case CsName::mid: return "Mid";
    case CsName::low: return "Low";
    case CsName::low_m: return "Low-";
    case CsName::low_mm: return "Low--";
  }
  throw Error("invalid cs name");
}

inline CsName cs_from_string(const std::string& s) {
  for (const auto& level : cs_levels())
    if (to_string(level.name) == s) return level.name;
  throw ConfigError("unknown compression-strength level: " + s);
}

// ----------------------------------------------------------------------------
// Budget table
// ----------------------------------------------------------------------------

/// Token budgets per (model, dataset, strength) plus the CS -> CR mapping.
/// Cells are keyed "model/dataset/cs", all lowercase.
class BudgetTable {
 public:
  static std::string cell_key(const std::string& model, const std::string& dataset, CsName cs) {
    return to_lower(model) + "/" + to_lower(dataset) + "/" + to_string(cs);
  }

  /// The configuration this project ships by default (config/budgets.toml
  /// mirrors it verbatim).
  static BudgetTable defaults() {
    BudgetTable t;
    const auto set = [&](const char* model, const char* dataset, CsName cs, std::uint64_t b) {
      t.cells_[cell_key(model, dataset, cs)] = b;
    };
    struct RowSpec {
      const char* model;
      CsName cs;
      std::uint64_t gsm8k;
      std::uint64_t math500;
    };
    static const RowSpec rows[] = {
        {"llama3.1-8b", CsName::high, 50, 100},   {"qwen2.5-3b", CsName::high, 125, 200},
        {"qwen2.5-7b", CsName::high, 125, 150},   {"qwen2.5-14b", CsName::high, 125, 200},
        {"llama3.1-8b", CsName::mid, 75, 150},    {"qwen2.5-3b", CsName::mid, 150, 250},
        {"qwen2.5-7b", CsName::mid, 150, 200},    {"qwen2.5-14b", CsName::mid, 175, 250},
        {"llama3.1-8b", CsName::low, 100, 200},   {"qwen2.5-3b", CsName::low, 200, 300},
        {"qwen2.5-7b", CsName::low, 175, 400},    {"qwen2.5-14b", CsName::low, 200, 350},
        {"qwen2.5-7b", CsName::low_m, 200, 400},  {"qwen2.5-14b", CsName::low_m, 175, 400},
        {"qwen2.5-7b", CsName::low_mm, 250, 450}, {"qwen2.5-14b", CsName::low_mm, 200, 450},
    };
    for (const auto& row : rows) {
      set(row.model, "gsm8k", row.cs, row.gsm8k);
      set(row.model, "math-500", row.cs, row.math500);
    }
    return t;
  }

  /// Load from a budgets config: [cs_cr] name = ratio pairs (validated
  /// against the fixed ladder) and [budget] "model/dataset/cs" = tokens.
  static BudgetTable from_config(const Config& cfg) {
    BudgetTable t;
    for (const auto& level : cs_levels()) {
      const std::string key = "cs_cr." + to_string(level.name);
      if (!cfg.has(key)) throw ConfigError("budgets config is missing " + key);
      if (cfg.get_rat(key) != level.cr_target)
        throw ConfigError("at " + key + ": CR target must be " +
                          rat_to_compact(level.cr_target));
    }
    for (const auto& key : cfg.keys_with_prefix("budget")) {
      const std::string cell = to_lower(key.substr(std::string("budget.").size()));
      const std::int64_t v = cfg.get_int(key);
      if (v <= 0) throw ConfigError("at " + key + ": budgets must be positive");
      // validate the cs segment
      const auto last_slash = cell.rfind('/');
      if (last_slash == std::string::npos)
        throw ConfigError("at " + key + ": cell keys look like model/dataset/cs");
      cs_from_string(cell.substr(last_slash + 1));
      t.cells_[cell] = static_cast<std::uint64_t>(v);
    }
    if (t.cells_.empty()) throw ConfigError("budgets config has no [budget] cells");
    return t;
  }

  static BudgetTable load(const std::string& path) {
    return from_config(Config::parse_file(path));
  }

  /// Budget for a (strength, model, dataset) cell; unknown keys list what is
  /// available.
  std::uint64_t budget_for(CsName cs, const std::string& model,
                           const std::string& dataset) const {
    const std::string key = cell_key(model, dataset, cs);
    const auto it = cells_.find(key);
    if (it != cells_.end()) return it->second;
    std::string available;
    for (const auto& [k, v] : cells_) {
      (void)v;
      available += available.empty() ? k : ", " + k;
    }
    throw ConfigError("no budget for " + key + "; available: " + available);
  }

  /// All configured budgets for a (model, dataset) pair, ascending.
  std::vector<std::uint64_t> budgets_for_pair(const std::string& model,
                                              const std::string& dataset) const {
    std::vector<std::uint64_t> out;
    const std::string suffix_model = to_lower(model) + "/" + to_lower(dataset) + "/";
    for (const auto& [key, budget] : cells_) {
      if (key.rfind(suffix_model, 0) == 0) out.push_back(budget);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  const std::map<std::string, std::uint64_t>& cells() const { return cells_; }

 private:
  std::map<std::string, std::uint64_t> cells_;
};

// ----------------------------------------------------------------------------
// Running an evaluation
// ----------------------------------------------------------------------------

/// Evaluation request for one problem; `setting` keeps tags distinct between
/// runs that share a prompt shape (original vs budget-free).
inline ChatRequest eval_request(const Problem& problem, std::optional<std::uint64_t> budget,
                                const std::string& budget_template, const std::string& model,
                                const std::string& setting) {
  const std::string prompt =
      budget ? render_budget_prompt(budget_template, problem, *budget) : problem.question;
  return user_request(model, prompt, "eval:" + setting + ":" + problem.id);
}

/// One generation per problem. Traces carry origin=inference(budget or 0),
/// tokenizer-counted lengths, and grading results; a failed call yields an
/// ungraded empty trace (counts as incorrect).
inline std::vector<Trace> run_eval(const std::vector<Problem>& problems, Gateway& gateway,
                                   std::optional<std::uint64_t> budget,
                                   const std::string& budget_template, const std::string& model,
                                   const Tokenizer& tokenizer, const std::string& setting,
                                   std::size_t max_in_flight, std::ostream* log = nullptr) {
  if (budget) validate_budget_template(budget_template);
  std::vector<ChatRequest> requests;
  requests.reserve(problems.size());
  for (const Problem& p : problems)
    requests.push_back(eval_request(p, budget, budget_template, model, setting));
  const auto responses = gateway.complete_batch(requests, max_in_flight);

  std::vector<Trace> out;
  out.reserve(problems.size());
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const Problem& p = problems[i];
    Trace t;
    t.problem_id = p.id;
    t.origin = Origin::inference(budget.value_or(0));
    if (!responses[i].ok()) {
      if (log)
        *log << "eval: " << requests[i].tag << " failed: " << responses[i].finish_reason.detail
             << "\n";
      t.text.clear();
      t.token_count = 0;
    } else {
      t.text = responses[i].text;
      t.token_count = tokenizer.count(t.text);
      const auto graded = grade_answer(t.text, p.gold_answer);
      if (graded) {
        t.predicted_answer = graded->first;
        t.correct = graded->second;
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

// ----------------------------------------------------------------------------
// Metrics
// ----------------------------------------------------------------------------

struct EvalReportRow {
  std::string model;
  std::string dataset;
  std::string setting;  // CS level, "original", "budget-free", or "budget-N"
  Rat accuracy_pct;     // 100 * correct / N
  Rat avg_tokens;
  Rat cr;  // avg_tokens / baseline avg_tokens
  Rat te;  // accuracy_pct / avg_tokens * 100
  std::size_t n_items = 0;

  std::string accuracy_str() const { return rat_to_fixed(accuracy_pct, 2); }
  std::string avg_tokens_str() const { return rat_to_fixed(avg_tokens, 2); }
  std::string cr_str() const { return rat_to_fixed(cr, 2); }
  std::string te_str() const { return rat_to_fixed(te, 2); }
};

/// CR and TE from already-aggregated accuracy and token counts; exact.
inline EvalReportRow compute_metrics(const Rat& accuracy_pct, const Rat& avg_tokens,
                                     const Rat& baseline_avg_tokens) {
  if (!(baseline_avg_tokens > 0))
    throw StageError("compute_metrics: baseline average tokens must be positive");
  EvalReportRow row;
  row.accuracy_pct = accuracy_pct;
  row.avg_tokens = avg_tokens;
  row.cr = avg_tokens / baseline_avg_tokens;
  row.te = avg_tokens > 0 ? accuracy_pct / avg_tokens * 100 : Rat(0);
  return row;
}

/// Reduce graded traces to a metric row against a baseline token average.
inline EvalReportRow compute_metrics(const std::vector<Trace>& traces,
                                     const Rat& baseline_avg_tokens) {
  if (traces.empty()) throw StageError("compute_metrics: empty trace list");
  std::size_t correct = 0;
  std::uint64_t total_tokens = 0;
  for (const Trace& t : traces) {
    correct += t.correct && *t.correct;
    total_tokens += t.token_count;
  }
  const auto n = static_cast<std::int64_t>(traces.size());
  EvalReportRow row = compute_metrics(Rat(100 * static_cast<std::int64_t>(correct), n),
                                      Rat(static_cast<std::int64_t>(total_tokens), n),
                                      baseline_avg_tokens);
  row.n_items = traces.size();
  return row;
}

// ----------------------------------------------------------------------------
// Report emission
// ----------------------------------------------------------------------------

enum class ReportFormat { markdown_table, csv, plot_csv };

namespace detail {

inline std::string escape_pipes(const std::string& s) { return replace_all(s, "|", "\\|"); }

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  return "\"" + replace_all(s, "\"", "\"\"") + "\"";
}

}  // namespace detail

/// Render rows deterministically. markdown_table and csv sort by
/// (model, dataset, setting); plot_csv orders each (model, dataset) series by
/// ascending token count for accuracy-versus-length plotting.
inline std::string render_report(std::vector<EvalReportRow> rows, ReportFormat format) {
  if (format == ReportFormat::plot_csv) {
    std::sort(rows.begin(), rows.end(), [](const EvalReportRow& a, const EvalReportRow& b) {
      if (a.model != b.model) return a.model < b.model;
      if (a.dataset != b.dataset) return a.dataset < b.dataset;
      if (a.avg_tokens != b.avg_tokens) return a.avg_tokens < b.avg_tokens;
      return a.setting < b.setting;
    });
    std::string out = "model,dataset,setting,avg_tokens,accuracy_pct\n";
    for (const auto& r : rows) {
      out += detail::csv_field(r.model) + "," + detail::csv_field(r.dataset) + "," +
             detail::csv_field(r.setting) + "," + r.avg_tokens_str() + "," + r.accuracy_str() +
             "\n";
    }
    return out;
  }

  std::sort(rows.begin(), rows.end(), [](const EvalReportRow& a, const EvalReportRow& b) {
    if (a.model != b.model) return a.model < b.model;
    if (a.dataset != b.dataset) return a.dataset < b.dataset;
    return a.setting < b.setting;
  });
  if (format == ReportFormat::csv) {
    std::string out = "model,dataset,setting,accuracy_pct,avg_tokens,cr,te,n_items\n";
    for (const auto& r : rows) {
      out += detail::csv_field(r.model) + "," + detail::csv_field(r.dataset) + "," +
             detail::csv_field(r.setting) + "," + r.accuracy_str() + "," + r.avg_tokens_str() +
             "," + r.cr_str() + "," + r.te_str() + "," + std::to_string(r.n_items) + "\n";
    }
    return out;
  }
  std::string out =
      "| Model | Dataset | Setting | Acc. | Tokens | CR | TE | N |\n"
      "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    out += "| " + detail::escape_pipes(r.model) + " | " + detail::escape_pipes(r.dataset) +
           " | " + detail::escape_pipes(r.setting) + " | " + r.accuracy_str() + " | " +
           r.avg_tokens_str() + " | " + r.cr_str() + " | " + r.te_str() + " | " +
           std::to_string(r.n_items) + " |\n";
  }
  return out;
}

inline void emit_report(const std::vector<EvalReportRow>& rows, ReportFormat format,
                        const std::string& path) {
  write_file(path, render_report(rows, format));
}

// ----------------------------------------------------------------------------
// Compressed-CoT recovery
// ----------------------------------------------------------------------------

inline void validate_recovery_template(const std::string& recovery_template) {
  if (!contains(recovery_template, kQuestionPlaceholder) ||
      !contains(recovery_template, kCompressedPlaceholder))
    throw ConfigError("recovery template needs " + std::string(kQuestionPlaceholder) + " and " +
                      std::string(kCompressedPlaceholder));
}

/// Expansion request for a compressed trace. The default tag hashes the
/// compressed text so calls stay distinct and replayable without an id.
inline ChatRequest recovery_request(const std::string& recovery_template,
                                    const std::string& question, const std::string& compressed,
                                    const std::string& model, std::string tag = "") {
  validate_recovery_template(recovery_template);
  if (tag.empty()) tag = "recover:" + to_hex(fnv1a64(compressed));
  const std::string prompt = render_template(
      recovery_template,
      {{kQuestionPlaceholder, question}, {kCompressedPlaceholder, compressed}});
  return user_request(model, prompt, std::move(tag));
}

/// Expand a compressed CoT into a readable one. Gateway errors propagate;
/// answer consistency is the caller's check (grade both sides).
inline std::string recover_cot(const std::string& compressed, const std::string& question,
                               Gateway& gateway, const std::string& recovery_template,
                               const std::string& model, const std::string& tag = "") {
  const auto response =
      gateway.complete(recovery_request(recovery_template, question, compressed, model, tag));
  if (!response.ok())
    throw GatewayError("recovery failed: " + response.finish_reason.detail);
  return response.text;
}

}  // namespace ctrlcot
