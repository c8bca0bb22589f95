#include <doctest.h>

#include <filesystem>
#include <random>

#include "ctrlcot/eval.hpp"
#include "../support/metric_fixture.hpp"

using namespace ctrlcot;
namespace fs = std::filesystem;

// ----------------------------------------------------------------------------
// Compression-strength tables
// ----------------------------------------------------------------------------

TEST_CASE("cs ladder maps exactly to 0.2 .. 0.9") {
  const auto& levels = cs_levels();
  REQUIRE(levels.size() == 8);
  for (std::size_t i = 0; i < levels.size(); ++i)
    CHECK(levels[i].cr_target == Rat(2 + static_cast<int>(i), 10));
  CHECK(levels.front().name == CsName::high_ppp);
  CHECK(levels.back().name == CsName::low_mm);
  CHECK(cs_display_name(CsName::high_ppp) == "High+++");
  CHECK(cs_display_name(CsName::low_mm) == "Low--");
}

TEST_CASE("budget_for: default table cells") {
  const auto table = BudgetTable::defaults();
  CHECK(table.budget_for(CsName::high, "Qwen2.5-7B", "MATH-500") == 150);
  CHECK(table.budget_for(CsName::low, "Llama3.1-8B", "GSM8K") == 100);
  CHECK(table.budget_for(CsName::low_mm, "qwen2.5-14b", "math-500") == 450);
  CHECK_THROWS_WITH_AS(table.budget_for(CsName::high, "unknown-model", "gsm8k"),
                       doctest::Contains("available:"), ConfigError);
}

TEST_CASE("shipped budgets.toml matches the built-in defaults") {
  const std::string path = std::string(CTRLCOT_SOURCE_DIR) + "/config/budgets.toml";
  REQUIRE(file_exists(path));
  const auto shipped = BudgetTable::load(path);
  const auto defaults = BudgetTable::defaults();
  CHECK(shipped.cells() == defaults.cells());
  for (const auto& cell : testvec::budget_cells()) {
    const CsName cs = cs_from_string(cell.cs);
    CHECK(shipped.budget_for(cs, cell.model, "gsm8k") == cell.gsm8k);
    CHECK(shipped.budget_for(cs, cell.model, "math-500") == cell.math500);
  }
}

TEST_CASE("budgets_for_pair collects a model's column") {
  const auto table = BudgetTable::defaults();
  const auto budgets = table.budgets_for_pair("qwen2.5-7b", "gsm8k");
  CHECK(budgets == std::vector<std::uint64_t>{125, 150, 175, 200, 250});
}

// ----------------------------------------------------------------------------
// Metrics
// ----------------------------------------------------------------------------

TEST_CASE("compute_metrics: published example rows") {
  // strongest-compression row: acc 58.00, 225.61 tokens vs 574.58 baseline
  auto row = compute_metrics(rat_from_decimal("58.00"), rat_from_decimal("225.61"),
                             rat_from_decimal("574.58"));
  CHECK(row.te_str() == "25.71");
  CHECK(row.cr_str() == "0.39");

  // original run against itself
  row = compute_metrics(rat_from_decimal("93.03"), rat_from_decimal("313.94"),
                        rat_from_decimal("313.94"));
  CHECK(row.cr_str() == "1.00");

  // zero accuracy forces zero efficiency
  row = compute_metrics(Rat(0), rat_from_decimal("100.00"), rat_from_decimal("200.00"));
  CHECK(row.te_str() == "0.00");
}

TEST_CASE("compute_metrics: reproduces every transcribed fixture row within 0.01") {
  for (const auto& fixture_row : testvec::metric_rows()) {
    CAPTURE(fixture_row.model);
    CAPTURE(fixture_row.dataset);
    CAPTURE(fixture_row.setting);
    CAPTURE(fixture_row.method);
    const auto row =
        compute_metrics(rat_from_decimal(fixture_row.accuracy),
                        rat_from_decimal(fixture_row.tokens),
                        rat_from_decimal(fixture_row.baseline_tokens));
    // compare at 2 decimals, tolerance one hundredth
    const auto close = [](const std::string& got, const char* want) {
      const Rat diff = rat_from_decimal(got) - rat_from_decimal(want);
      const Rat mag = diff >= 0 ? diff : -diff;
      return mag <= Rat(1, 100);
    };
    CHECK(close(row.cr_str(), fixture_row.cr));
    CHECK(close(row.te_str(), fixture_row.te));
  }
}

TEST_CASE("compute_metrics: trace reduction") {
  std::vector<Trace> traces;
  for (int i = 0; i < 4; ++i) {
    Trace t;
    t.problem_id = "p" + std::to_string(i);
    t.origin = Origin::inference(125);
    t.token_count = 100 + static_cast<std::size_t>(i);  // mean 101.5
    if (i < 3) {
      t.predicted_answer = "1";
      t.correct = i < 2;  // 2 correct
    }
    traces.push_back(std::move(t));
  }
  const auto row = compute_metrics(traces, rat_from_decimal("203.00"));
  CHECK(row.n_items == 4);
  CHECK(row.accuracy_pct == Rat(50));
  CHECK(row.avg_tokens == Rat(203, 2));
  CHECK(row.cr_str() == "0.50");
  CHECK(row.te == Rat(50) / Rat(203, 2) * 100);

  CHECK_THROWS_AS(compute_metrics(std::vector<Trace>{}, Rat(1)), StageError);
  CHECK_THROWS_AS(compute_metrics(Rat(1), Rat(1), Rat(0)), StageError);
}

TEST_CASE("te is monotone: down in tokens, up in accuracy") {
  std::mt19937 rng(77);
  for (int iter = 0; iter < 200; ++iter) {
    const Rat acc(static_cast<int>(1 + rng() % 10000), 100);
    const Rat tokens(static_cast<int>(1 + rng() % 100000), 100);
    const Rat more_tokens = tokens + Rat(static_cast<int>(1 + rng() % 1000), 100);
    const Rat more_acc = acc + Rat(static_cast<int>(1 + rng() % 1000), 100);
    const Rat baseline(300);
    CHECK(compute_metrics(acc, more_tokens, baseline).te <
          compute_metrics(acc, tokens, baseline).te);
    CHECK(compute_metrics(more_acc, tokens, baseline).te >
          compute_metrics(acc, tokens, baseline).te);
  }
}

// ----------------------------------------------------------------------------
// Running an evaluation over replay
// ----------------------------------------------------------------------------

namespace {

Problem test_problem(int i, const std::string& gold) {
  return {"t" + std::to_string(i), "Question " + std::to_string(i) + "?", gold, "gsm8k",
          Split::test};
}

}  // namespace

TEST_CASE("run_eval: grading, budget prompts, determinism") {
  BuiltinTokenizer tok;
  std::vector<Problem> problems;
  for (int i = 0; i < 4; ++i) problems.push_back(test_problem(i, "7"));

  std::string fixture;
  for (int i = 0; i < 4; ++i) {
    const auto req = eval_request(problems[static_cast<std::size_t>(i)], 125,
                                  default_budget_template_text(), "bcr", "b125");
    CHECK(contains(req.messages[0].content, "approximately 125 tokens"));
    const std::string text = i == 3 ? "wrong \\boxed{9}" : "right \\boxed{7}";
    nlohmann::json row{{"key", replay_key(req.tag, req.messages)},
                       {"response_text", text},
                       {"completion_tokens", 0},
                       {"finish_reason", "stop"}};
    fixture += row.dump() + "\n";
  }
  const auto path = (fs::temp_directory_path() / "ctrlcot_eval_fix.jsonl").string();
  write_file(path, fixture);

  ReplayGateway gw(path);
  const auto traces =
      run_eval(problems, gw, 125, default_budget_template_text(), "bcr", tok, "b125", 2);
  REQUIRE(traces.size() == 4);
  std::size_t correct = 0;
  for (const auto& t : traces) {
    CHECK(t.origin.kind == Origin::Kind::inference);
    CHECK(t.origin.budget == 125);
    CHECK(t.token_count == tok.count(t.text));
    correct += t.correct && *t.correct;
  }
  CHECK(correct == 3);

  const auto again =
      run_eval(problems, gw, 125, default_budget_template_text(), "bcr", tok, "b125", 2);
  for (std::size_t i = 0; i < traces.size(); ++i) CHECK(again[i].text == traces[i].text);
  fs::remove(path);
}

// ----------------------------------------------------------------------------
// Recovery
// ----------------------------------------------------------------------------

TEST_CASE("recover_cot: expansion preserves the boxed answer on the fixture") {
  const std::string compressed = "6*7 \\boxed{8}";
  const std::string question = "Six sevenths of what?";
  const auto req =
      recovery_request(default_recovery_template_text(), question, compressed, "m");
  const std::string recovered_text =
      "First multiply six by seven, then adjust; the final answer is \\boxed{8}.";
  nlohmann::json row{{"key", replay_key(req.tag, req.messages)},
                     {"response_text", recovered_text},
                     {"completion_tokens", 0},
                     {"finish_reason", "stop"}};
  const auto path = (fs::temp_directory_path() / "ctrlcot_recover_fix.jsonl").string();
  write_file(path, row.dump() + "\n");

  ReplayGateway gw(path);
  const std::string recovered =
      recover_cot(compressed, question, gw, default_recovery_template_text(), "m");
  CHECK(recovered == recovered_text);
  // answer consistency between the compressed and recovered traces
  CHECK(extract_answer(recovered) == extract_answer(compressed));

  BuiltinTokenizer tok;
  CHECK(tok.count(recovered) >= tok.count(compressed));
  fs::remove(path);
}

TEST_CASE("recovery template validation") {
  CHECK_THROWS_AS(validate_recovery_template("<QUESTION> only"), ConfigError);
  CHECK_THROWS_AS(validate_recovery_template("<COMPRESSED> only"), ConfigError);
  CHECK_NOTHROW(validate_recovery_template(default_recovery_template_text()));
}

// ----------------------------------------------------------------------------
// Reports
// ----------------------------------------------------------------------------

namespace {

EvalReportRow report_row(const std::string& model, const std::string& dataset,
                         const std::string& setting, const char* acc, const char* tokens,
                         const char* baseline) {
  auto row = compute_metrics(rat_from_decimal(acc), rat_from_decimal(tokens),
                             rat_from_decimal(baseline));
  row.model = model;
  row.dataset = dataset;
  row.setting = setting;
  row.n_items = 500;
  return row;
}

}  // namespace

TEST_CASE("emit_report: csv and markdown shapes") {
  const std::vector<EvalReportRow> rows = {
      report_row("m|odel", "gsm8k", "high", "80.00", "150.00", "300.00"),
      report_row("amodel", "gsm8k", "original", "90.00", "300.00", "300.00"),
  };
  const std::string csv = render_report(rows, ReportFormat::csv);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 rows
  CHECK(contains(csv, "amodel,gsm8k,original,90.00,300.00,1.00,30.00,500"));

  const std::string md = render_report(rows, ReportFormat::markdown_table);
  CHECK(contains(md, "m\\|odel"));
  CHECK(contains(md, "| 80.00 | 150.00 | 0.50 |"));

  const std::string plot = render_report(rows, ReportFormat::plot_csv);
  CHECK(contains(plot, "model,dataset,setting,avg_tokens,accuracy_pct"));

  // deterministic re-emission
  const auto path1 = (fs::temp_directory_path() / "ctrlcot_r1.csv").string();
  const auto path2 = (fs::temp_directory_path() / "ctrlcot_r2.csv").string();
  emit_report(rows, ReportFormat::csv, path1);
  emit_report(rows, ReportFormat::csv, path2);
  CHECK(read_file(path1) == read_file(path2));
  fs::remove(path1);
  fs::remove(path2);
}

TEST_CASE("plot_csv orders each series by ascending tokens") {
  const std::vector<EvalReportRow> rows = {
      report_row("m", "d", "low", "85.00", "250.00", "300.00"),
      report_row("m", "d", "high", "75.00", "120.00", "300.00"),
      report_row("m", "d", "mid", "80.00", "180.00", "300.00"),
  };
  const std::string plot = render_report(rows, ReportFormat::plot_csv);
  const auto high_pos = plot.find("high");
  const auto mid_pos = plot.find("mid");
  const auto low_pos = plot.find("low");
  CHECK(high_pos < mid_pos);
  CHECK(mid_pos < low_pos);
}
