#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "ctrlcot/dag.hpp"
#include "ctrlcot/sft.hpp"

using namespace ctrlcot;
namespace fs = std::filesystem;

namespace {

Problem problem(const std::string& id, const std::string& question, const std::string& gold) {
  return {id, question, gold, "gsm8k", Split::train};
}

Trace ultra_seed(const std::string& id, const std::string& text) {
  BuiltinTokenizer tok;
  Trace t;
  t.problem_id = id;
  t.text = text;
  t.origin = Origin::hra(Tier::ultra_concise);
  t.token_count = tok.count(text);
  t.predicted_answer = "x";
  t.correct = true;
  return t;
}

// a scorer with flat scores; selection then degrades to position order
LinearScorer flat_scorer() {
  PrunerModel m;
  m.feature_names = Featurizer::feature_names();
  m.weights.assign(Featurizer::feature_count(), 0.0);
  return LinearScorer(m, Featurizer());
}

std::string tmp(const std::string& name) {
  return (fs::temp_directory_path() / ("ctrlcot_dag_" + name)).string();
}

}  // namespace

// ----------------------------------------------------------------------------
// Ratio sets
// ----------------------------------------------------------------------------

TEST_CASE("ratio set: defaults are 0.3 .. 1.0") {
  const auto set = RatioSet::defaults();
  REQUIRE(set.ratios.size() == 8);
  CHECK(set.ratios.front() == Rat(3, 10));
  CHECK(set.ratios.back() == Rat(1));
  set.validate();
}

TEST_CASE("ratio set: validation") {
  CHECK_THROWS_AS(RatioSet::from_strings({}), ConfigError);
  CHECK_THROWS_AS(RatioSet::from_strings({"0.5", "0.4"}), ConfigError);          // not increasing
  CHECK_THROWS_AS(RatioSet::from_strings({"0.2", "0.5"}), ConfigError);          // below floor
  CHECK_THROWS_AS(RatioSet::from_strings({"0.5", "1.1"}), ConfigError);          // above 1
  CHECK_NOTHROW(RatioSet::from_strings({"0.2", "0.5"}, Rat(1, 10)));             // floor override
  const auto set = RatioSet::from_strings({"0.3", "0.65", "1.0"});
  CHECK(set.contains(rat_from_decimal("0.65")));
  CHECK_FALSE(set.contains(rat_from_decimal("0.4")));
}

// ----------------------------------------------------------------------------
// MCG training data
// ----------------------------------------------------------------------------

TEST_CASE("build_mcg_training: cardinality and per-ratio pruning") {
  BuiltinTokenizer tok;
  const auto scorer = flat_scorer();
  const auto ratios = RatioSet::defaults();
  std::vector<Problem> problems;
  std::vector<Trace> seeds;
  std::unordered_map<std::string, Bucket> buckets;
  for (int i = 0; i < 10; ++i) {
    const std::string id = "a" + std::to_string(i);
    problems.push_back(problem(id, "question " + std::to_string(i), "1"));
    seeds.push_back(ultra_seed(id, "one two three four five six seven eight nine 1"));
    buckets[id] = Bucket::A;
  }
  const auto examples =
      build_mcg_training(seeds, index_problems(problems), buckets, scorer, ratios,
                         default_mcg_template_text(), tok);
  CHECK(examples.size() == 80);  // 10 seeds x 8 ratios

  for (const auto& ex : examples) {
    const std::size_t seed_tokens = 10;
    CHECK(tok.count(ex.target) == rat_ceil_mul(ex.ratio, seed_tokens));
    CHECK(contains(ex.prompt, "question "));
    CHECK(contains(ex.prompt, rat_to_compact(ex.ratio)));
    CHECK(tok.count(ex.target) <= seed_tokens);
  }
  // gamma = 1.0 rows keep the full token content
  for (const auto& ex : examples) {
    if (ex.ratio == Rat(1))
      CHECK(tok.tokenize(ex.target).tokens ==
            tok.tokenize("one two three four five six seven eight nine 1").tokens);
  }
}

TEST_CASE("build_mcg_training: bucket B seed is cross-contamination") {
  BuiltinTokenizer tok;
  const auto scorer = flat_scorer();
  const auto p = problem("b1", "q", "1");
  const auto seed = ultra_seed("b1", "text 1");
  CHECK_THROWS_WITH_AS(
      build_mcg_training({seed}, index_problems({p}), {{"b1", Bucket::B}}, scorer,
                         RatioSet::defaults(), default_mcg_template_text(), tok),
      doctest::Contains("cross-contamination"), StageError);
}

TEST_CASE("build_mcg_training: only correct ultra seeds are accepted") {
  BuiltinTokenizer tok;
  const auto scorer = flat_scorer();
  const auto p = problem("a1", "q", "1");
  auto wrong_tier = ultra_seed("a1", "text 1");
  wrong_tier.origin = Origin::hra(Tier::concise);
  CHECK_THROWS_AS(build_mcg_training({wrong_tier}, index_problems({p}), {{"a1", Bucket::A}},
                                     scorer, RatioSet::defaults(),
                                     default_mcg_template_text(), tok),
                  StageError);
}

TEST_CASE("mcg_examples_to_sft carries ratio provenance and target budgets") {
  BuiltinTokenizer tok;
  McgTrainingExample ex;
  ex.problem_id = "a1";
  ex.ratio = rat_from_decimal("0.4");
  ex.prompt = "prompt";
  ex.target = "kept 1 + 1";
  const auto records = mcg_examples_to_sft({ex}, tok);
  REQUIRE(records.size() == 1);
  CHECK(records[0].origin.kind == Origin::Kind::dag);
  CHECK(records[0].origin.ratio == Rat(2, 5));
  CHECK(records[0].budget == tok.count("kept 1 + 1"));
}

// ----------------------------------------------------------------------------
// MCG application
// ----------------------------------------------------------------------------

TEST_CASE("apply_mcg: filtering and survival accounting") {
  BuiltinTokenizer tok;
  const auto ratios = RatioSet::defaults();
  const auto p = problem("b1", "What is 4 + 4?", "8");
  std::unordered_map<std::string, Bucket> buckets{{"b1", Bucket::B}};

  std::string fixture;
  for (const Rat& r : ratios.ratios) {
    const auto req = mcg_request(default_mcg_template_text(), p, r, "mcg");
    // the 0.3 cell answers wrong, everything else is right
    const std::string text = r == Rat(3, 10) ? "4 + 4 = 9 \\boxed{9}"
                                             : "4 + 4 = 8 \\boxed{8}";
    nlohmann::json row{{"key", replay_key(req.tag, req.messages)},
                       {"response_text", text},
                       {"completion_tokens", 0},
                       {"finish_reason", "stop"}};
    fixture += row.dump() + "\n";
  }
  const auto path = tmp("apply.jsonl");
  write_file(path, fixture);

  ReplayGateway gw(path);
  const auto result = apply_mcg({p}, gw, ratios, default_mcg_template_text(), buckets, tok,
                                "mcg", 4, nullptr);
  CHECK(result.traces.size() == 7);
  CHECK(result.report.survived.at("0.3") == 0);
  CHECK(result.report.survived.at("0.4") == 1);
  for (const auto& t : result.traces) {
    CHECK(t.correct == true);
    CHECK(ratios.contains(t.origin.ratio));
  }
  fs::remove(path);
}

TEST_CASE("apply_mcg: bucket A problem is rejected") {
  BuiltinTokenizer tok;
  const auto p = problem("a1", "q", "1");
  const auto path = tmp("applybad.jsonl");
  write_file(path, "");
  ReplayGateway gw(path);
  CHECK_THROWS_WITH_AS(apply_mcg({p}, gw, RatioSet::defaults(), default_mcg_template_text(),
                                 {{"a1", Bucket::A}}, tok, "mcg", 1, nullptr),
                       doctest::Contains("cross-contamination"), StageError);
  fs::remove(path);
}

// ----------------------------------------------------------------------------
// Pooling and budget-tagged records
// ----------------------------------------------------------------------------

namespace {

Trace correct_trace(const std::string& id, const std::string& text, Origin origin) {
  BuiltinTokenizer tok;
  Trace t;
  t.problem_id = id;
  t.text = text;
  t.origin = origin;
  t.token_count = tok.count(text);
  t.predicted_answer = "1";
  t.correct = true;
  return t;
}

}  // namespace

TEST_CASE("pool: union with first-occurrence dedup") {
  std::vector<Trace> hra;
  std::vector<Trace> dag;
  for (int i = 0; i < 3; ++i)
    hra.push_back(correct_trace("p1", "hra text " + std::to_string(i),
                                Origin::hra(all_tiers()[static_cast<std::size_t>(i)])));
  for (int i = 0; i < 5; ++i)
    dag.push_back(correct_trace("p1", "dag text " + std::to_string(i),
                                Origin::dag(Rat(3 + i, 10))));
  auto pooled = pool(hra, dag);
  CHECK(pooled.at("p1").size() == 8);

  // identical text in both sources counts once, keeping the hra copy
  dag.push_back(correct_trace("p1", "hra text 0", Origin::dag(Rat(9, 10))));
  pooled = pool(hra, dag);
  CHECK(pooled.at("p1").size() == 8);
  CHECK(pooled.at("p1")[0].origin.kind == Origin::Kind::hra);
}

TEST_CASE("pool: incorrect trace is rejected naming the problem") {
  Trace bad;
  bad.problem_id = "p9";
  bad.text = "text";
  CHECK_THROWS_WITH_AS(pool({bad}, {}), doctest::Contains("p9"), StageError);
}

TEST_CASE("to_sft_records: budget directive rendering") {
  BuiltinTokenizer tok;
  const auto p = problem("p1", "How many?", "1");
  std::string text = "count";
  while (tok.count(text) < 138) text += " step";
  const auto t = correct_trace("p1", text, Origin::hra(Tier::detailed));
  REQUIRE(t.token_count == 138);

  const auto records = to_sft_records(pool({t}, {}), index_problems({p}),
                                      default_budget_template_text());
  REQUIRE(records.size() == 1);
  CHECK(contains(records[0].instruction, "approximately 138 tokens"));
  CHECK(contains(records[0].instruction, "How many?"));
  CHECK(records[0].budget == 138);
  CHECK(records[0].output == text);

  CHECK(to_sft_records({}, {}, default_budget_template_text()).empty());
}

TEST_CASE("to_sft_records: template validation") {
  CHECK_THROWS_AS(validate_budget_template("no placeholders"), ConfigError);
  CHECK_THROWS_AS(validate_budget_template("<QUESTION> only"), ConfigError);
  CHECK_THROWS_AS(validate_budget_template("<QUESTION> <BUDGET> <BUDGET>"), ConfigError);
  CHECK_NOTHROW(validate_budget_template("<QUESTION> use <BUDGET> tokens"));
}

// ----------------------------------------------------------------------------
// Budget-free selection
// ----------------------------------------------------------------------------

TEST_CASE("select_bfr: shortest correct candidate wins, ties to smaller budget") {
  BuiltinTokenizer tok;
  const BudgetGrid grid{{50, 100, 150}};
  const auto p1 = problem("p1", "What is 6 * 7?", "42");  // 100 shorter than 150
  const auto p2 = problem("p2", "What is 9 - 4?", "5");   // tie between 100 and 150
  const auto p3 = problem("p3", "What is 1 + 1?", "2");   // nothing correct

  const auto text_of = [](int words, const std::string& boxed) {
    std::string out;
    for (int i = 0; i < words; ++i) out += "w ";
    return out + "\\boxed{" + boxed + "}";
  };
  std::string fixture;
  const auto add = [&](const Problem& p, std::uint64_t budget, const std::string& text) {
    const auto req = bfr_request(default_budget_template_text(), p, budget, "bcr");
    nlohmann::json row{{"key", replay_key(req.tag, req.messages)},
                       {"response_text", text},
                       {"completion_tokens", 0},
                       {"finish_reason", "stop"}};
    fixture += row.dump() + "\n";
  };
  add(p1, 50, text_of(3, "41"));    // wrong
  add(p1, 100, text_of(60, "42"));  // correct, 60 words
  add(p1, 150, text_of(90, "42"));
  add(p2, 50, text_of(2, "0"));
  add(p2, 100, text_of(70, "5"));
  add(p2, 150, text_of(70, "5"));
  add(p3, 50, text_of(2, "3"));
  add(p3, 100, text_of(2, "3"));
  add(p3, 150, text_of(2, "3"));
  const auto path = tmp("bfr.jsonl");
  write_file(path, fixture);

  ReplayGateway gw(path);
  std::ostringstream log;
  const auto result = select_bfr({p1, p2, p3}, gw, grid, default_budget_template_text(), "bcr",
                                 tok, 2, &log);
  REQUIRE(result.records.size() == 2);
  CHECK(result.omitted == 1);
  CHECK(result.records[0].problem_id == "p1");
  CHECK(result.records[0].origin.budget == 100);
  CHECK(result.records[0].instruction == "What is 6 * 7?");  // no budget directive
  CHECK(result.records[1].problem_id == "p2");
  CHECK(result.records[1].origin.budget == 100);  // tie broken to the smaller budget
  CHECK(contains(log.str(), "no correct candidate for p3"));

  // candidate log marks exactly one selection per kept problem
  std::size_t selected = 0;
  for (const auto& c : result.candidates) selected += c.selected;
  CHECK(selected == 2);
  fs::remove(path);
}

// ----------------------------------------------------------------------------
// Export
// ----------------------------------------------------------------------------

TEST_CASE("export_sft: deterministic ordering and round-trip") {
  BuiltinTokenizer tok;
  std::vector<SftRecord> records;
  for (int i = 3; i >= 0; --i) {
    SftRecord r;
    r.instruction = "inst";
    r.output = "out " + std::to_string(i);
    r.problem_id = "p" + std::to_string(i % 2);
    r.origin = Origin::hra(Tier::concise);
    r.budget = static_cast<std::uint64_t>(10 + i);
    records.push_back(std::move(r));
  }
  const auto path1 = tmp("sft1.jsonl");
  const auto path2 = tmp("sft2.jsonl");
  export_sft(records, path1);
  export_sft(records, path2);
  CHECK(read_file(path1) == read_file(path2));

  const auto loaded = load_sft_records(path1);
  REQUIRE(loaded.size() == 4);
  CHECK(loaded[0].problem_id <= loaded[1].problem_id);
  CHECK(loaded[0].budget == 10);  // p0 budgets ascend: 10 (i=0? p0 holds i=0,2)
  fs::remove(path1);
  fs::remove(path2);
}

TEST_CASE("emit_trainer_config: pinned hyperparameters, deterministic bytes") {
  const auto path1 = tmp("trainer1.yaml");
  const auto path2 = tmp("trainer2.yaml");
  emit_trainer_config(path1);
  emit_trainer_config(path2);
  const std::string content = read_file(path1);
  CHECK(contains(content, "learning_rate: 5e-5"));
  CHECK(contains(content, "epochs: 3"));
  CHECK(contains(content, "lora_rank: 8"));
  CHECK(contains(content, "lora_alpha: 16"));
  CHECK(contains(content, "lr_scheduler: cosine"));
  CHECK(contains(content, "warmup_ratio: 0.1"));
  CHECK(contains(content, "per_device_train_batch_size: 1"));
  CHECK(contains(content, "gradient_accumulation_steps: 8"));
  CHECK(contains(content, "precision: bf16"));
  CHECK(read_file(path1) == read_file(path2));
  fs::remove(path1);
  fs::remove(path2);
}

TEST_CASE("default_budget_grid merges table cells with the 50..500 ladder") {
  const auto grid = default_budget_grid({125, 150, 175});
  CHECK(grid.budgets.front() == 50);
  CHECK(grid.budgets.back() == 500);
  CHECK(std::find(grid.budgets.begin(), grid.budgets.end(), 125) != grid.budgets.end());
  CHECK(std::find(grid.budgets.begin(), grid.budgets.end(), 175) != grid.budgets.end());
  // strictly increasing, no duplicates
  for (std::size_t i = 1; i < grid.budgets.size(); ++i)
    CHECK(grid.budgets[i] > grid.budgets[i - 1]);
}

TEST_CASE("budget grid validation") {
  CHECK_THROWS_AS(BudgetGrid{{}}.validate(), ConfigError);
  CHECK_THROWS_AS((BudgetGrid{{100, 100}}).validate(), ConfigError);
  CHECK_THROWS_AS((BudgetGrid{{0, 100}}).validate(), ConfigError);
}
