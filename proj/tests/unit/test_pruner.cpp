#include <doctest.h>

#include <filesystem>
#include <random>

#include "ctrlcot/pruner.hpp"
#include "ctrlcot/remote_scorer.hpp"
#include "../support/lcs_oracle.hpp"
#include "../support/stub_server.hpp"
#include "../support/text_gen.hpp"

using namespace ctrlcot;
namespace fs = std::filesystem;

namespace {

TokenizedText tokens_of(std::vector<std::string> tokens) {
  TokenizedText t;
  t.tokens = std::move(tokens);
  return t;
}

// Synthetic supervision: keep a token iff its class is in `keep`.
std::vector<LabeledTokens> synthetic_dataset(const Featurizer& fz,
                                             const std::vector<TokenClass>& keep,
                                             std::size_t sentences, std::mt19937& rng) {
  BuiltinTokenizer tok;
  std::vector<LabeledTokens> out;
  for (std::size_t s = 0; s < sentences; ++s) {
    LabeledTokens item;
    item.text = tok.tokenize(testgen::math_sentence(rng, 12 + rng() % 30));
    for (const auto& token : item.text.tokens) {
      const TokenClass cls = fz.classify(token);
      bool is_keep = false;
      for (TokenClass k : keep) is_keep |= cls == k;
      item.labels.labels.push_back(is_keep);
    }
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace

// ----------------------------------------------------------------------------
// Alignment
// ----------------------------------------------------------------------------

TEST_CASE("derive_keep_labels: identity and empty compressions") {
  const auto orig = tokens_of({"a", "b", "c"});
  CHECK(derive_keep_labels(orig, orig).labels == std::vector<bool>{true, true, true});
  CHECK(derive_keep_labels(orig, tokens_of({})).labels ==
        std::vector<bool>{false, false, false});
}

TEST_CASE("derive_keep_labels: earliest-match tie-breaking") {
  const auto labels =
      derive_keep_labels(tokens_of({"a", "b", "a", "c"}), tokens_of({"a", "c"}));
  CHECK(labels.labels == std::vector<bool>{true, false, false, true});
}

TEST_CASE("derive_keep_labels: teacher insertions carry no label") {
  const auto labels =
      derive_keep_labels(tokens_of({"x", "y"}), tokens_of({"new", "x", "extra", "y", "tail"}));
  CHECK(labels.labels == std::vector<bool>{true, true});
}

TEST_CASE("derive_keep_labels: matches the brute-force oracle on random pairs") {
  std::mt19937 rng(42);
  for (int iter = 0; iter < 300; ++iter) {
    const auto a = testgen::token_sequence(rng, 1 + rng() % 10, 3);
    const auto b = testgen::token_sequence(rng, rng() % 10, 3);
    const auto got = derive_keep_labels(tokens_of(a), tokens_of(b));

    std::vector<std::size_t> indices;
    for (std::size_t i = 0; i < got.labels.size(); ++i)
      if (got.labels[i]) indices.push_back(i);

    // marked tokens form a common subsequence of maximal length
    std::vector<std::string> marked;
    for (std::size_t i : indices) marked.push_back(a[i]);
    CHECK(testoracle::is_subsequence(marked, b));
    CHECK(indices.size() == testoracle::brute_lcs_length(a, b));
    // and the earliest such index set
    CHECK(indices == testoracle::brute_earliest_lcs_indices(a, b));
  }
}

// ----------------------------------------------------------------------------
// Featurization
// ----------------------------------------------------------------------------

TEST_CASE("featurize: class indicators and position") {
  Featurizer fz;
  const auto t = tokens_of({"42", "+", "so", ",", "apples"});
  const auto names = Featurizer::feature_names();
  const auto feature = [&](const std::vector<double>& row, const std::string& name) {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return row[i];
    FAIL("unknown feature ", name);
    return -1.0;
  };

  const auto f0 = fz.featurize(t, 0);
  CHECK(feature(f0, "is_numeric") == 1);
  CHECK(feature(f0, "is_operator") == 0);
  CHECK(feature(f0, "relative_position") == 0);
  CHECK(feature(f0, "next_is_operator") == 1);

  const auto f1 = fz.featurize(t, 1);
  CHECK(feature(f1, "is_operator") == 1);
  CHECK(feature(f1, "prev_is_numeric") == 1);

  const auto f2 = fz.featurize(t, 2);
  CHECK(feature(f2, "is_connective") == 1);

  const auto f3 = fz.featurize(t, 3);
  CHECK(feature(f3, "is_punctuation") == 1);

  const auto f4 = fz.featurize(t, 4);
  CHECK(feature(f4, "relative_position") == 1);
  CHECK(feature(f4, "len_bucket_4_6") == 1);

  CHECK_THROWS_AS(fz.featurize(t, 5), StageError);
}

TEST_CASE("featurize: classify covers the lexicons") {
  Featurizer fz;
  CHECK(fz.classify("3.14") == TokenClass::numeric);
  CHECK(fz.classify("1,234") == TokenClass::numeric);
  CHECK(fz.classify("%") == TokenClass::op);
  CHECK(fz.classify("Therefore") == TokenClass::connective);
  CHECK(fz.classify(";") == TokenClass::punctuation);
  CHECK(fz.classify("apples") == TokenClass::word);
}

// ----------------------------------------------------------------------------
// Training
// ----------------------------------------------------------------------------

TEST_CASE("train_pruner: separable labels reach near-perfect accuracy") {
  Featurizer fz;
  std::mt19937 rng(3);
  const auto data = synthetic_dataset(fz, {TokenClass::numeric}, 120, rng);
  const auto report = train_pruner(data, fz, 400, 2.0, 17);
  CHECK(report.training_accuracy >= 0.99);
  CHECK(report.loss_curve.size() == 400);
}

TEST_CASE("train_pruner: loss is non-increasing at a small step size") {
  Featurizer fz;
  std::mt19937 rng(4);
  const auto data = synthetic_dataset(fz, {TokenClass::numeric, TokenClass::op}, 40, rng);
  const auto report = train_pruner(data, fz, 10, 0.05, 1);
  for (std::size_t e = 1; e < report.loss_curve.size(); ++e)
    CHECK(report.loss_curve[e] <= report.loss_curve[e - 1] + 1e-12);
}

TEST_CASE("train_pruner: determinism in the seed") {
  Featurizer fz;
  std::mt19937 rng(5);
  const auto data = synthetic_dataset(fz, {TokenClass::numeric}, 20, rng);
  const auto a = train_pruner(data, fz, 20, 0.5, 99);
  const auto b = train_pruner(data, fz, 20, 0.5, 99);
  CHECK(a.model.weights == b.model.weights);
  CHECK(a.model.bias == b.model.bias);
}

TEST_CASE("train_pruner: degenerate single-class input names the missing class") {
  Featurizer fz;
  LabeledTokens all_keep;
  all_keep.text = tokens_of({"1", "2"});
  all_keep.labels.labels = {true, true};
  CHECK_THROWS_WITH_AS(train_pruner({all_keep}, fz, 5, 0.1, 0),
                       doctest::Contains("missing class: drop"), StageError);
  LabeledTokens all_drop;
  all_drop.text = tokens_of({"1", "2"});
  all_drop.labels.labels = {false, false};
  CHECK_THROWS_WITH_AS(train_pruner({all_drop}, fz, 5, 0.1, 0),
                       doctest::Contains("missing class: keep"), StageError);
}

TEST_CASE("gradient matches central finite differences") {
  std::mt19937 rng(31337);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> weight(-0.8, 0.8);
  const double h = 1e-6;

  for (int config = 0; config < 30; ++config) {
    const std::size_t n = 4 + rng() % 24;
    const std::size_t d = 3 + rng() % 8;
    std::vector<std::vector<double>> X(n, std::vector<double>(d));
    std::vector<bool> y(n);
    for (auto& row : X)
      for (double& v : row) v = unit(rng);
    for (std::size_t i = 0; i < n; ++i) y[i] = rng() % 2 == 0;
    std::vector<double> w(d);
    for (double& v : w) v = weight(rng);
    double b = weight(rng);

    std::vector<double> grad_w;
    double grad_b = 0;
    pruner_gradient(X, y, w, b, grad_w, grad_b);

    const auto check_close = [](double analytic, double numeric) {
      const double rel =
          std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      CHECK(rel < 1e-4);
    };
    for (std::size_t k = 0; k < d; ++k) {
      auto wp = w;
      auto wm = w;
      wp[k] += h;
      wm[k] -= h;
      check_close(grad_w[k], (pruner_loss(X, y, wp, b) - pruner_loss(X, y, wm, b)) / (2 * h));
    }
    check_close(grad_b, (pruner_loss(X, y, w, b + h) - pruner_loss(X, y, w, b - h)) / (2 * h));
  }
}

// ----------------------------------------------------------------------------
// Pruning
// ----------------------------------------------------------------------------

namespace {

LinearScorer trained_numeric_scorer(std::vector<TokenClass> protect = {}) {
  Featurizer fz;
  std::mt19937 rng(8);
  const auto data = synthetic_dataset(fz, {TokenClass::numeric}, 120, rng);
  auto report = train_pruner(data, fz, 400, 2.0, 17);
  report.model.protected_classes = std::move(protect);
  return LinearScorer(report.model, fz);
}

}  // namespace

TEST_CASE("prune: identity at gamma = 1 and exact counts otherwise") {
  BuiltinTokenizer tok;
  const auto scorer = trained_numeric_scorer();
  const std::string text = "one two three four five six seven eight nine ten";

  const std::string full = prune(text, scorer, Rat(1), tok);
  CHECK(tok.tokenize(full).tokens == tok.tokenize(text).tokens);

  const std::string third = prune(text, scorer, rat_from_decimal("0.3"), tok);
  CHECK(tok.count(third) == 3);
}

TEST_CASE("prune: trained scorer retains the numbers") {
  BuiltinTokenizer tok;
  const auto scorer = trained_numeric_scorer();
  const std::string out = prune("add 2 and 3 to get 5", scorer, Rat(1, 2), tok);
  CHECK(contains(out, "2"));
  CHECK(contains(out, "3"));
  CHECK(contains(out, "5"));
}

TEST_CASE("prune: validation errors") {
  BuiltinTokenizer tok;
  const auto scorer = trained_numeric_scorer();
  CHECK_THROWS_AS(prune("text", scorer, Rat(0), tok), StageError);
  CHECK_THROWS_AS(prune("text", scorer, Rat(3, 2), tok), StageError);
  CHECK_THROWS_AS(prune("", scorer, Rat(1, 2), tok), StageError);
  CHECK_THROWS_AS(prune("   ", scorer, Rat(1, 2), tok), StageError);
}

TEST_CASE("prune: ratio adherence on random texts") {
  BuiltinTokenizer tok;
  const auto scorer = trained_numeric_scorer();
  std::mt19937 rng(21);
  const std::vector<std::string> gammas = {"0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1.0"};
  for (int iter = 0; iter < 40; ++iter) {
    const std::string text = testgen::math_sentence(rng, 1 + rng() % 120);
    const std::size_t n = tok.count(text);
    for (const auto& g : gammas) {
      const Rat gamma = rat_from_decimal(g);
      CHECK(tok.count(prune(text, scorer, gamma, tok)) == rat_ceil_mul(gamma, n));
    }
  }
}

TEST_CASE("prune: kept sets nest as gamma grows") {
  BuiltinTokenizer tok;
  const auto scorer = trained_numeric_scorer({TokenClass::numeric});
  std::mt19937 rng(22);
  for (int iter = 0; iter < 30; ++iter) {
    const std::string text = testgen::math_sentence(rng, 5 + rng() % 60);
    const auto t = tok.tokenize(text);
    const auto probs = scorer.keep_probabilities(t);
    const auto mask = scorer.protected_mask(t);
    std::vector<std::size_t> previous;
    for (int pct = 10; pct <= 100; pct += 10) {
      const auto kept =
          select_kept_indices(probs, mask, rat_ceil_mul(Rat(pct, 100), t.tokens.size()));
      CHECK(std::includes(kept.begin(), kept.end(), previous.begin(), previous.end()));
      previous = kept;
    }
  }
}

TEST_CASE("prune: protected classes outrank learned scores") {
  BuiltinTokenizer tok;
  // adversarial model that hates numbers
  PrunerModel model;
  model.feature_names = Featurizer::feature_names();
  model.weights.assign(Featurizer::feature_count(), 0.0);
  model.weights[0] = -10.0;  // is_numeric
  model.protected_classes = {TokenClass::numeric};
  const LinearScorer scorer(model, Featurizer());
  const std::string out = prune("alpha beta 7 gamma", scorer, Rat(1, 4), tok);
  CHECK(out == "7");
}

// ----------------------------------------------------------------------------
// Model and dataset persistence
// ----------------------------------------------------------------------------

TEST_CASE("pruner model save/load round-trip") {
  const auto scorer = trained_numeric_scorer({TokenClass::numeric, TokenClass::op});
  const auto path = (fs::temp_directory_path() / "ctrlcot_model.json").string();
  scorer.model().save(path);
  const auto loaded = PrunerModel::load(path);
  CHECK(loaded.weights == scorer.model().weights);
  CHECK(loaded.bias == scorer.model().bias);
  CHECK(loaded.feature_names == scorer.model().feature_names);
  CHECK(loaded.protected_classes == scorer.model().protected_classes);
  fs::remove(path);
}

TEST_CASE("labeled dataset round-trip") {
  Featurizer fz;
  std::mt19937 rng(12);
  const auto data = synthetic_dataset(fz, {TokenClass::numeric}, 5, rng);
  const auto path = (fs::temp_directory_path() / "ctrlcot_labels.jsonl").string();
  emit_labeled_dataset(path, data);
  const auto loaded = load_labeled_dataset(path);
  REQUIRE(loaded.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(loaded[i].text.tokens == data[i].text.tokens);
    CHECK(loaded[i].labels.labels == data[i].labels.labels);
  }
  fs::remove(path);
}

// ----------------------------------------------------------------------------
// Distillation dataset construction over replay
// ----------------------------------------------------------------------------

namespace {

Trace correct_trace(const std::string& id, const std::string& text) {
  BuiltinTokenizer tok;
  Trace t;
  t.problem_id = id;
  t.text = text;
  t.origin = Origin::hra(Tier::concise);
  t.token_count = tok.count(text);
  t.predicted_answer = "1";
  t.correct = true;
  return t;
}

}  // namespace

TEST_CASE("build_lpd_dataset: teacher identity yields all-true labels") {
  const auto trace = correct_trace("p1", "keep 1 + 1 = 2");
  const auto req = teacher_request(default_teacher_template(), trace, "m");
  const auto fixture = (fs::temp_directory_path() / "ctrlcot_lpd_fix.jsonl").string();
  nlohmann::json row{{"key", replay_key(req.tag, req.messages)},
                     {"response_text", trace.text},
                     {"completion_tokens", 0},
                     {"finish_reason", "stop"}};
  write_file(fixture, row.dump() + "\n");

  ReplayGateway gw(fixture);
  BuiltinTokenizer tok;
  const auto result =
      build_lpd_dataset({trace}, gw, default_teacher_template(), "m", 10, 7, tok, 2);
  REQUIRE(result.dataset.size() == 1);
  for (bool b : result.dataset[0].labels.labels) CHECK(b);
  CHECK(result.failed == 0);
  fs::remove(fixture);
}

TEST_CASE("build_lpd_dataset: deterministic sampling by seed") {
  std::vector<Trace> corpus;
  std::vector<nlohmann::json> rows;
  for (int i = 0; i < 30; ++i) {
    auto t = correct_trace("p" + std::to_string(i), "value " + std::to_string(i) + " stays 1");
    const auto req = teacher_request(default_teacher_template(), t, "m");
    rows.push_back({{"key", replay_key(req.tag, req.messages)},
                    {"response_text", "stays 1"},
                    {"completion_tokens", 0},
                    {"finish_reason", "stop"}});
    corpus.push_back(std::move(t));
  }
  const auto fixture = (fs::temp_directory_path() / "ctrlcot_lpd_fix2.jsonl").string();
  std::string content;
  for (const auto& r : rows) content += r.dump() + "\n";
  write_file(fixture, content);

  ReplayGateway gw(fixture);
  BuiltinTokenizer tok;
  const auto a = build_lpd_dataset(corpus, gw, default_teacher_template(), "m", 10, 5, tok, 4);
  const auto b = build_lpd_dataset(corpus, gw, default_teacher_template(), "m", 10, 5, tok, 4);
  REQUIRE(a.dataset.size() == 10);
  REQUIRE(b.dataset.size() == 10);
  for (std::size_t i = 0; i < a.dataset.size(); ++i)
    CHECK(a.dataset[i].text.tokens == b.dataset[i].text.tokens);
  CHECK(a.requested == 10);
  fs::remove(fixture);
}

TEST_CASE("build_lpd_dataset: rejects traces not marked correct") {
  Trace t;
  t.problem_id = "p1";
  t.text = "text";
  const auto fixture = (fs::temp_directory_path() / "ctrlcot_lpd_fix3.jsonl").string();
  write_file(fixture, "");
  ReplayGateway gw(fixture);
  BuiltinTokenizer tok;
  CHECK_THROWS_AS(build_lpd_dataset({t}, gw, default_teacher_template(), "m", 1, 0, tok, 1),
                  StageError);
  fs::remove(fixture);
}

// ----------------------------------------------------------------------------
// Remote scorer
// ----------------------------------------------------------------------------

TEST_CASE("remote scorer: probabilities from an external service") {
  httplib::Server server;
  server.Post("/score", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    const auto tokens = body.at("tokens").get<std::vector<std::string>>();
    std::vector<double> probs;
    for (const auto& t : tokens) probs.push_back(t == "keep" ? 0.9 : 0.1);
    res.set_content(nlohmann::json{{"probabilities", probs}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  BuiltinTokenizer tok;
  RemoteScorer scorer("http://127.0.0.1:" + std::to_string(port));
  const std::string out = prune("drop keep drop keep", scorer, Rat(1, 2), tok);
  CHECK(out == "keep keep");

  server.stop();
  thread.join();
}
