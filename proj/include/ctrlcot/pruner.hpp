#pragma once

// Logic-preserving distillation and ratio-controlled token pruning.
//
// The pipeline: teacher-compressed traces are aligned against their originals
// (longest common subsequence, earliest-match tie-breaking) to produce
// per-token keep/drop labels; a featurized linear classifier is trained on
// those labels with full-batch gradient descent on mean cross-entropy; at
// inference the classifier ranks tokens and `prune` keeps exactly
// ceil(gamma * n) of them, re-serialized in original order.
//
// The scorer is an interface so the linear model can be swapped for a remote
// neural scorer without touching the pruning contract.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrlcot/common.hpp"
#include "ctrlcot/corpus.hpp"
#include "ctrlcot/gateway.hpp"
#include "ctrlcot/rational.hpp"
#include "ctrlcot/tokenizer.hpp"

namespace ctrlcot {

// ----------------------------------------------------------------------------
// Keep labels via LCS alignment
// ----------------------------------------------------------------------------

struct KeepLabels {
  std::vector<bool> labels;  // one per original token

  std::size_t kept() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  }
};

/// Mark a longest common subsequence of original.tokens and compressed.tokens
/// on the original side (exact string equality). Among equal-length solutions
/// the earliest original indices win; teacher insertions carry no label.
inline KeepLabels derive_keep_labels(const TokenizedText& original,
                                     const TokenizedText& compressed) {
  const auto& a = original.tokens;
  const auto& b = compressed.tokens;
  const std::size_t n = a.size();
  const std::size_t m = b.size();

  // L[i][j] = LCS length of a[i:] and b[j:]
  std::vector<std::uint32_t> table((n + 1) * (m + 1), 0);
  const auto L = [&](std::size_t i, std::size_t j) -> std::uint32_t& {
    return table[i * (m + 1) + j];
  };
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      L(i, j) = a[i] == b[j] ? L(i + 1, j + 1) + 1
                             : std::max(L(i + 1, j), L(i, j + 1));
    }
  }

  KeepLabels out;
  out.labels.assign(n, false);
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < n && j < m) {
    if (a[i] == b[j] && L(i + 1, j + 1) + 1 == L(i, j)) {
      out.labels[i] = true;
      ++i;
      ++j;
    } else if (L(i, j + 1) == L(i, j)) {
      ++j;  // skip a compressed token first: keeps earlier original indices in play
    } else {
      ++i;
    }
  }
  return out;
}

// ----------------------------------------------------------------------------
// Featurization
// ----------------------------------------------------------------------------

enum class TokenClass { numeric, op, connective, punctuation, word };

inline std::string to_string(TokenClass c) {
  switch (c) {
    case TokenClass::numeric: return "numeric";
    case TokenClass::op: return "operator";
    case TokenClass::connective: return "connective";
    case TokenClass::punctuation: return "punctuation";
    case TokenClass::word: return "word";
  }
  throw Error("invalid token class");
}

inline TokenClass token_class_from_string(const std::string& s) {
  if (s == "numeric") return TokenClass::numeric;
  if (s == "operator") return TokenClass::op;
  if (s == "connective") return TokenClass::connective;
  if (s == "punctuation") return TokenClass::punctuation;
  if (s == "word") return TokenClass::word;
  throw ParseError("unknown token class: " + s);
}

inline const std::unordered_set<std::string>& default_operator_lexicon() {
  static const std::unordered_set<std::string> ops = {"+", "-", "*", "/", "=",
                                                      "<", ">", "^", "%"};
  return ops;
}

inline const std::unordered_set<std::string>& default_connective_lexicon() {
  static const std::unordered_set<std::string> words = {
      "so",        "then",      "therefore", "thus",    "hence",  "because",
      "since",     "first",     "next",      "finally", "now",    "also",
      "however",   "moreover",  "besides",   "overall", "namely", "consequently"};
  return words;
}

/// Load a lexicon file: one entry per line, '#' comments, blanks ignored.
inline std::unordered_set<std::string> load_lexicon(const std::string& path) {
  std::unordered_set<std::string> out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    const std::string entry = trim(line);
    if (entry.empty() || entry[0] == '#') continue;
    out.insert(to_lower(entry));
  }
  return out;
}

class Featurizer {
 public:
  Featurizer()
      : operators_(default_operator_lexicon()), connectives_(default_connective_lexicon()) {}
  Featurizer(std::unordered_set<std::string> operators,
             std::unordered_set<std::string> connectives)
      : operators_(std::move(operators)), connectives_(std::move(connectives)) {}

  TokenClass classify(const std::string& token) const {
    if (token.empty()) return TokenClass::word;
    bool any_digit = false;
    bool all_numeric_chars = true;
    for (char c : token) {
      if (is_ascii_digit(c)) {
        any_digit = true;
      } else if (c != '.' && c != ',') {
        all_numeric_chars = false;
        break;
      }
    }
    if (any_digit && all_numeric_chars) return TokenClass::numeric;
    if (operators_.count(token)) return TokenClass::op;
    if (connectives_.count(to_lower(token))) return TokenClass::connective;
    if (token.size() == 1 && !is_ascii_alnum(token[0])) return TokenClass::punctuation;
    return TokenClass::word;
  }

  static const std::vector<std::string>& feature_names() {
    static const std::vector<std::string> names = {
        "is_numeric",      "is_operator",      "is_connective",   "is_punctuation",
        "len_bucket_1",    "len_bucket_2_3",   "len_bucket_4_6",  "len_bucket_7_plus",
        "relative_position",
        "prev_is_numeric", "prev_is_operator", "prev_is_connective", "prev_is_punctuation",
        "next_is_numeric", "next_is_operator", "next_is_connective", "next_is_punctuation",
        "freq_bucket_1",   "freq_bucket_2_3",  "freq_bucket_4_7", "freq_bucket_8_plus"};
    return names;
  }

  static std::size_t feature_count() { return feature_names().size(); }

  /// Feature rows for every token of `t`; the within-text frequency table is
  /// built once.
  std::vector<std::vector<double>> featurize_all(const TokenizedText& t) const {
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& tok : t.tokens) ++freq[tok];
    std::vector<std::vector<double>> rows;
    rows.reserve(t.tokens.size());
    for (std::size_t i = 0; i < t.tokens.size(); ++i) rows.push_back(featurize_one(t, i, freq));
    return rows;
  }

  /// Feature vector for token `i`; throws on an out-of-range index.
  std::vector<double> featurize(const TokenizedText& t, std::size_t i) const {
    if (i >= t.tokens.size())
      throw StageError("featurize: token index " + std::to_string(i) + " out of range (" +
                       std::to_string(t.tokens.size()) + " tokens)");
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& tok : t.tokens) ++freq[tok];
    return featurize_one(t, i, freq);
  }

 private:
  std::vector<double> featurize_one(const TokenizedText& t, std::size_t i,
                                    const std::unordered_map<std::string, std::size_t>& freq)
      const {
    const std::string& tok = t.tokens[i];
    const std::size_t n = t.tokens.size();
    std::vector<double> f(feature_count(), 0.0);

    const TokenClass cls = classify(tok);
    f[0] = cls == TokenClass::numeric;
    f[1] = cls == TokenClass::op;
    f[2] = cls == TokenClass::connective;
    f[3] = cls == TokenClass::punctuation;

    const std::size_t len = tok.size();
    if (len <= 1) f[4] = 1;
    else if (len <= 3) f[5] = 1;
    else if (len <= 6) f[6] = 1;
    else f[7] = 1;

    f[8] = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;

    const auto neighbor = [&](std::size_t base, std::size_t index) {
      const TokenClass nc = classify(t.tokens[index]);
      f[base + 0] = nc == TokenClass::numeric;
      f[base + 1] = nc == TokenClass::op;
      f[base + 2] = nc == TokenClass::connective;
      f[base + 3] = nc == TokenClass::punctuation;
    };
    if (i > 0) neighbor(9, i - 1);
    if (i + 1 < n) neighbor(13, i + 1);

    const std::size_t count = freq.at(tok);
    if (count <= 1) f[17] = 1;
    else if (count <= 3) f[18] = 1;
    else if (count <= 7) f[19] = 1;
    else f[20] = 1;

    return f;
  }

  std::unordered_set<std::string> operators_;
  std::unordered_set<std::string> connectives_;
};

// ----------------------------------------------------------------------------
// Model
// ----------------------------------------------------------------------------

struct PrunerModel {
  std::vector<std::string> feature_names;
  std::vector<double> weights;
  double bias = 0.0;
  std::vector<TokenClass> protected_classes;  // optional hard-keep classes

  /// sigmoid(w . f + b), clamped into the open interval (0,1).
  double keep_probability(const std::vector<double>& features) const {
    double z = bias;
    for (std::size_t i = 0; i < weights.size(); ++i) z += weights[i] * features[i];
    const double p = 1.0 / (1.0 + std::exp(-z));
    return std::min(1.0 - 1e-12, std::max(1e-12, p));
  }

  nlohmann::json to_json() const {
    nlohmann::json prot = nlohmann::json::array();
    for (TokenClass c : protected_classes) prot.push_back(to_string(c));
    return nlohmann::json{{"feature_names", feature_names},
                          {"weights", weights},
                          {"bias", bias},
                          {"protected_classes", prot}};
  }

  static PrunerModel from_json(const nlohmann::json& j) {
    PrunerModel m;
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    if (j.contains("protected_classes")) {
      for (const auto& c : j["protected_classes"])
        m.protected_classes.push_back(token_class_from_string(c.get<std::string>()));
    }
    if (m.weights.size() != m.feature_names.size())
      throw ParseError("pruner model: " + std::to_string(m.weights.size()) + " weights for " +
                       std::to_string(m.feature_names.size()) + " feature names");
    return m;
  }

  void save(const std::string& path) const { write_file(path, to_json().dump(2) + "\n"); }

  static PrunerModel load(const std::string& path) {
    try {
      return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("bad pruner model file " + path + ": " + e.what());
    }
  }
};

// ----------------------------------------------------------------------------
// Training: full-batch gradient descent on mean cross-entropy
// ----------------------------------------------------------------------------

struct LabeledTokens {
  TokenizedText text;
  KeepLabels labels;
};

/// Mean cross-entropy of the logistic model over a feature matrix.
inline double pruner_loss(const std::vector<std::vector<double>>& features,
                          const std::vector<bool>& labels, const std::vector<double>& weights,
                          double bias) {
  double total = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    double z = bias;
    for (std::size_t k = 0; k < weights.size(); ++k) z += weights[k] * features[i][k];
    // numerically stable: CE = log(1+e^z) - y*z, computed via softplus
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    total += softplus - (labels[i] ? z : 0.0);
  }
  return total / static_cast<double>(features.size());
}

/// Analytic gradient of pruner_loss with respect to (weights, bias):
/// d/dw = mean((p - y) * f), d/db = mean(p - y).
inline void pruner_gradient(const std::vector<std::vector<double>>& features,
                            const std::vector<bool>& labels,
                            const std::vector<double>& weights, double bias,
                            std::vector<double>& grad_w, double& grad_b) {
  grad_w.assign(weights.size(), 0.0);
  grad_b = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    double z = bias;
    for (std::size_t k = 0; k < weights.size(); ++k) z += weights[k] * features[i][k];
    const double p = 1.0 / (1.0 + std::exp(-z));
    const double residual = p - (labels[i] ? 1.0 : 0.0);
    for (std::size_t k = 0; k < weights.size(); ++k) grad_w[k] += residual * features[i][k];
    grad_b += residual;
  }
  const double inv_n = 1.0 / static_cast<double>(features.size());
  for (double& g : grad_w) g *= inv_n;
  grad_b *= inv_n;
}

struct TrainReport {
  PrunerModel model;
  std::vector<double> loss_curve;  // mean cross-entropy after each epoch
  double training_accuracy = 0.0;  // fraction of tokens classified correctly at 0.5
};

/// Deterministic full-batch training. Each epoch takes one gradient step over
/// all labeled tokens; initial weights are small uniform noise from `seed`.
inline TrainReport train_pruner(const std::vector<LabeledTokens>& labeled,
                                const Featurizer& featurizer, unsigned epochs,
                                double learning_rate, std::int64_t seed) {
  if (epochs == 0) throw StageError("train_pruner: epochs must be positive");
  if (learning_rate <= 0) throw StageError("train_pruner: learning rate must be positive");

  std::vector<std::vector<double>> features;
  std::vector<bool> labels;
  for (const auto& item : labeled) {
    if (item.labels.labels.size() != item.text.tokens.size())
      throw StageError("train_pruner: labels/tokens length mismatch");
    auto rows = featurizer.featurize_all(item.text);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      features.push_back(std::move(rows[i]));
      labels.push_back(item.labels.labels[i]);
    }
  }
  if (features.empty()) throw StageError("train_pruner: no labeled tokens");
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  if (positives == 0) throw StageError("train_pruner: degenerate input, missing class: keep");
  if (positives == labels.size())
    throw StageError("train_pruner: degenerate input, missing class: drop");

  TrainReport report;
  report.model.feature_names = Featurizer::feature_names();
  report.model.weights.assign(Featurizer::feature_count(), 0.0);
  std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
  for (double& w : report.model.weights)
    w = (static_cast<double>(rng() % 2000) / 1000.0 - 1.0) * 0.01;
  report.model.bias = 0.0;

  std::vector<double> grad_w;
  double grad_b = 0.0;
  for (unsigned epoch = 0; epoch < epochs; ++epoch) {
    pruner_gradient(features, labels, report.model.weights, report.model.bias, grad_w, grad_b);
    for (std::size_t k = 0; k < grad_w.size(); ++k)
      report.model.weights[k] -= learning_rate * grad_w[k];
    report.model.bias -= learning_rate * grad_b;
    report.loss_curve.push_back(
        pruner_loss(features, labels, report.model.weights, report.model.bias));
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const bool keep = report.model.keep_probability(features[i]) >= 0.5;
    correct += keep == labels[i];
  }
  report.training_accuracy = static_cast<double>(correct) / static_cast<double>(features.size());
  return report;
}

// ----------------------------------------------------------------------------
// Scoring and pruning
// ----------------------------------------------------------------------------

/// Per-token keep scores plus the hard-keep mask. Implementations must be
/// deterministic for a fixed input.
class TokenScorer {
 public:
  virtual ~TokenScorer() = default;
  virtual std::vector<double> keep_probabilities(const TokenizedText& t) const = 0;
  virtual std::vector<bool> protected_mask(const TokenizedText& t) const = 0;
};

class LinearScorer final : public TokenScorer {
 public:
  LinearScorer(PrunerModel model, Featurizer featurizer)
      : model_(std::move(model)), featurizer_(std::move(featurizer)) {
    if (model_.feature_names != Featurizer::feature_names())
      throw ConfigError("pruner model feature names do not match this featurizer");
  }

  std::vector<double> keep_probabilities(const TokenizedText& t) const override {
    const auto rows = featurizer_.featurize_all(t);
    std::vector<double> probs;
    probs.reserve(rows.size());
    for (const auto& row : rows) probs.push_back(model_.keep_probability(row));
    return probs;
  }

  std::vector<bool> protected_mask(const TokenizedText& t) const override {
    std::vector<bool> mask(t.tokens.size(), false);
    if (model_.protected_classes.empty()) return mask;
    for (std::size_t i = 0; i < t.tokens.size(); ++i) {
      const TokenClass cls = featurizer_.classify(t.tokens[i]);
      for (TokenClass p : model_.protected_classes) {
        if (cls == p) {
          mask[i] = true;
          break;
        }
      }
    }
    return mask;
  }

  const PrunerModel& model() const { return model_; }

 private:
  PrunerModel model_;
  Featurizer featurizer_;
};

/// Indices that survive pruning to k tokens, in original order. Protected
/// tokens rank above unprotected ones, then higher keep probability, then
/// earlier position; the resulting total order is independent of k, which
/// makes kept sets nested across ratios.
inline std::vector<std::size_t> select_kept_indices(const std::vector<double>& probs,
                                                    const std::vector<bool>& protected_mask,
                                                    std::size_t k) {
  std::vector<std::size_t> order(probs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (protected_mask[a] != protected_mask[b]) return protected_mask[a];
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });
  order.resize(std::min(k, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

/// Prune `text` to exactly ceil(gamma * n) tokens under `tokenizer`,
/// re-serialized in original order; gamma = 1 keeps the full token content.
inline std::string prune(const std::string& text, const TokenScorer& scorer, const Rat& gamma,
                         const Tokenizer& tokenizer) {
  if (!(gamma > 0 && gamma <= 1))
    throw StageError("prune: gamma must be in (0,1], got " + rat_to_string(gamma));
  const TokenizedText t = tokenizer.tokenize(text);
  if (t.tokens.empty()) throw StageError("prune: empty text");

  const std::size_t k = rat_ceil_mul(gamma, t.tokens.size());
  const auto kept =
      select_kept_indices(scorer.keep_probabilities(t), scorer.protected_mask(t), k);
  std::vector<std::string> kept_tokens;
  kept_tokens.reserve(kept.size());
  for (std::size_t idx : kept) kept_tokens.push_back(t.tokens[idx]);
  return tokenizer.detokenize(kept_tokens);
}

// ----------------------------------------------------------------------------
// Distillation dataset construction
// ----------------------------------------------------------------------------

constexpr const char* kTeacherCotPlaceholder = "<COT>";

inline std::string default_teacher_template() {
  return "Now I will present you with a reasoning text for a math problem. You need to "
         "output a compressed version preserving all numbers, operators, and logical "
         "steps. Don't output any other text.\n"
         "The reasoning text: <COT>\n";
}

/// Teacher-compression request for one trace. The tag makes the call
/// replayable: lpd:<problem_id>:<origin label>.
inline ChatRequest teacher_request(const std::string& teacher_template, const Trace& trace,
                                   const std::string& model) {
  if (!contains(teacher_template, kTeacherCotPlaceholder))
    throw ConfigError("teacher template is missing the <COT> placeholder");
  const std::string prompt = replace_all(teacher_template, kTeacherCotPlaceholder, trace.text);
  return user_request(model, prompt, "lpd:" + trace.problem_id + ":" + trace.origin.label());
}

struct LpdBuildResult {
  std::vector<LabeledTokens> dataset;
  std::size_t requested = 0;
  std::size_t failed = 0;  // gateway failures, dropped with a log line
};

/// Deterministically sample up to `sample_size` correct traces (Fisher-Yates
/// on mt19937(seed)), fetch a teacher compression for each, and label the
/// pairs by alignment.
inline LpdBuildResult build_lpd_dataset(const std::vector<Trace>& corpus, Gateway& gateway,
                                        const std::string& teacher_template,
                                        const std::string& model, std::size_t sample_size,
                                        std::int64_t seed, const Tokenizer& tokenizer,
                                        std::size_t max_in_flight,
                                        std::ostream* log = nullptr) {
  if (sample_size == 0) throw StageError("build_lpd_dataset: sample_size must be positive");
  for (const Trace& t : corpus) {
    if (!t.correct || !*t.correct)
      throw StageError("build_lpd_dataset: trace for " + t.problem_id +
                       " is not marked correct");
  }

  std::vector<std::size_t> indices(corpus.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
  for (std::size_t i = indices.size(); i > 1; --i)
    std::swap(indices[i - 1], indices[rng() % i]);
  indices.resize(std::min(sample_size, indices.size()));

  std::vector<ChatRequest> requests;
  requests.reserve(indices.size());
  for (std::size_t idx : indices)
    requests.push_back(teacher_request(teacher_template, corpus[idx], model));

  const auto responses = gateway.complete_batch(requests, max_in_flight);

  LpdBuildResult result;
  result.requested = indices.size();
  for (std::size_t r = 0; r < responses.size(); ++r) {
    if (!responses[r].ok()) {
      ++result.failed;
      if (log)
        *log << "lpd-build: dropped " << requests[r].tag << ": "
             << responses[r].finish_reason.detail << "\n";
      continue;
    }
    LabeledTokens item;
    item.text = tokenizer.tokenize(corpus[indices[r]].text);
    item.labels = derive_keep_labels(item.text, tokenizer.tokenize(responses[r].text));
    result.dataset.push_back(std::move(item));
  }
  return result;
}

// ----------------------------------------------------------------------------
// Labeled dataset persistence
// ----------------------------------------------------------------------------

inline void emit_labeled_dataset(const std::string& path,
                                 const std::vector<LabeledTokens>& dataset) {
  std::vector<nlohmann::json> rows;
  rows.reserve(dataset.size());
  for (const auto& item : dataset) {
    nlohmann::json labels = nlohmann::json::array();
    for (bool b : item.labels.labels) labels.push_back(b);
    rows.push_back(nlohmann::json{{"tokens", item.text.tokens}, {"labels", labels}});
  }
  write_jsonl(path, rows);
}

inline std::vector<LabeledTokens> load_labeled_dataset(const std::string& path) {
  std::vector<LabeledTokens> out;
  const auto rows = read_jsonl(path);
  std::size_t line_no = 0;
  for (const auto& j : rows) {
    ++line_no;
    LabeledTokens item;
    item.text.tokens = j.at("tokens").get<std::vector<std::string>>();
    for (const auto& b : j.at("labels")) item.labels.labels.push_back(b.get<bool>());
    if (item.labels.labels.size() != item.text.tokens.size())
      throw ParseError(path, line_no, "labels/tokens length mismatch");
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace ctrlcot
