#pragma once

// Core data model and JSONL persistence: problems, reasoning traces with
// provenance, deterministic A/B splitting, and the file schemas every other
// stage reads and writes.
//
// All files are JSONL, one UTF-8 JSON object per line, keys sorted, "\n" line
// ends. Re-emitting a loaded file reproduces it byte for byte.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrlcot/common.hpp"
#include "ctrlcot/rational.hpp"
#include "ctrlcot/tokenizer.hpp"

namespace ctrlcot {

using nlohmann::json;

// ----------------------------------------------------------------------------
// Domain types
// ----------------------------------------------------------------------------

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }
inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ParseError("unknown split: " + s);
}

/// One benchmark instance. `dataset` is "gsm8k", "math", or any other label.
struct Problem {
  std::string id;
  std::string question;
  std::string gold_answer;
  std::string dataset = "other";
  Split split = Split::train;
};

/// Verbosity tiers for semantically rewritten CoTs, most to least verbose.
enum class Tier { detailed, standard, concise, ultra_concise };

inline const std::vector<Tier>& all_tiers() {
  static const std::vector<Tier> tiers = {Tier::detailed, Tier::standard, Tier::concise,
                                          Tier::ultra_concise};
  return tiers;
}

inline std::string to_string(Tier t) {
  switch (t) {
    case Tier::detailed: return "detailed";
    case Tier::standard: return "standard";
    case Tier::concise: return "concise";
    case Tier::ultra_concise: return "ultra_concise";
  }
  throw Error("invalid tier");
}

inline Tier tier_from_string(const std::string& s) {
  for (Tier t : all_tiers())
    if (to_string(t) == s) return t;
  throw ParseError("unknown tier: " + s);
}

/// Provenance of a trace: which pipeline axis produced it.
struct Origin {
  enum class Kind { hra, dag, inference };
  Kind kind = Kind::hra;
  Tier tier = Tier::detailed;   // kind == hra
  Rat ratio;                    // kind == dag
  std::uint64_t budget = 0;     // kind == inference (0 = no budget directive)

  static Origin hra(Tier t) {
    Origin o;
    o.kind = Kind::hra;
    o.tier = t;
    return o;
  }
  static Origin dag(const Rat& ratio) {
    Origin o;
    o.kind = Kind::dag;
    o.ratio = ratio;
    return o;
  }
  static Origin inference(std::uint64_t budget) {
    Origin o;
    o.kind = Kind::inference;
    o.budget = budget;
    return o;
  }

  /// Stable text form, used in logs, tags, and dedup keys.
  std::string label() const {
    switch (kind) {
      case Kind::hra: return "hra:" + to_string(tier);
      case Kind::dag: return "dag:" + rat_to_compact(ratio);
      case Kind::inference: return "inference:" + std::to_string(budget);
    }
    throw Error("invalid origin");
  }

  bool operator==(const Origin& other) const {
    if (kind != other.kind) return false;
    switch (kind) {
      case Kind::hra: return tier == other.tier;
      case Kind::dag: return ratio == other.ratio;
      case Kind::inference: return budget == other.budget;
    }
    return false;
  }
};

/// One CoT realization with provenance, length, and grading state.
/// `correct` is present exactly when `predicted_answer` is present.
struct Trace {
  std::string problem_id;
  std::string text;
  Origin origin;
  std::size_t token_count = 0;
  std::optional<std::string> predicted_answer;
  std::optional<bool> correct;
};

enum class Bucket { A, B };

inline std::string to_string(Bucket b) { return b == Bucket::A ? "A" : "B"; }
inline Bucket bucket_from_string(const std::string& s) {
  if (s == "A") return Bucket::A;
  if (s == "B") return Bucket::B;
  throw ParseError("unknown bucket: " + s);
}

struct SplitAssignment {
  std::string problem_id;
  Bucket bucket = Bucket::A;
};

// ----------------------------------------------------------------------------
// JSON (de)serialization
// ----------------------------------------------------------------------------

inline json problem_to_json(const Problem& p) {
  return json{{"id", p.id},
              {"question", p.question},
              {"gold_answer", p.gold_answer},
              {"dataset", p.dataset},
              {"split", to_string(p.split)}};
}

inline json origin_to_json(const Origin& o) {
  switch (o.kind) {
    case Origin::Kind::hra: return json{{"kind", "hra"}, {"tier", to_string(o.tier)}};
    case Origin::Kind::dag:
      // Ratio carried as a decimal string so it reloads exactly.
      return json{{"kind", "dag"}, {"ratio", rat_to_compact(o.ratio)}};
    case Origin::Kind::inference: return json{{"kind", "inference"}, {"budget", o.budget}};
  }
  throw Error("invalid origin");
}

inline Origin origin_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "hra") return Origin::hra(tier_from_string(j.at("tier").get<std::string>()));
  if (kind == "dag") return Origin::dag(rat_from_decimal(j.at("ratio").get<std::string>()));
  if (kind == "inference") return Origin::inference(j.at("budget").get<std::uint64_t>());
  throw ParseError("unknown origin kind: " + kind);
}

inline json trace_to_json(const Trace& t) {
  json j{{"problem_id", t.problem_id},
         {"text", t.text},
         {"origin", origin_to_json(t.origin)},
         {"token_count", t.token_count}};
  if (t.predicted_answer) j["predicted_answer"] = *t.predicted_answer;
  if (t.correct) j["correct"] = *t.correct;
  return j;
}

inline Trace trace_from_json(const json& j) {
  Trace t;
  t.problem_id = j.at("problem_id").get<std::string>();
  t.text = j.at("text").get<std::string>();
  t.origin = origin_from_json(j.at("origin"));
  t.token_count = j.at("token_count").get<std::size_t>();
  if (j.contains("predicted_answer")) t.predicted_answer = j["predicted_answer"].get<std::string>();
  if (j.contains("correct")) t.correct = j["correct"].get<bool>();
  if (t.predicted_answer.has_value() != t.correct.has_value())
    throw ParseError("trace for " + t.problem_id +
                     ": correct must be present exactly when predicted_answer is");
  return t;
}

// ----------------------------------------------------------------------------
// JSONL helpers
// ----------------------------------------------------------------------------

/// Parse a JSONL file into per-line JSON objects; errors carry line numbers.
inline std::vector<json> read_jsonl(const std::string& path) {
  const std::string content = read_file(path);
  std::vector<json> rows;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path, line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(path, line_no, "expected a JSON object");
    rows.push_back(std::move(j));
  }
  return rows;
}

inline void write_jsonl(const std::string& path, const std::vector<json>& rows) {
  std::string out;
  for (const json& j : rows) {
    out += j.dump();
    out += '\n';
  }
  write_file(path, out);
}

// ----------------------------------------------------------------------------
// Problems
// ----------------------------------------------------------------------------

/// Extract the final answer from a raw GSM8K-style solution: the text after
/// the last "#### " marker, trimmed. Without a marker the whole trimmed text
/// is returned.
inline std::string extract_gsm8k_gold(const std::string& answer_text) {
  static const std::string marker = "#### ";
  const auto pos = answer_text.rfind(marker);
  if (pos == std::string::npos) return trim(answer_text);
  return trim(answer_text.substr(pos + marker.size()));
}

/// Load problems from JSONL, preserving file order. Rows need "id" and
/// "question"; the gold answer comes from "gold_answer" or, failing that,
/// from a raw "answer" field via the "#### " suffix rule. "dataset" and
/// "split" default to the arguments when absent.
inline std::vector<Problem> load_problems(const std::string& path,
                                          const std::string& default_dataset,
                                          Split default_split = Split::train) {
  std::vector<Problem> out;
  std::unordered_set<std::string> seen;
  const auto rows = read_jsonl(path);
  std::size_t line_no = 0;
  for (const json& j : rows) {
    ++line_no;
    Problem p;
    for (const char* field : {"id", "question"}) {
      if (!j.contains(field))
        throw ParseError(path, line_no, std::string("missing field: ") + field);
    }
    p.id = j["id"].get<std::string>();
    p.question = j["question"].get<std::string>();
    if (j.contains("gold_answer")) {
      p.gold_answer = j["gold_answer"].get<std::string>();
    } else if (j.contains("answer")) {
      p.gold_answer = extract_gsm8k_gold(j["answer"].get<std::string>());
    } else {
      throw ParseError(path, line_no, "missing field: gold_answer (or raw answer)");
    }
    if (p.gold_answer.empty()) throw ParseError(path, line_no, "empty gold_answer for " + p.id);
    p.dataset = j.value("dataset", default_dataset);
    p.split = j.contains("split") ? split_from_string(j["split"].get<std::string>())
                                  : default_split;
    if (!seen.insert(p.id).second)
      throw ParseError(path, line_no, "duplicate problem id: " + p.id);
    out.push_back(std::move(p));
  }
  return out;
}

inline void emit_problems(const std::string& path, const std::vector<Problem>& problems) {
  std::vector<json> rows;
  rows.reserve(problems.size());
  for (const Problem& p : problems) rows.push_back(problem_to_json(p));
  write_jsonl(path, rows);
}

inline std::unordered_map<std::string, Problem> index_problems(
    const std::vector<Problem>& problems) {
  std::unordered_map<std::string, Problem> by_id;
  for (const Problem& p : problems) by_id.emplace(p.id, p);
  return by_id;
}

// ----------------------------------------------------------------------------
// Traces
// ----------------------------------------------------------------------------

/// Load traces; when a tokenizer is given, each row's token_count is checked
/// against a fresh count of its text.
inline std::vector<Trace> load_traces(const std::string& path,
                                      const Tokenizer* tokenizer = nullptr) {
  std::vector<Trace> out;
  const auto rows = read_jsonl(path);
  std::size_t line_no = 0;
  for (const json& j : rows) {
    ++line_no;
    Trace t;
    try {
      t = trace_from_json(j);
    } catch (const json::exception& e) {
      throw ParseError(path, line_no, std::string("bad trace row: ") + e.what());
    }
    if (tokenizer) {
      const std::size_t n = tokenizer->count(t.text);
      if (n != t.token_count)
        throw ParseError(path, line_no,
                         "token_count mismatch for " + t.problem_id + ": stored " +
                             std::to_string(t.token_count) + ", tokenizer says " +
                             std::to_string(n));
    }
    out.push_back(std::move(t));
  }
  return out;
}

inline void emit_traces(const std::string& path, const std::vector<Trace>& traces) {
  std::vector<json> rows;
  rows.reserve(traces.size());
  for (const Trace& t : traces) rows.push_back(trace_to_json(t));
  write_jsonl(path, rows);
}

// ----------------------------------------------------------------------------
// A/B split
// ----------------------------------------------------------------------------

/// Assign problems to disjoint buckets A and B. Deterministic in
/// (seed, fraction_a) and independent of input order: problems are ranked by
/// a keyed hash of their id and the top round(fraction_a * N) ids (halves up)
/// go to A. Output follows input order.
inline std::vector<SplitAssignment> split_ab(const std::vector<Problem>& problems,
                                             std::int64_t seed, const Rat& fraction_a) {
  if (problems.empty()) throw StageError("split_ab: empty problem list");
  if (!(fraction_a > 0 && fraction_a < 1))
    throw StageError("split_ab: fraction_a must be in (0,1), got " + rat_to_string(fraction_a));

  struct Ranked {
    std::uint64_t rank;
    const Problem* p;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(problems.size());
  const std::string seed_prefix = std::to_string(seed) + ":";
  for (const Problem& p : problems)
    ranked.push_back({fnv1a64(seed_prefix + p.id), &p});
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.rank != b.rank) return a.rank < b.rank;
    return a.p->id < b.p->id;
  });

  const std::size_t n_a = rat_round_mul(fraction_a, problems.size());
  std::unordered_set<std::string> in_a;
  for (std::size_t i = 0; i < n_a && i < ranked.size(); ++i) in_a.insert(ranked[i].p->id);

  std::vector<SplitAssignment> out;
  out.reserve(problems.size());
  for (const Problem& p : problems)
    out.push_back({p.id, in_a.count(p.id) ? Bucket::A : Bucket::B});
  return out;
}

inline std::vector<SplitAssignment> load_splits(const std::string& path) {
  std::vector<SplitAssignment> out;
  const auto rows = read_jsonl(path);
  std::size_t line_no = 0;
  for (const json& j : rows) {
    ++line_no;
    if (!j.contains("problem_id") || !j.contains("bucket"))
      throw ParseError(path, line_no, "split row needs problem_id and bucket");
    out.push_back({j["problem_id"].get<std::string>(),
                   bucket_from_string(j["bucket"].get<std::string>())});
  }
  return out;
}

inline void emit_splits(const std::string& path, const std::vector<SplitAssignment>& splits) {
  std::vector<json> rows;
  rows.reserve(splits.size());
  for (const SplitAssignment& s : splits)
    rows.push_back(json{{"problem_id", s.problem_id}, {"bucket", to_string(s.bucket)}});
  write_jsonl(path, rows);
}

inline std::unordered_map<std::string, Bucket> index_splits(
    const std::vector<SplitAssignment>& splits) {
  std::unordered_map<std::string, Bucket> by_id;
  for (const SplitAssignment& s : splits) by_id.emplace(s.problem_id, s.bucket);
  return by_id;
}

}  // namespace ctrlcot
