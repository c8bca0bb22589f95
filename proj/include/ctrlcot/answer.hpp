#pragma once

// Final-answer extraction, normalization, and equivalence — the single
// grading oracle used by every answer-consistency filter in the pipeline.
//
// Numeric answers compare by exact rational value (no float tolerance by
// default), so "1/2", "0.5", and "50%" are all equal. Anything that fails to
// parse as a number is kept as lowercased, whitespace-collapsed symbolic text
// and compares by string equality; grading degrades to "not equal", it never
// throws on weird model output.

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctrlcot/common.hpp"
#include "ctrlcot/corpus.hpp"
#include "ctrlcot/rational.hpp"

namespace ctrlcot {

// ----------------------------------------------------------------------------
// NormalizedAnswer
// ----------------------------------------------------------------------------

struct NormalizedAnswer {
  enum class Kind { integer, rational, decimal, symbolic };

  Kind kind = Kind::symbolic;
  std::string raw;        // input as given
  Rat value;              // exact value for numeric kinds
  int printed_precision = 0;  // decimal kind: digits after the point as printed
  std::string text;       // symbolic kind: canonical text
  std::string canonical;  // canonical string form (pure function of kind+value)

  bool is_numeric() const { return kind != Kind::symbolic; }
};

namespace detail {

// Strip "\text{...}" wrappers (all occurrences, keeping the body).
inline std::string strip_text_macro(const std::string& s) {
  static const std::string macro = "\\text{";
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s.compare(i, macro.size(), macro) == 0) {
      std::size_t j = i + macro.size();
      int depth = 1;
      std::string body;
      while (j < s.size() && depth > 0) {
        if (s[j] == '{') ++depth;
        if (s[j] == '}') --depth;
        if (depth > 0) body.push_back(s[j]);
        ++j;
      }
      if (depth == 0) {
        out += body;
        i = j;
        continue;
      }
    }
    out.push_back(s[i]);
    ++i;
  }
  return out;
}

// Remove thousands-separator commas: a comma preceded by a digit and followed
// by exactly three digits that are not followed by another digit.
inline std::string strip_thousands_commas(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == ',' && i > 0 && is_ascii_digit(s[i - 1]) && i + 3 < s.size() &&
        is_ascii_digit(s[i + 1]) && is_ascii_digit(s[i + 2]) && is_ascii_digit(s[i + 3]) &&
        !(i + 4 < s.size() && is_ascii_digit(s[i + 4])))
      continue;  // drop the separator
    out.push_back(s[i]);
  }
  return out;
}

// Digit-string to BigInt, immune to the octal interpretation a leading zero
// would otherwise trigger in the cpp_int string constructor.
inline BigInt bigint_from_digits(std::string digits, bool negative) {
  const auto first = digits.find_first_not_of('0');
  digits = first == std::string::npos ? "0" : digits.substr(first);
  BigInt v(digits);
  return negative ? -v : v;
}

inline bool parse_integer(const std::string& s, BigInt& out) {
  if (s.empty()) return false;
  std::size_t i = (s[0] == '+' || s[0] == '-') ? 1 : 0;
  if (i == s.size()) return false;
  for (std::size_t k = i; k < s.size(); ++k)
    if (!is_ascii_digit(s[k])) return false;
  out = bigint_from_digits(s.substr(i), s[0] == '-');
  return true;
}

inline bool parse_decimal(const std::string& s, Rat& value, int& precision) {
  const auto dot = s.find('.');
  if (dot == std::string::npos) return false;
  try {
    value = rat_from_decimal(s);
  } catch (const ParseError&) {
    return false;
  }
  precision = static_cast<int>(s.size() - dot - 1);
  return precision > 0;
}

// "\frac{a}{b}" / "\dfrac{a}{b}" with integer parts and optional leading sign.
inline bool parse_latex_frac(const std::string& s, Rat& out) {
  std::string body = s;
  bool negative = false;
  if (!body.empty() && (body[0] == '-' || body[0] == '+')) {
    negative = body[0] == '-';
    body = trim(body.substr(1));
  }
  for (const char* prefix : {"\\frac{", "\\dfrac{"}) {
    const std::string pre = prefix;
    if (body.compare(0, pre.size(), pre) != 0) continue;
    const auto close_a = body.find('}', pre.size());
    if (close_a == std::string::npos) return false;
    if (close_a + 1 >= body.size() || body[close_a + 1] != '{') return false;
    const auto close_b = body.find('}', close_a + 2);
    if (close_b == std::string::npos || close_b + 1 != body.size()) return false;
    BigInt a, b;
    if (!parse_integer(trim(body.substr(pre.size(), close_a - pre.size())), a)) return false;
    if (!parse_integer(trim(body.substr(close_a + 2, close_b - close_a - 2)), b)) return false;
    if (b == 0) return false;
    out = Rat(a, b);
    if (negative) out = -out;
    return true;
  }
  return false;
}

// "a/b" with integer parts.
inline bool parse_slash_frac(const std::string& s, Rat& out) {
  const auto slash = s.find('/');
  if (slash == std::string::npos || slash == 0 || slash + 1 >= s.size()) return false;
  BigInt a, b;
  if (!parse_integer(trim(s.substr(0, slash)), a)) return false;
  if (!parse_integer(trim(s.substr(slash + 1)), b)) return false;
  if (b == 0) return false;
  out = Rat(a, b);
  return true;
}

}  // namespace detail

// ----------------------------------------------------------------------------
// Operations
// ----------------------------------------------------------------------------

/// Normalize a raw answer string. Cleaning steps, in order: trim; unescape
/// "\$" and "\%"; drop surrounding "$"; drop "\left"/"\right"; unwrap
/// "\text{...}"; drop trailing periods; drop thousands-separator commas.
/// Parsing then tries, in order: \frac{a}{b}, a/b, p% (as p/100), integer,
/// decimal. Anything else becomes symbolic text, lowercased with all
/// whitespace removed.
inline NormalizedAnswer normalize(const std::string& raw) {
  NormalizedAnswer out;
  out.raw = raw;

  std::string s = trim(raw);
  s = replace_all(s, "\\$", "$");
  s = replace_all(s, "\\%", "%");
  while (!s.empty() && s.front() == '$') s.erase(s.begin());
  while (!s.empty() && s.back() == '$') s.pop_back();
  s = replace_all(s, "\\left", "");
  s = replace_all(s, "\\right", "");
  s = detail::strip_text_macro(s);
  s = trim(s);
  while (!s.empty() && s.back() == '.') s.pop_back();
  s = trim(s);
  s = detail::strip_thousands_commas(s);

  const auto finish_numeric = [&out](const Rat& v, NormalizedAnswer::Kind kind,
                                     int precision = 0) {
    out.value = v;
    out.printed_precision = precision;
    if (kind != NormalizedAnswer::Kind::decimal && rat_den(v) == 1) {
      out.kind = NormalizedAnswer::Kind::integer;
      out.canonical = rat_num(v).convert_to<std::string>();
    } else if (kind == NormalizedAnswer::Kind::decimal) {
      out.kind = kind;
      out.canonical = rat_to_fixed(v, precision);
    } else {
      out.kind = NormalizedAnswer::Kind::rational;
      out.canonical =
          rat_num(v).convert_to<std::string>() + "/" + rat_den(v).convert_to<std::string>();
    }
  };

  Rat frac;
  if (detail::parse_latex_frac(s, frac) || detail::parse_slash_frac(s, frac)) {
    finish_numeric(frac, NormalizedAnswer::Kind::rational);
    return out;
  }
  if (!s.empty() && s.back() == '%') {
    const std::string body = trim(s.substr(0, s.size() - 1));
    BigInt i;
    Rat dec;
    int prec = 0;
    if (detail::parse_integer(body, i)) {
      finish_numeric(Rat(i, 100), NormalizedAnswer::Kind::rational);
      return out;
    }
    if (detail::parse_decimal(body, dec, prec)) {
      finish_numeric(dec / 100, NormalizedAnswer::Kind::rational);
      return out;
    }
  }
  BigInt i;
  if (detail::parse_integer(s, i)) {
    finish_numeric(Rat(i), NormalizedAnswer::Kind::integer);
    return out;
  }
  Rat dec;
  int prec = 0;
  if (detail::parse_decimal(s, dec, prec)) {
    finish_numeric(dec, NormalizedAnswer::Kind::decimal, prec);
    return out;
  }

  out.kind = NormalizedAnswer::Kind::symbolic;
  out.text = remove_whitespace(to_lower(s));
  out.canonical = out.text;
  return out;
}

/// Extract a final answer from model output: the content of the last
/// \boxed{...} group with balanced braces (empty groups are skipped), or the
/// last standalone numeric literal, or absent.
inline std::optional<std::string> extract_answer(const std::string& text) {
  static const std::string boxed = "\\boxed{";
  std::optional<std::string> last_boxed;
  std::size_t pos = 0;
  while ((pos = text.find(boxed, pos)) != std::string::npos) {
    std::size_t j = pos + boxed.size();
    int depth = 1;
    std::string body;
    while (j < text.size() && depth > 0) {
      if (text[j] == '{') ++depth;
      if (text[j] == '}') --depth;
      if (depth > 0) body.push_back(text[j]);
      ++j;
    }
    if (depth == 0 && !trim(body).empty()) last_boxed = body;
    pos += boxed.size();
  }
  if (last_boxed) return last_boxed;

  // Fallback: last standalone numeric literal. A literal is digits with
  // embedded thousands commas, an optional fractional part, an optional
  // trailing '%', and an optional sign when the sign does not follow an
  // operand. A literal must not butt against an identifier character.
  const auto is_ident = [](char c) { return is_ascii_alnum(c) || c == '_'; };
  std::optional<std::string> last_number;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    if (!is_ascii_digit(text[i])) {
      ++i;
      continue;
    }
    std::size_t start = i;
    if (i > 0) {
      const char prev = text[i - 1];
      if (is_ident(prev) || prev == '.') {
        // part of an identifier or a decimal tail: skip the whole run
        while (i < n && (is_ident(text[i]) || text[i] == '.')) ++i;
        continue;
      }
      if (prev == '-' || prev == '+') {
        const char before_sign = i >= 2 ? text[i - 2] : '\0';
        if (i < 2 || !(is_ident(before_sign) || before_sign == ')' || before_sign == '.'))
          start = i - 1;  // unary sign belongs to the literal
      }
    }
    std::size_t e = i;
    while (e < n && (is_ascii_digit(text[e]) ||
                     (text[e] == ',' && e > 0 && is_ascii_digit(text[e - 1]) && e + 1 < n &&
                      is_ascii_digit(text[e + 1]))))
      ++e;
    if (e < n && text[e] == '.' && e + 1 < n && is_ascii_digit(text[e + 1])) {
      ++e;
      while (e < n && is_ascii_digit(text[e])) ++e;
    }
    if (e < n && text[e] == '%') ++e;
    if (e < n && is_ident(text[e])) {
      while (e < n && (is_ident(text[e]) || text[e] == '.')) ++e;
      i = e;
      continue;
    }
    last_number = text.substr(start, e - start);
    i = e;
  }
  return last_number;
}

/// Exact equivalence: numeric kinds compare by rational value, symbolic by
/// canonical text; numeric never equals symbolic. `abs_tolerance` (default 0)
/// loosens the numeric comparison for decimal-answer corpora.
inline bool equivalent(const NormalizedAnswer& a, const NormalizedAnswer& b,
                       const Rat& abs_tolerance = Rat(0)) {
  if (a.is_numeric() != b.is_numeric()) return false;
  if (!a.is_numeric()) return a.text == b.text;
  if (abs_tolerance == 0) return a.value == b.value;
  const Rat diff = a.value >= b.value ? a.value - b.value : b.value - a.value;
  return diff <= abs_tolerance;
}

/// Grade model output against a gold answer. Returns absent when no answer
/// can be extracted, else (extracted string, equivalence verdict).
inline std::optional<std::pair<std::string, bool>> grade_answer(const std::string& text,
                                                                const std::string& gold) {
  const auto predicted = extract_answer(text);
  if (!predicted || trim(*predicted).empty()) return std::nullopt;
  const bool ok = equivalent(normalize(*predicted), normalize(gold));
  return std::make_pair(*predicted, ok);
}

/// Keep exactly the traces whose extracted answer is equivalent to the gold
/// answer, preserving input order. Returned traces carry predicted_answer
/// and correct=true.
inline std::vector<Trace> filter_correct(const std::vector<Trace>& traces,
                                         const std::unordered_map<std::string, Problem>& by_id) {
  std::vector<Trace> out;
  for (const Trace& t : traces) {
    const auto it = by_id.find(t.problem_id);
    if (it == by_id.end())
      throw StageError("filter_correct: unknown problem_id " + t.problem_id);
    const auto graded = grade_answer(t.text, it->second.gold_answer);
    if (!graded || !graded->second) continue;
    Trace kept = t;
    kept.predicted_answer = graded->first;
    kept.correct = true;
    out.push_back(std::move(kept));
  }
  return out;
}

}  // namespace ctrlcot
