#pragma once

// Exact rational arithmetic used wherever the pipeline must be immune to
// floating-point rounding: answer equivalence, compression ratios, metric
// computation, and split-size rounding. Backed by boost::multiprecision so
// numerators of arbitrary size parse without overflow.

#include <cstdint>
#include <string>
#include <string_view>

#include <boost/multiprecision/cpp_int.hpp>

#include "ctrlcot/common.hpp"

namespace ctrlcot {

using BigInt = boost::multiprecision::cpp_int;
using Rat = boost::multiprecision::cpp_rational;

inline BigInt rat_num(const Rat& r) { return boost::multiprecision::numerator(r); }
inline BigInt rat_den(const Rat& r) { return boost::multiprecision::denominator(r); }

/// Parse a plain decimal literal ("3", "-0.25", "14.5", ".5") into an exact
/// rational. Throws ParseError on anything else; no exponents, no fractions.
inline Rat rat_from_decimal(std::string_view text) {
  std::string s = trim(text);
  if (s.empty()) throw ParseError("empty decimal literal");
  bool negative = false;
  std::size_t i = 0;
  if (s[0] == '+' || s[0] == '-') {
    negative = s[0] == '-';
    i = 1;
  }
  std::string int_part;
  std::string frac_part;
  bool seen_dot = false;
  for (; i < s.size(); ++i) {
    char c = s[i];
    if (c == '.') {
      if (seen_dot) throw ParseError("malformed decimal literal: " + s);
      seen_dot = true;
    } else if (is_ascii_digit(c)) {
      (seen_dot ? frac_part : int_part).push_back(c);
    } else {
      throw ParseError("malformed decimal literal: " + s);
    }
  }
  if (int_part.empty() && frac_part.empty())
    throw ParseError("malformed decimal literal: " + s);
  // strip leading zeros so cpp_int does not read the digits as octal
  const auto first_nonzero = int_part.find_first_not_of('0');
  int_part = first_nonzero == std::string::npos ? "" : int_part.substr(first_nonzero);
  BigInt num = int_part.empty() ? BigInt(0) : BigInt(int_part);
  BigInt den = 1;
  for (char c : frac_part) {
    num *= 10;
    num += (c - '0');
    den *= 10;
  }
  if (negative) num = -num;
  return Rat(num, den);
}

/// Number of digits after the decimal point in a literal, 0 when none.
inline int decimal_precision_of(std::string_view text) {
  const auto dot = text.find('.');
  if (dot == std::string_view::npos) return 0;
  return static_cast<int>(text.size() - dot - 1);
}

/// ceil(r * n) for r > 0, n >= 0, computed in integer arithmetic.
inline std::size_t rat_ceil_mul(const Rat& r, std::size_t n) {
  BigInt num = rat_num(r) * BigInt(n);
  BigInt den = rat_den(r);
  BigInt q = num / den;
  if (num % den != 0) q += 1;
  return static_cast<std::size_t>(q.convert_to<std::uint64_t>());
}

/// round(r * n) with halves rounded up, for r >= 0.
inline std::size_t rat_round_mul(const Rat& r, std::size_t n) {
  // floor(r*n + 1/2)
  Rat scaled = r * Rat(BigInt(n), BigInt(1)) + Rat(1, 2);
  BigInt q = rat_num(scaled) / rat_den(scaled);
  return static_cast<std::size_t>(q.convert_to<std::uint64_t>());
}

/// Render r as a fixed-point decimal with `places` digits, halves rounded
/// away from zero. Exact; this is the single display-rounding rule for
/// reported metrics.
inline std::string rat_to_fixed(const Rat& r, int places) {
  BigInt scale = 1;
  for (int i = 0; i < places; ++i) scale *= 10;
  BigInt num = rat_num(r) * scale;
  BigInt den = rat_den(r);
  const bool negative = num < 0;
  if (negative) num = -num;
  BigInt q = num / den;
  BigInt rem = num % den;
  if (rem * 2 >= den) q += 1;
  std::string digits = q.convert_to<std::string>();
  if (places == 0) return (negative && q != 0 ? "-" : "") + digits;
  while (static_cast<int>(digits.size()) <= places) digits.insert(digits.begin(), '0');
  digits.insert(digits.size() - static_cast<std::size_t>(places), 1, '.');
  if (negative && q != 0) digits.insert(digits.begin(), '-');
  return digits;
}

inline std::string rat_to_string(const Rat& r) {
  if (rat_den(r) == 1) return rat_num(r).convert_to<std::string>();
  return rat_num(r).convert_to<std::string>() + "/" + rat_den(r).convert_to<std::string>();
}

/// Shortest exact decimal for rationals whose denominator divides 10^4
/// (always at least one fractional digit): 3/10 -> "0.3", 1 -> "1.0".
/// Throws for anything that does not terminate within four decimals.
inline std::string rat_to_compact(const Rat& r) {
  if (rat_den(r) != 1 && (BigInt(10000) * rat_num(r)) % rat_den(r) != 0)
    throw Error("ratio " + rat_to_string(r) + " is not exact within 4 decimal places");
  std::string s = rat_to_fixed(r, 4);
  while (s.back() == '0') s.pop_back();
  if (s.back() == '.') s.push_back('0');
  return s;
}

inline double rat_to_double(const Rat& r) { return r.convert_to<double>(); }

}  // namespace ctrlcot
