#pragma once

// Shared utilities: error taxonomy, stable hashing, small string/file helpers.
// Everything here is dependency-free (stdlib only) and safe to include anywhere.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ctrlcot {

// ----------------------------------------------------------------------------
// Errors
// ----------------------------------------------------------------------------

/// Base class for all pipeline errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid or missing configuration (CLI exit code 1).
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

/// Malformed input data; carries file/line context when known.
struct ParseError : Error {
  explicit ParseError(const std::string& msg) : Error(msg) {}
  ParseError(const std::string& file, std::size_t line, const std::string& msg)
      : Error(file + ":" + std::to_string(line) + ": " + msg) {}
};

/// A pipeline stage could not run or produced invalid output (CLI exit code 2).
struct StageError : Error {
  explicit StageError(const std::string& msg) : Error(msg) {}
};

/// Replay backend has no recording for a request (CLI exit code 3).
struct ReplayMissError : Error {
  explicit ReplayMissError(const std::string& tag, const std::string& key)
      : Error("replay miss for tag '" + tag + "' (key " + key + ")"), tag(tag), key(key) {}
  std::string tag;
  std::string key;
};

// ----------------------------------------------------------------------------
// Hashing
// ----------------------------------------------------------------------------

/// FNV-1a 64-bit. Stable across platforms and runs; used for replay keys,
/// file content hashes, and split assignment ranking.
inline std::uint64_t fnv1a64(std::string_view data,
                             std::uint64_t seed = 1469598103934665603ull) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

// ----------------------------------------------------------------------------
// Strings
// ----------------------------------------------------------------------------

inline bool is_ascii_digit(char c) { return c >= '0' && c <= '9'; }
inline bool is_ascii_alpha(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}
inline bool is_ascii_alnum(char c) { return is_ascii_digit(c) || is_ascii_alpha(c); }

inline std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

/// Drop every whitespace character.
inline std::string remove_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
  }
  return out;
}

inline bool contains(std::string_view hay, std::string_view needle) {
  return hay.find(needle) != std::string_view::npos;
}

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  if (from.empty()) return s;
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

// ----------------------------------------------------------------------------
// Files
// ----------------------------------------------------------------------------

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write file: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write failed: " + path);
}

inline bool file_exists(const std::string& path) {
  return std::filesystem::exists(path);
}

/// Content hash of a file (FNV-1a 64 over raw bytes) as a hex string.
inline std::string file_hash(const std::string& path) {
  return to_hex(fnv1a64(read_file(path)));
}

}  // namespace ctrlcot
