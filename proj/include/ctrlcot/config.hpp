#pragma once

// Minimal TOML-style configuration reader: [section.sub] headers, key = value
// pairs, quoted keys, strings, integers, decimals, booleans, and single-line
// arrays. Numeric values keep their literal text so ratios and fractions can
// be parsed exactly. Lookup errors carry full field paths.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ctrlcot/common.hpp"
#include "ctrlcot/rational.hpp"

namespace ctrlcot {

struct ConfigValue {
  enum class Kind { string, number, boolean, array };
  Kind kind = Kind::string;
  std::string text;       // string content or numeric literal
  bool boolean = false;
  std::vector<ConfigValue> array;
};

class Config {
 public:
  static Config parse_file(const std::string& path) {
    Config cfg;
    cfg.path_ = path;
    cfg.parse(read_file(path));
    return cfg;
  }

  static Config parse_string(const std::string& content, const std::string& label = "<config>") {
    Config cfg;
    cfg.path_ = label;
    cfg.parse(content);
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key) const {
    return expect(key, ConfigValue::Kind::string).text;
  }
  std::string get_string_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
  }

  std::int64_t get_int(const std::string& key) const {
    const auto& v = expect(key, ConfigValue::Kind::number);
    try {
      return std::stoll(v.text);
    } catch (const std::exception&) {
      throw ConfigError("at " + key + ": expected an integer, got '" + v.text + "'");
    }
  }
  std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
  }

  Rat get_rat(const std::string& key) const {
    const auto& v = expect(key, ConfigValue::Kind::number);
    try {
      return rat_from_decimal(v.text);
    } catch (const ParseError&) {
      throw ConfigError("at " + key + ": expected a decimal number, got '" + v.text + "'");
    }
  }
  Rat get_rat_or(const std::string& key, const Rat& fallback) const {
    return has(key) ? get_rat(key) : fallback;
  }

  bool get_bool(const std::string& key) const {
    return expect(key, ConfigValue::Kind::boolean).boolean;
  }
  bool get_bool_or(const std::string& key, bool fallback) const {
    return has(key) ? get_bool(key) : fallback;
  }

  std::vector<std::string> get_string_array(const std::string& key) const {
    const auto& v = expect(key, ConfigValue::Kind::array);
    std::vector<std::string> out;
    for (const auto& item : v.array) {
      if (item.kind != ConfigValue::Kind::string && item.kind != ConfigValue::Kind::number)
        throw ConfigError("at " + key + ": expected an array of strings or numbers");
      out.push_back(item.text);
    }
    return out;
  }

  std::vector<std::int64_t> get_int_array(const std::string& key) const {
    const auto& v = expect(key, ConfigValue::Kind::array);
    std::vector<std::int64_t> out;
    for (const auto& item : v.array) {
      if (item.kind != ConfigValue::Kind::number)
        throw ConfigError("at " + key + ": expected an array of integers");
      try {
        out.push_back(std::stoll(item.text));
      } catch (const std::exception&) {
        throw ConfigError("at " + key + ": expected an array of integers, got '" + item.text +
                          "'");
      }
    }
    return out;
  }

  /// All keys under "<prefix>." in sorted order.
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    const std::string want = prefix + ".";
    for (const auto& [key, value] : values_) {
      (void)value;
      if (key.rfind(want, 0) == 0) out.push_back(key);
    }
    return out;
  }

 private:
  const ConfigValue& expect(const std::string& key, ConfigValue::Kind kind) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("at " + key + ": missing required key");
    if (it->second.kind != kind) throw ConfigError("at " + key + ": wrong value type");
    return it->second;
  }

  void parse(const std::string& content) {
    std::istringstream in(content);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string stripped = strip_comment(line);
      const std::string t = trim(stripped);
      if (t.empty()) continue;
      if (t.front() == '[') {
        if (t.back() != ']')
          throw ConfigError(path_ + ":" + std::to_string(line_no) + ": malformed section header");
        section = trim(t.substr(1, t.size() - 2));
        if (section.empty())
          throw ConfigError(path_ + ":" + std::to_string(line_no) + ": empty section name");
        continue;
      }
      const auto eq = find_top_level_equals(t);
      if (eq == std::string::npos)
        throw ConfigError(path_ + ":" + std::to_string(line_no) + ": expected key = value");
      std::string key = trim(t.substr(0, eq));
      if (key.size() >= 2 && key.front() == '"' && key.back() == '"')
        key = key.substr(1, key.size() - 2);
      if (key.empty())
        throw ConfigError(path_ + ":" + std::to_string(line_no) + ": empty key");
      const std::string full_key = section.empty() ? key : section + "." + key;
      values_[full_key] = parse_value(trim(t.substr(eq + 1)), line_no);
    }
  }

  static std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
      if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
  }

  static std::size_t find_top_level_equals(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
      if (line[i] == '=' && !in_string) return i;
    }
    return std::string::npos;
  }

  ConfigValue parse_value(const std::string& text, std::size_t line_no) const {
    ConfigValue v;
    if (text.empty())
      throw ConfigError(path_ + ":" + std::to_string(line_no) + ": empty value");
    if (text.front() == '"') {
      if (text.size() < 2 || text.back() != '"')
        throw ConfigError(path_ + ":" + std::to_string(line_no) + ": unterminated string");
      v.kind = ConfigValue::Kind::string;
      v.text = unescape(text.substr(1, text.size() - 2), line_no);
      return v;
    }
    if (text.front() == '[') {
      if (text.back() != ']')
        throw ConfigError(path_ + ":" + std::to_string(line_no) +
                          ": arrays must close on the same line");
      v.kind = ConfigValue::Kind::array;
      for (const auto& item : split_array_items(text.substr(1, text.size() - 2)))
        v.array.push_back(parse_value(trim(item), line_no));
      return v;
    }
    if (text == "true" || text == "false") {
      v.kind = ConfigValue::Kind::boolean;
      v.boolean = text == "true";
      return v;
    }
    // numeric literal: sign, digits, optional fraction
    bool numeric = true;
    bool seen_digit = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
      const char c = text[i];
      if (i == 0 && (c == '+' || c == '-')) continue;
      if (is_ascii_digit(c)) {
        seen_digit = true;
        continue;
      }
      if (c == '.') continue;
      numeric = false;
      break;
    }
    if (!numeric || !seen_digit)
      throw ConfigError(path_ + ":" + std::to_string(line_no) + ": cannot parse value '" + text +
                        "'");
    v.kind = ConfigValue::Kind::number;
    v.text = text;
    return v;
  }

  std::string unescape(const std::string& s, std::size_t line_no) const {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] != '\\') {
        out.push_back(s[i]);
        continue;
      }
      if (i + 1 >= s.size())
        throw ConfigError(path_ + ":" + std::to_string(line_no) + ": dangling escape");
      const char c = s[++i];
      switch (c) {
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        default:
          throw ConfigError(path_ + ":" + std::to_string(line_no) + ": unknown escape \\" + c);
      }
    }
    return out;
  }

  static std::vector<std::string> split_array_items(const std::string& body) {
    std::vector<std::string> items;
    std::string current;
    bool in_string = false;
    for (std::size_t i = 0; i < body.size(); ++i) {
      const char c = body[i];
      if (c == '"' && (i == 0 || body[i - 1] != '\\')) in_string = !in_string;
      if (c == ',' && !in_string) {
        items.push_back(current);
        current.clear();
      } else {
        current.push_back(c);
      }
    }
    if (!trim(current).empty()) items.push_back(current);
    return items;
  }

  std::string path_;
  std::map<std::string, ConfigValue> values_;
};

}  // namespace ctrlcot
