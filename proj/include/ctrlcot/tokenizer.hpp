#pragma once

// Tokenization for CoT length accounting and token-level pruning.
//
// Two tokenizers hide behind one interface:
//  - BuiltinTokenizer: deterministic rule-based splitting, no data files.
//  - SubwordTokenizer: greedy longest-match wordpiece loaded from a JSON
//    definition file.
//
// Builtin rules (applied left to right over UTF-8 input):
//  - word characters are ASCII alphanumerics, '_', and any non-ASCII codepoint;
//    maximal runs of word characters form one token;
//  - '.' or ',' between two digits stays inside the token ("3.14", "1,234");
//    '\'' between two letters stays inside the token ("don't");
//  - every other non-space character is a single-character token;
//  - whitespace separates tokens and is never a token.
//
// Detokenization joins tokens with single spaces, except: no space before a
// token starting with one of  . , ; : ! ? ) ] } ' %  and no space after a
// token ending with one of  ( [ { $ .  Joining a token subset and re-running
// the tokenizer yields exactly that subset back, which is what makes
// ratio-targeted pruning exact.

#include <cstddef>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrlcot/common.hpp"

namespace ctrlcot {

/// Token strings plus their byte offsets into the source text.
struct TokenizedText {
  std::vector<std::string> tokens;
  std::vector<std::pair<std::size_t, std::size_t>> offsets;  // [start, end)

  std::size_t size() const { return tokens.size(); }
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual TokenizedText tokenize(const std::string& text) const = 0;
  virtual std::string detokenize(const std::vector<std::string>& tokens) const = 0;

  std::size_t count(const std::string& text) const { return tokenize(text).tokens.size(); }
};

// ----------------------------------------------------------------------------
// Builtin tokenizer
// ----------------------------------------------------------------------------

class BuiltinTokenizer final : public Tokenizer {
 public:
  TokenizedText tokenize(const std::string& text) const override {
    TokenizedText out;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
      const unsigned char c = static_cast<unsigned char>(text[i]);
      if (std::isspace(c)) {
        ++i;
        continue;
      }
      if (is_word_byte(text, i)) {
        std::size_t start = i;
        while (i < n) {
          if (is_word_byte(text, i)) {
            i += utf8_len(static_cast<unsigned char>(text[i]));
          } else if (is_glue(text, i)) {
            ++i;
          } else {
            break;
          }
        }
        out.tokens.emplace_back(text.substr(start, i - start));
        out.offsets.emplace_back(start, i);
      } else {
        // single punctuation character
        out.tokens.emplace_back(1, text[i]);
        out.offsets.emplace_back(i, i + 1);
        ++i;
      }
    }
    return out;
  }

  std::string detokenize(const std::vector<std::string>& tokens) const override {
    static const std::unordered_set<char> no_space_before = {'.', ',', ';', ':', '!',
                                                             '?', ')', ']', '}', '\'', '%'};
    static const std::unordered_set<char> no_space_after = {'(', '[', '{', '$'};
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const std::string& tok = tokens[i];
      if (tok.empty()) continue;
      if (!out.empty()) {
        const char prev_last = out.back();
        const bool skip = no_space_before.count(tok.front()) > 0 ||
                          no_space_after.count(prev_last) > 0;
        if (!skip) out.push_back(' ');
      }
      out += tok;
    }
    return out;
  }

 private:
  static std::size_t utf8_len(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;  // invalid lead byte: treat as one-byte char
  }

  // Word characters: ASCII alnum, '_', or any non-ASCII codepoint.
  static bool is_word_byte(const std::string& s, std::size_t i) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    return is_ascii_alnum(static_cast<char>(c)) || c == '_' || c >= 0x80;
  }

  // '.'/',' glue two digits; '\'' glues two ASCII letters.
  static bool is_glue(const std::string& s, std::size_t i) {
    const char c = s[i];
    if (i == 0 || i + 1 >= s.size()) return false;
    const char prev = s[i - 1];
    const char next = s[i + 1];
    if (c == '.' || c == ',') return is_ascii_digit(prev) && is_ascii_digit(next);
    if (c == '\'') return is_ascii_alpha(prev) && is_ascii_alpha(next);
    return false;
  }
};

// ----------------------------------------------------------------------------
// Subword tokenizer (wordpiece-style, loaded from a JSON definition)
// ----------------------------------------------------------------------------
//
// Definition file schema:
//   {"type": "wordpiece", "unk": "[UNK]", "continuation_prefix": "##",
//    "vocab": ["the", "to", "##ing", ...]}

class SubwordTokenizer final : public Tokenizer {
 public:
  static SubwordTokenizer load(const std::string& path) {
    nlohmann::json def;
    try {
      def = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("unreadable tokenizer definition " + path + ": " + e.what());
    }
    if (!def.is_object() || !def.contains("vocab") || !def["vocab"].is_array())
      throw ParseError("unreadable tokenizer definition " + path + ": missing vocab array");
    SubwordTokenizer t;
    t.unk_ = def.value("unk", std::string("[UNK]"));
    t.prefix_ = def.value("continuation_prefix", std::string("##"));
    for (const auto& v : def["vocab"]) {
      if (!v.is_string())
        throw ParseError("unreadable tokenizer definition " + path + ": non-string vocab entry");
      const std::string piece = v.get<std::string>();
      t.vocab_.insert(piece);
      t.max_piece_ = std::max(t.max_piece_, piece.size());
    }
    if (t.vocab_.empty())
      throw ParseError("unreadable tokenizer definition " + path + ": empty vocab");
    return t;
  }

  TokenizedText tokenize(const std::string& text) const override {
    TokenizedText out;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
      if (std::isspace(static_cast<unsigned char>(text[i]))) {
        ++i;
        continue;
      }
      std::size_t word_end = i;
      while (word_end < n && !std::isspace(static_cast<unsigned char>(text[word_end])))
        ++word_end;
      encode_word(text, i, word_end, out);
      i = word_end;
    }
    return out;
  }

  std::string detokenize(const std::vector<std::string>& tokens) const override {
    std::string out;
    for (const std::string& tok : tokens) {
      if (tok.rfind(prefix_, 0) == 0 && tok.size() > prefix_.size()) {
        out += tok.substr(prefix_.size());
      } else {
        if (!out.empty()) out.push_back(' ');
        out += tok;
      }
    }
    return out;
  }

 private:
  // Greedy longest-match within one whitespace-delimited word.
  void encode_word(const std::string& text, std::size_t begin, std::size_t end,
                   TokenizedText& out) const {
    std::size_t pos = begin;
    bool first = true;
    while (pos < end) {
      std::size_t best = 0;
      const std::size_t limit = std::min(end - pos, max_piece_ + prefix_.size());
      for (std::size_t len = limit; len >= 1; --len) {
        std::string candidate = text.substr(pos, len);
        if (!first) candidate = prefix_ + candidate;
        if (vocab_.count(candidate)) {
          out.tokens.push_back(candidate);
          out.offsets.emplace_back(pos, pos + len);
          best = len;
          break;
        }
      }
      if (best == 0) {
        // No piece matches: the rest of the word becomes one unknown token.
        out.tokens.push_back(unk_);
        out.offsets.emplace_back(pos, end);
        return;
      }
      pos += best;
      first = false;
    }
  }

  std::unordered_set<std::string> vocab_;
  std::string unk_ = "[UNK]";
  std::string prefix_ = "##";
  std::size_t max_piece_ = 0;
};

/// "builtin" selects the rule-based tokenizer; anything else is treated as a
/// path to a subword definition file.
inline std::shared_ptr<Tokenizer> make_tokenizer(const std::string& spec) {
  if (spec.empty() || spec == "builtin") return std::make_shared<BuiltinTokenizer>();
  return std::make_shared<SubwordTokenizer>(SubwordTokenizer::load(spec));
}

}  // namespace ctrlcot
