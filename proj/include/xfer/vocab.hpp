#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xfer/error.hpp"
#include "xfer/random.hpp"

namespace xfer {

using TokenId = std::int32_t;
using Sentence = std::vector<std::string>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr std::size_t kNumSpecials = 4;

inline Sentence split_whitespace(std::string_view text) {
  Sentence out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join(const Sentence& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

/// Bidirectional token <-> id map. Ids 0..3 are always PAD, UNK, BOS, EOS.
class Vocab {
 public:
  Vocab() : tokens_{"<pad>", "<unk>", "<s>", "</s>"} {
    for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], static_cast<TokenId>(i));
  }

  /// Tokens with frequency >= min_freq, ordered by descending frequency then
  /// lexicographically, after the specials.
  static Vocab build(const std::vector<Sentence>& corpus, std::size_t min_freq = 1) {
    require(min_freq >= 1, ErrorKind::InvalidArgument, "min_freq must be positive");
    std::map<std::string, std::size_t> freq;
    for (const Sentence& s : corpus) {
      for (const std::string& tok : s) ++freq[tok];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked;
    for (auto& [tok, n] : freq) {
      if (n >= min_freq) ranked.emplace_back(tok, n);
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab v;
    for (auto& [tok, n] : ranked) {
      if (!v.contains(tok)) v.add(tok);
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }

  bool contains(const std::string& token) const { return ids_.contains(token); }

  TokenId id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  const std::string& token_of(TokenId id) const {
    require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(), ErrorKind::InvalidId,
            "id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(tokens_.size()));
    return tokens_[static_cast<std::size_t>(id)];
  }

  /// Maps tokens to ids (unknowns to UNK); `framed` wraps the result in BOS ... EOS.
  std::vector<TokenId> encode(const Sentence& tokens, bool framed = false) const {
    std::vector<TokenId> out;
    out.reserve(tokens.size() + 2);
    if (framed) out.push_back(kBos);
    for (const std::string& t : tokens) out.push_back(id_of(t));
    if (framed) out.push_back(kEos);
    return out;
  }

  std::vector<TokenId> encode(std::string_view sentence, bool framed = false) const {
    return encode(split_whitespace(sentence), framed);
  }

  Sentence decode_tokens(std::span<const TokenId> ids, bool keep_specials = false) const {
    Sentence out;
    for (TokenId id : ids) {
      const std::string& tok = token_of(id);
      if (!keep_specials && id >= 0 && static_cast<std::size_t>(id) < kNumSpecials) continue;
      out.push_back(tok);
    }
    return out;
  }

  std::string decode(std::span<const TokenId> ids, bool keep_specials = false) const {
    return join(decode_tokens(ids, keep_specials));
  }

  /// Text form: a header line, then one token per line; line k after the
  /// header holds id k + 4.
  std::string serialize() const {
    std::ostringstream os;
    os << kHeader << '\n';
    for (std::size_t i = kNumSpecials; i < tokens_.size(); ++i) os << tokens_[i] << '\n';
    return os.str();
  }

  static Vocab deserialize(std::string_view text) {
    std::istringstream is{std::string(text)};
    std::string line;
    require(static_cast<bool>(std::getline(is, line)) && line == kHeader, ErrorKind::ParseError,
            "vocabulary file lacks the expected header");
    Vocab v;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      require(!line.empty() && split_whitespace(line).size() == 1 && split_whitespace(line)[0] == line,
              ErrorKind::ParseError, "bad vocabulary token on line " + std::to_string(lineno));
      require(!v.contains(line), ErrorKind::ParseError, "duplicate token on line " + std::to_string(lineno));
      v.add(line);
    }
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::IoError, "cannot write " + path);
    out << serialize();
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::IoError, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
  }

  std::uint64_t content_hash() const {
    const std::string text = serialize();
    return fnv1a(text.data(), text.size());
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

  static constexpr std::string_view kHeader =
      "# xfer vocab v1: specials <pad>=0 <unk>=1 <s>=2 </s>=3 implicit; line k below holds id k+4";

 private:
  void add(const std::string& token) {
    ids_.emplace(token, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(token);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace xfer
