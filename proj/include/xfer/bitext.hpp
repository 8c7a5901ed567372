#pragma once

// Bitext corpora: synthetic generators, file ingestion, and the preprocessing
// transforms (SQL constant masking, direction swap, downsampling, splitting).
// Every corpus records the steps that produced it so it can be replayed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "xfer/error.hpp"
#include "xfer/random.hpp"
#include "xfer/vocab.hpp"

namespace xfer {

struct BitextPair {
  Sentence source;
  Sentence target;
  friend bool operator==(const BitextPair&, const BitextPair&) = default;
};

struct TransformStep {
  std::string op;
  std::map<std::string, std::string> args;
  friend bool operator==(const TransformStep&, const TransformStep&) = default;
};

struct CorpusMeta {
  std::string task;
  std::uint64_t seed = 0;
  std::vector<TransformStep> history;
  friend bool operator==(const CorpusMeta&, const CorpusMeta&) = default;
};

struct BitextCorpus {
  std::vector<BitextPair> pairs;
  CorpusMeta meta;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }

  std::vector<Sentence> sources() const {
    std::vector<Sentence> out;
    for (const auto& p : pairs) out.push_back(p.source);
    return out;
  }
  std::vector<Sentence> targets() const {
    std::vector<Sentence> out;
    for (const auto& p : pairs) out.push_back(p.target);
    return out;
  }

  friend bool operator==(const BitextCorpus&, const BitextCorpus&) = default;
};

enum class BitextFormat { Tsv, Jsonl };

inline BitextFormat parse_format(std::string_view name) {
  if (name == "tsv") return BitextFormat::Tsv;
  if (name == "jsonl") return BitextFormat::Jsonl;
  fail(ErrorKind::InvalidArgument, "unknown bitext format '" + std::string(name) + "' (want tsv or jsonl)");
}

inline std::string_view format_name(BitextFormat f) { return f == BitextFormat::Tsv ? "tsv" : "jsonl"; }

struct SyntheticOptions {
  std::size_t n = 10000;
  std::size_t vocab_size = 50;
  std::size_t len_min = 3;
  std::size_t len_max = 12;
  std::uint64_t seed = 0;
  std::string prefix = "w";
  bool identity = false;  // copy task only: force the identity permutation
};

namespace detail {

inline void check_synthetic(const SyntheticOptions& o) {
  require(o.n >= 1, ErrorKind::InvalidArgument, "corpus size must be at least 1");
  require(o.vocab_size >= 2, ErrorKind::InvalidArgument, "synthetic vocabulary needs at least 2 tokens");
  require(o.len_min >= 1 && o.len_min <= o.len_max, ErrorKind::InvalidArgument,
          "need 1 <= len_min <= len_max");
  require(!o.prefix.empty() && split_whitespace(o.prefix).size() == 1 && split_whitespace(o.prefix)[0] == o.prefix,
          ErrorKind::InvalidArgument, "token prefix must be a non-empty word");
}

inline std::vector<std::vector<std::size_t>> random_sequences(const SyntheticOptions& o) {
  Rng rng(derive_seed(o.seed, 0x5EC));
  std::vector<std::vector<std::size_t>> out(o.n);
  for (auto& seq : out) {
    const std::size_t len = o.len_min + rng.below(o.len_max - o.len_min + 1);
    seq.resize(len);
    for (auto& tok : seq) tok = rng.below(o.vocab_size);
  }
  return out;
}

inline std::map<std::string, std::string> synthetic_args(const SyntheticOptions& o) {
  return {{"n", std::to_string(o.n)},
          {"vocab_size", std::to_string(o.vocab_size)},
          {"len_min", std::to_string(o.len_min)},
          {"len_max", std::to_string(o.len_max)},
          {"seed", std::to_string(o.seed)},
          {"prefix", o.prefix},
          {"identity", o.identity ? "1" : "0"}};
}

}  // namespace detail

inline std::string synthetic_token(const std::string& prefix, std::size_t i) { return prefix + std::to_string(i); }

/// The permutation drawn by gen_copy for these options: token i maps to token perm[i].
inline std::vector<std::size_t> copy_permutation(const SyntheticOptions& o) {
  std::vector<std::size_t> perm(o.vocab_size);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  if (!o.identity) {
    Rng rng(derive_seed(o.seed, 0x9E7));
    rng.shuffle(perm);
  }
  return perm;
}

/// Random sequences paired with their pointwise image under a seeded
/// permutation of the synthetic vocabulary.
inline BitextCorpus gen_copy(const SyntheticOptions& o) {
  detail::check_synthetic(o);
  const auto perm = copy_permutation(o);
  BitextCorpus c;
  for (const auto& seq : detail::random_sequences(o)) {
    BitextPair p;
    for (std::size_t tok : seq) {
      p.source.push_back(synthetic_token(o.prefix, tok));
      p.target.push_back(synthetic_token(o.prefix, perm[tok]));
    }
    c.pairs.push_back(std::move(p));
  }
  c.meta = {"copy", o.seed, {{"gen_copy", detail::synthetic_args(o)}}};
  return c;
}

/// Random sequences paired with their word-order reversal.
inline BitextCorpus gen_reversal(const SyntheticOptions& o) {
  detail::check_synthetic(o);
  BitextCorpus c;
  for (const auto& seq : detail::random_sequences(o)) {
    BitextPair p;
    for (std::size_t tok : seq) p.source.push_back(synthetic_token(o.prefix, tok));
    p.target.assign(p.source.rbegin(), p.source.rend());
    c.pairs.push_back(std::move(p));
  }
  auto args = detail::synthetic_args(o);
  args.erase("identity");
  c.meta = {"reversal", o.seed, {{"gen_reversal", std::move(args)}}};
  return c;
}

namespace detail {

inline BitextPair make_pair_checked(std::string_view src, std::string_view tgt, std::size_t lineno) {
  BitextPair p{split_whitespace(src), split_whitespace(tgt)};
  require(!(p.source.empty() && p.target.empty()), ErrorKind::ParseError,
          "line " + std::to_string(lineno) + ": both source and target are empty");
  return p;
}

}  // namespace detail

inline BitextCorpus parse_bitext(std::string_view text, BitextFormat format, const std::string& origin = "<memory>") {
  BitextCorpus c;
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const std::string where = origin + ":" + std::to_string(lineno);
    if (format == BitextFormat::Tsv) {
      const std::size_t tab = line.find('\t');
      require(tab != std::string_view::npos, ErrorKind::ParseError, where + ": missing TAB separator");
      require(line.find('\t', tab + 1) == std::string_view::npos, ErrorKind::ParseError,
              where + ": more than one TAB separator");
      c.pairs.push_back(detail::make_pair_checked(line.substr(0, tab), line.substr(tab + 1), lineno));
    } else {
      nlohmann::json row;
      try {
        row = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::ParseError, where + ": invalid JSON (" + e.what() + ")");
      }
      require(row.is_object() && row.contains("source") && row["source"].is_string() && row.contains("target") &&
                  row["target"].is_string(),
              ErrorKind::ParseError, where + ": expected string fields \"source\" and \"target\"");
      c.pairs.push_back(detail::make_pair_checked(row["source"].get<std::string>(),
                                                  row["target"].get<std::string>(), lineno));
    }
  }
  require(!c.pairs.empty(), ErrorKind::EmptyCorpus, origin + " holds no pairs");
  return c;
}

/// Reads a TSV ("source<TAB>target") or JSONL ({"source", "target"}) file.
inline BitextCorpus load_bitext(const std::string& path, BitextFormat format) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  BitextCorpus c = parse_bitext(ss.str(), format, path);
  c.meta = {"file", 0, {{"load_bitext", {{"path", path}, {"format", std::string(format_name(format))}}}}};
  return c;
}

inline std::string render_bitext(const BitextCorpus& c, BitextFormat format) {
  std::string out;
  for (const auto& p : c.pairs) {
    if (format == BitextFormat::Tsv) {
      out += join(p.source) + '\t' + join(p.target) + '\n';
    } else {
      nlohmann::ordered_json row;
      row["source"] = join(p.source);
      row["target"] = join(p.target);
      out += row.dump() + '\n';
    }
  }
  return out;
}

inline void write_bitext(const BitextCorpus& c, const std::string& path, BitextFormat format) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot write " + path);
  out << render_bitext(c, format);
}

namespace detail {

inline bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '$' || c == '@' || c == '#';
}

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Length of a numeric literal starting at i (digits[.digits][e[+-]digits] or
// .digits), or 0.
inline std::size_t numeric_length(std::string_view q, std::size_t i) {
  std::size_t j = i;
  while (j < q.size() && is_digit(q[j])) ++j;
  const bool int_part = j > i;
  if (j < q.size() && q[j] == '.' && j + 1 < q.size() && is_digit(q[j + 1])) {
    ++j;
    while (j < q.size() && is_digit(q[j])) ++j;
  } else if (!int_part) {
    return 0;
  }
  if (j < q.size() && (q[j] == 'e' || q[j] == 'E')) {
    std::size_t k = j + 1;
    if (k < q.size() && (q[k] == '+' || q[k] == '-')) ++k;
    if (k < q.size() && is_digit(q[k])) {
      while (k < q.size() && is_digit(q[k])) ++k;
      j = k;
    }
  }
  return j - i;
}

}  // namespace detail

/// Replaces quoted string literals with `<str>` and standalone numeric literals
/// (optionally signed integers or decimals) with `<num>`. Lexical only; no
/// schema information is consulted.
inline std::string mask_sql_constants(std::string_view query) {
  std::string out;
  std::size_t i = 0;
  while (i < query.size()) {
    const char c = query[i];
    if (c == '\'' || c == '"') {
      std::size_t j = i + 1;
      bool closed = false;
      while (j < query.size()) {
        if (query[j] == '\\' && j + 1 < query.size()) {
          j += 2;
          continue;
        }
        if (query[j] == c) {
          // A doubled quote is an escaped quote inside the literal.
          if (j + 1 < query.size() && query[j + 1] == c) {
            j += 2;
            continue;
          }
          closed = true;
          break;
        }
        ++j;
      }
      require(closed, ErrorKind::ParseError, "unterminated quote starting at offset " + std::to_string(i));
      out += "<str>";
      i = j + 1;
      continue;
    }
    const bool boundary_before = i == 0 || !detail::ident_char(query[i - 1]);
    if (boundary_before) {
      std::size_t start = i;
      if ((c == '-' || c == '+') && i + 1 < query.size()) {
        // A sign belongs to the literal only after an operator, '(' or ','.
        std::size_t k = i;
        while (k > 0 && query[k - 1] == ' ') --k;
        const bool unary = k == 0 || std::string_view("(,=<>+-*/").find(query[k - 1]) != std::string_view::npos;
        if (unary) start = i + 1;
      }
      const std::size_t len = detail::numeric_length(query, start);
      if (len > 0) {
        const std::size_t end = start + len;
        const bool boundary_after = end == query.size() || !detail::ident_char(query[end]);
        if (boundary_after) {
          out += "<num>";
          i = end;
          continue;
        }
      }
    }
    out += c;
    ++i;
  }
  return out;
}

enum class Side { Source, Target, Both };

inline Side parse_side(std::string_view s) {
  if (s == "source") return Side::Source;
  if (s == "target") return Side::Target;
  if (s == "both") return Side::Both;
  fail(ErrorKind::InvalidArgument, "unknown side '" + std::string(s) + "'");
}

inline std::string_view side_name(Side s) {
  return s == Side::Source ? "source" : s == Side::Target ? "target" : "both";
}

/// Applies mask_sql_constants to the chosen side of every pair.
inline BitextCorpus mask_sql(const BitextCorpus& in, Side side = Side::Target) {
  BitextCorpus c = in;
  for (auto& p : c.pairs) {
    if (side != Side::Target) p.source = split_whitespace(mask_sql_constants(join(p.source)));
    if (side != Side::Source) p.target = split_whitespace(mask_sql_constants(join(p.target)));
  }
  c.meta.history.push_back({"mask_sql", {{"side", std::string(side_name(side))}}});
  return c;
}

inline BitextCorpus swap_direction(const BitextCorpus& in) {
  BitextCorpus c = in;
  for (auto& p : c.pairs) std::swap(p.source, p.target);
  c.meta.history.push_back({"swap_direction", {}});
  return c;
}

/// Uniform random n-subset without replacement, kept in original order.
inline BitextCorpus downsample(const BitextCorpus& in, std::size_t n, std::uint64_t seed) {
  require(n >= 1, ErrorKind::InvalidArgument, "downsample size must be at least 1");
  BitextCorpus c;
  c.meta = in.meta;
  c.meta.history.push_back({"downsample", {{"n", std::to_string(n)}, {"seed", std::to_string(seed)}}});
  if (n >= in.size()) {
    c.pairs = in.pairs;
    return c;
  }
  std::vector<std::size_t> idx(in.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0xD5));
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  for (std::size_t i : idx) c.pairs.push_back(in.pairs[i]);
  return c;
}

struct SplitCorpus {
  BitextCorpus train;
  BitextCorpus test;
};

/// Disjoint train/test partition with |test| = round(fraction * size), clamped
/// so both halves are non-empty. Both halves keep the original order.
inline SplitCorpus split(const BitextCorpus& in, double test_fraction, std::uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0, ErrorKind::InvalidArgument, "test fraction must be in (0, 1)");
  require(in.size() >= 2, ErrorKind::TooSmallToSplit, "need at least 2 pairs to split, got " + std::to_string(in.size()));
  std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(in.size())));
  n_test = std::clamp<std::size_t>(n_test, 1, in.size() - 1);
  std::vector<std::size_t> idx(in.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5B1));
  rng.shuffle(idx);
  std::vector<bool> is_test(in.size(), false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[idx[i]] = true;

  SplitCorpus out;
  out.train.meta = out.test.meta = in.meta;
  std::ostringstream frac;
  frac.precision(17);
  frac << test_fraction;
  std::map<std::string, std::string> args{{"fraction", frac.str()}, {"seed", std::to_string(seed)}};
  args["part"] = "train";
  out.train.meta.history.push_back({"split", args});
  args["part"] = "test";
  out.test.meta.history.push_back({"split", args});
  for (std::size_t i = 0; i < in.size(); ++i) (is_test[i] ? out.test : out.train).pairs.push_back(in.pairs[i]);
  return out;
}

namespace detail {

inline const std::string& arg(const TransformStep& step, const std::string& key) {
  auto it = step.args.find(key);
  require(it != step.args.end(), ErrorKind::ParseError, "step '" + step.op + "' lacks argument '" + key + "'");
  return it->second;
}

inline std::uint64_t arg_u64(const TransformStep& step, const std::string& key) {
  const std::string& v = arg(step, key);
  try {
    std::size_t used = 0;
    const auto x = std::stoull(v, &used);
    require(used == v.size(), ErrorKind::ParseError, "");
    return x;
  } catch (const std::exception&) {
    fail(ErrorKind::ParseError, "step '" + step.op + "' argument '" + key + "' is not an integer: " + v);
  }
}

inline SyntheticOptions synthetic_from(const TransformStep& step) {
  SyntheticOptions o;
  o.n = arg_u64(step, "n");
  o.vocab_size = arg_u64(step, "vocab_size");
  o.len_min = arg_u64(step, "len_min");
  o.len_max = arg_u64(step, "len_max");
  o.seed = arg_u64(step, "seed");
  o.prefix = arg(step, "prefix");
  if (step.args.contains("identity")) o.identity = arg(step, "identity") == "1";
  return o;
}

}  // namespace detail

/// Rebuilds a corpus from its transform history.
inline BitextCorpus replay(const std::vector<TransformStep>& history) {
  require(!history.empty(), ErrorKind::InvalidArgument, "empty transform history");
  BitextCorpus c;
  for (std::size_t i = 0; i < history.size(); ++i) {
    const TransformStep& step = history[i];
    const bool root = step.op == "gen_copy" || step.op == "gen_reversal" || step.op == "load_bitext";
    require(root == (i == 0), ErrorKind::ParseError, "history step '" + step.op + "' out of place");
    if (step.op == "gen_copy") {
      c = gen_copy(detail::synthetic_from(step));
    } else if (step.op == "gen_reversal") {
      c = gen_reversal(detail::synthetic_from(step));
    } else if (step.op == "load_bitext") {
      c = load_bitext(detail::arg(step, "path"), parse_format(detail::arg(step, "format")));
    } else if (step.op == "mask_sql") {
      c = mask_sql(c, parse_side(detail::arg(step, "side")));
    } else if (step.op == "swap_direction") {
      c = swap_direction(c);
    } else if (step.op == "downsample") {
      c = downsample(c, detail::arg_u64(step, "n"), detail::arg_u64(step, "seed"));
    } else if (step.op == "split") {
      const double fraction = std::stod(detail::arg(step, "fraction"));
      auto parts = split(c, fraction, detail::arg_u64(step, "seed"));
      c = detail::arg(step, "part") == "test" ? std::move(parts.test) : std::move(parts.train);
    } else {
      fail(ErrorKind::ParseError, "unknown history step '" + step.op + "'");
    }
  }
  return c;
}

inline nlohmann::ordered_json history_to_json(const std::vector<TransformStep>& history) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& step : history) arr.push_back({{"op", step.op}, {"args", step.args}});
  return arr;
}

}  // namespace xfer
