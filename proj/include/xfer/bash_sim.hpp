#pragma once

// Lexical Bash command parser and the Bash similarity heuristic (BaSH).
//
// Grammar: a command is a pipeline of stages separated by unquoted '|'. The
// first word of a stage is the utility; words whose leading '-' is unquoted
// are flags, everything else is an argument. Single and double quotes and
// backslash escapes are honored. Command substitution is not recognized and
// redirections are plain arguments.

#include <algorithm>
#include <cctype>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xfer/error.hpp"

namespace xfer::bash {

/// Bumped whenever the scoring rule changes; reports carry it so scores from
/// different rules are never compared.
inline constexpr std::string_view kFormulaVersion = "bash-sim/1";

struct Command {
  std::string utility;
  std::set<std::string> flags;
  std::vector<std::string> args;
  friend bool operator==(const Command&, const Command&) = default;
};

struct BashAST {
  std::vector<Command> stages;
  friend bool operator==(const BashAST&, const BashAST&) = default;
};

struct SimilarityScore {
  double value = 0.0;
  std::vector<double> per_slot;
};

// Utilities whose single-dash words are whole options (find -name), so
// letter bundles are not expanded for them.
inline bool takes_long_single_dash(std::string_view utility) {
  static const std::set<std::string_view> kLongDash = {"find", "java", "javac", "gcc", "g++", "cc", "clang", "clang++"};
  const auto slash = utility.rfind('/');
  return kLongDash.contains(slash == std::string_view::npos ? utility : utility.substr(slash + 1));
}

namespace detail {

struct Word {
  std::string text;
  bool dash_unquoted = false;  // first character was an unquoted '-'
  bool is_pipe = false;
};

inline std::vector<Word> lex(std::string_view s) {
  std::vector<Word> words;
  Word cur;
  bool in_word = false;
  auto finish = [&] {
    if (in_word) words.push_back(std::move(cur));
    cur = Word{};
    in_word = false;
  };
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      finish();
      ++i;
    } else if (c == '|') {
      finish();
      Word pipe;
      pipe.is_pipe = true;
      words.push_back(pipe);
      ++i;
    } else if (c == '\'') {
      const std::size_t close = s.find('\'', i + 1);
      require(close != std::string_view::npos, ErrorKind::ParseError, "unbalanced single quote");
      cur.text.append(s.substr(i + 1, close - i - 1));
      in_word = true;
      i = close + 1;
    } else if (c == '"') {
      std::size_t j = i + 1;
      bool closed = false;
      while (j < s.size()) {
        if (s[j] == '\\' && j + 1 < s.size()) {
          cur.text += s[j + 1];
          j += 2;
        } else if (s[j] == '"') {
          closed = true;
          break;
        } else {
          cur.text += s[j++];
        }
      }
      require(closed, ErrorKind::ParseError, "unbalanced double quote");
      in_word = true;
      i = j + 1;
    } else if (c == '\\') {
      if (i + 1 < s.size()) {
        cur.text += s[i + 1];
        i += 2;
      } else {
        cur.text += c;
        ++i;
      }
      in_word = true;
    } else {
      if (!in_word && c == '-') cur.dash_unquoted = true;
      cur.text += c;
      in_word = true;
      ++i;
    }
  }
  finish();
  return words;
}

inline bool all_alpha(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)); });
}

inline Command build_stage(std::span<const Word> words) {
  Command cmd;
  cmd.utility = words[0].text;
  require(!cmd.utility.empty(), ErrorKind::ParseError, "empty utility name");
  const bool long_dash = takes_long_single_dash(cmd.utility);
  for (const Word& w : words.subspan(1)) {
    const std::string& t = w.text;
    if (!w.dash_unquoted || t == "-" || t == "--") {
      cmd.args.push_back(t);
    } else if (t.starts_with("--")) {
      // --opt=value: the value is an argument.
      const auto eq = t.find('=');
      if (eq == std::string::npos || eq == 2) {
        cmd.flags.insert(t);
      } else {
        cmd.flags.insert(t.substr(0, eq));
        cmd.args.push_back(t.substr(eq + 1));
      }
    } else if (!long_dash && t.size() > 2 && all_alpha(std::string_view(t).substr(1))) {
      for (std::size_t k = 1; k < t.size(); ++k) cmd.flags.insert(std::string{'-', t[k]});
    } else {
      cmd.flags.insert(t);
    }
  }
  return cmd;
}

inline bool safe_word(std::string_view w) {
  if (w.empty()) return false;
  return std::all_of(w.begin(), w.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || std::string_view("_./=:,+%@*?~^-{}[]").find(c) != std::string_view::npos;
  });
}

inline std::string quote(std::string_view w) {
  std::string out = "'";
  for (char c : w) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace detail

/// Parses a command line into pipeline stages.
inline BashAST parse_bash(std::string_view command) {
  const auto words = detail::lex(command);
  require(!words.empty(), ErrorKind::EmptyCommand, "empty command");
  BashAST ast;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= words.size(); ++i) {
    if (i == words.size() || words[i].is_pipe) {
      require(i > start, ErrorKind::ParseError, "empty pipeline stage");
      ast.stages.push_back(detail::build_stage(std::span<const detail::Word>(words).subspan(start, i - start)));
      start = i + 1;
    }
  }
  return ast;
}

/// Canonical text form: flags in sorted order before the arguments, words
/// quoted where needed. parse_bash(render(ast)) == ast.
inline std::string render(const BashAST& ast) {
  std::string out;
  for (std::size_t s = 0; s < ast.stages.size(); ++s) {
    const Command& cmd = ast.stages[s];
    if (s) out += " | ";
    out += detail::safe_word(cmd.utility) ? cmd.utility : detail::quote(cmd.utility);
    for (const std::string& f : cmd.flags) {
      const std::string_view rest = std::string_view(f).substr(1);
      out += " -";
      out += detail::safe_word(rest) ? std::string(rest) : detail::quote(rest);
    }
    for (const std::string& a : cmd.args) {
      out += ' ';
      out += detail::safe_word(a) && a.front() != '-' ? a : detail::quote(a);
    }
  }
  return out;
}

/// Structural similarity of two parsed commands in [-100, 100]. Stages are
/// aligned by position; unmatched stages and utility mismatches score -100;
/// matching utilities score 50 * (1 + (|Fp & Fr| - |Fp ^ Fr|) / max(|Fp | Fr|, 1)).
/// Arguments are ignored.
inline SimilarityScore ast_similarity(const BashAST& pred, const BashAST& ref) {
  SimilarityScore score;
  const std::size_t slots = std::max(pred.stages.size(), ref.stages.size());
  for (std::size_t i = 0; i < slots; ++i) {
    if (i >= pred.stages.size() || i >= ref.stages.size() || pred.stages[i].utility != ref.stages[i].utility) {
      score.per_slot.push_back(-100.0);
      continue;
    }
    const auto& fp = pred.stages[i].flags;
    const auto& fr = ref.stages[i].flags;
    std::size_t common = 0;
    for (const auto& f : fp) common += fr.contains(f) ? 1 : 0;
    const std::size_t uni = fp.size() + fr.size() - common;
    const std::size_t sym = uni - common;
    if (uni == 0) {
      score.per_slot.push_back(100.0);
    } else {
      const double diff = static_cast<double>(common) - static_cast<double>(sym);
      score.per_slot.push_back(50.0 * (1.0 + diff / static_cast<double>(uni)));
    }
  }
  double total = 0.0;
  for (double v : score.per_slot) total += v;
  score.value = total / static_cast<double>(slots);
  return score;
}

/// BaSH score of a predicted command against a reference. An unparseable
/// prediction scores -100; an unparseable reference is an error.
inline SimilarityScore bash_similarity(std::string_view prediction, std::string_view reference) {
  BashAST ref;
  try {
    ref = parse_bash(reference);
  } catch (const Error& e) {
    fail(ErrorKind::ReferenceInvalid, "reference '" + std::string(reference) + "' does not parse (" + e.what() + ")");
  }
  BashAST pred;
  try {
    pred = parse_bash(prediction);
  } catch (const Error&) {
    return SimilarityScore{-100.0, std::vector<double>(std::max<std::size_t>(ref.stages.size(), 1), -100.0)};
  }
  return ast_similarity(pred, ref);
}

/// Mean pairwise score, summed in input order.
inline double bash_corpus_score(std::span<const std::string> predictions, std::span<const std::string> references) {
  require(predictions.size() == references.size(), ErrorKind::InvalidArgument,
          std::to_string(predictions.size()) + " predictions for " + std::to_string(references.size()) + " references");
  require(!predictions.empty(), ErrorKind::InvalidArgument, "no commands to score");
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) total += bash_similarity(predictions[i], references[i]).value;
  return total / static_cast<double>(predictions.size());
}

}  // namespace xfer::bash
