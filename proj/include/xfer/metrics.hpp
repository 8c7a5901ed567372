#pragma once

// Teacher-forced perplexity and token accuracy, greedy-decoded BaSH (or an
// exact-match fallback for non-shell targets), bundled as a MetricReport.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xfer/bash_sim.hpp"
#include "xfer/bitext.hpp"
#include "xfer/error.hpp"
#include "xfer/model.hpp"
#include "xfer/vocab.hpp"

namespace xfer {

/// Summed statistics over non-PAD target positions.
struct TokenStats {
  double nll_sum = 0.0;
  std::size_t tokens = 0;
  std::size_t correct = 0;

  TokenStats& operator+=(const TokenStats& o) {
    nll_sum += o.nll_sum;
    tokens += o.tokens;
    correct += o.correct;
    return *this;
  }
};

/// Scores one row of logits against a gold id: unsmoothed NLL (natural log)
/// and whether the argmax, lowest id on ties, hits the gold id.
template <typename T>
void score_row(const T* row, std::size_t vocab, TokenId gold, TokenStats& stats) {
  std::size_t best = 0;
  double mx = static_cast<double>(row[0]);
  for (std::size_t k = 1; k < vocab; ++k) {
    if (static_cast<double>(row[k]) > mx) {
      mx = static_cast<double>(row[k]);
      best = k;
    }
  }
  double z = 0.0;
  for (std::size_t k = 0; k < vocab; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
  stats.nll_sum += std::log(z) + mx - static_cast<double>(row[static_cast<std::size_t>(gold)]);
  stats.tokens += 1;
  if (best == static_cast<std::size_t>(gold)) stats.correct += 1;
}

/// Accumulates stats over `pairs` in fixed order. `logits_of` maps a batch to a
/// [size * tgt_len, V] tensor; any teacher-forced scorer works.
template <typename T, typename LogitFn>
TokenStats token_stats(std::span<const EncodedPair> pairs, LogitFn&& logits_of, std::size_t batch_size = 64) {
  require(batch_size > 0, ErrorKind::InvalidArgument, "batch size must be positive");
  TokenStats stats;
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    const Batch b = make_batch(pairs.subspan(start, std::min(batch_size, pairs.size() - start)));
    const Tensor<T> logits = logits_of(b);
    require(logits.rank() == 2 && logits.dim(0) == b.tgt_out.size(), ErrorKind::ShapeError,
            "logit rows do not match target positions");
    const std::size_t vocab = logits.dim(1);
    for (std::size_t r = 0; r < b.tgt_out.size(); ++r) {
      const TokenId gold = b.tgt_out[r];
      if (gold == kPad) continue;
      require(gold >= 0 && static_cast<std::size_t>(gold) < vocab, ErrorKind::InvalidId, "gold id outside the logits");
      score_row(logits.data().data() + r * vocab, vocab, gold, stats);
    }
  }
  return stats;
}

template <typename T>
TokenStats token_stats(const PartitionedModel<T>& model, std::span<const EncodedPair> pairs,
                       std::size_t batch_size = 64) {
  return token_stats<T>(pairs, [&](const Batch& b) { return model.logits(b); }, batch_size);
}

inline double perplexity(const TokenStats& s) {
  require(s.tokens > 0, ErrorKind::EmptyCorpus, "no target tokens to score");
  return std::exp(s.nll_sum / static_cast<double>(s.tokens));
}

inline double accuracy_pct(const TokenStats& s) {
  require(s.tokens > 0, ErrorKind::EmptyCorpus, "no target tokens to score");
  return 100.0 * static_cast<double>(s.correct) / static_cast<double>(s.tokens);
}

template <typename T>
double perplexity(const PartitionedModel<T>& model, std::span<const EncodedPair> pairs) {
  return perplexity(token_stats(model, pairs));
}

template <typename T>
double token_accuracy(const PartitionedModel<T>& model, std::span<const EncodedPair> pairs) {
  return accuracy_pct(token_stats(model, pairs));
}

enum class ScoreMode { Bash, ExactMatch };

inline ScoreMode parse_score_mode(std::string_view s) {
  if (s == "bash") return ScoreMode::Bash;
  if (s == "exact_match") return ScoreMode::ExactMatch;
  fail(ErrorKind::InvalidArgument, "unknown score mode '" + std::string(s) + "' (expected bash or exact_match)");
}

inline std::string_view score_mode_name(ScoreMode m) { return m == ScoreMode::Bash ? "bash" : "exact_match"; }

inline constexpr std::string_view kExactMatchVersion = "exact-match/1";

struct DecodeConfig {
  std::size_t max_len = 64;
  std::size_t batch_size = 64;
};

struct MetricReport {
  std::string experiment;
  double perplexity = 0.0;
  double accuracy_pct = 0.0;
  double bash_score = 0.0;
  std::size_t examples = 0;
  std::size_t target_tokens = 0;
  std::string phase;
  std::string decode = "greedy";
  std::size_t decode_max_len = 0;
  std::string score_mode = "bash";
  std::string score_version = std::string(bash::kFormulaVersion);
  std::string ppl_base = "e";
  std::string accuracy_mode = "teacher_forced";

  friend bool operator==(const MetricReport&, const MetricReport&) = default;

  nlohmann::ordered_json to_json() const {
    return {{"experiment", experiment},
            {"ppl", perplexity},
            {"accuracy_pct", accuracy_pct},
            {"bash_score", bash_score},
            {"examples", examples},
            {"target_tokens", target_tokens},
            {"phase", phase},
            {"decode", decode},
            {"decode_max_len", decode_max_len},
            {"score_mode", score_mode},
            {"score_version", score_version},
            {"ppl_base", ppl_base},
            {"accuracy_mode", accuracy_mode}};
  }

  static MetricReport from_json(const nlohmann::json& j) {
    MetricReport r;
    try {
      r.experiment = j.at("experiment").get<std::string>();
      r.perplexity = j.at("ppl").get<double>();
      r.accuracy_pct = j.at("accuracy_pct").get<double>();
      r.bash_score = j.at("bash_score").get<double>();
      r.examples = j.at("examples").get<std::size_t>();
      r.target_tokens = j.at("target_tokens").get<std::size_t>();
      r.phase = j.at("phase").get<std::string>();
      r.decode = j.at("decode").get<std::string>();
      r.decode_max_len = j.at("decode_max_len").get<std::size_t>();
      r.score_mode = j.at("score_mode").get<std::string>();
      r.score_version = j.at("score_version").get<std::string>();
      r.ppl_base = j.at("ppl_base").get<std::string>();
      r.accuracy_mode = j.at("accuracy_mode").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::ParseError, std::string("metric report: ") + e.what());
    }
    r.validate();
    return r;
  }

  void validate() const {
    require(std::isfinite(perplexity) && perplexity >= 1.0 - 1e-12, ErrorKind::InvalidArgument,
            "perplexity must be at least 1");
    require(accuracy_pct >= 0.0 && accuracy_pct <= 100.0, ErrorKind::InvalidArgument, "accuracy outside [0, 100]");
    require(bash_score >= -100.0 && bash_score <= 100.0, ErrorKind::InvalidArgument, "score outside [-100, 100]");
  }

  std::string to_json_text() const { return to_json().dump(2) + "\n"; }
  static MetricReport parse(std::string_view text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::ParseError, std::string("metric report: ") + e.what());
    }
    return from_json(j);
  }

  /// Row in results-table order: experiment, ppl, Acc., BaSH.
  std::string tsv_row() const {
    std::ostringstream os;
    os.precision(17);
    os << experiment << '\t' << perplexity << '\t' << accuracy_pct << '\t' << bash_score;
    return os.str();
  }
};

/// Mean exact-match rate times 100, comparing whitespace-normalized strings.
inline double exact_match_score(std::span<const std::string> predictions, std::span<const std::string> references) {
  require(predictions.size() == references.size() && !references.empty(), ErrorKind::InvalidArgument,
          "exact match needs equally many, non-zero predictions and references");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    if (split_whitespace(predictions[i]) == split_whitespace(references[i])) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(references.size());
}

/// Greedy decodes every source and renders it through the target vocabulary.
template <typename T>
std::vector<std::string> decode_corpus(const PartitionedModel<T>& model, const Vocab& src_vocab, const Vocab& tgt_vocab,
                                       const BitextCorpus& corpus, const DecodeConfig& decode) {
  require(decode.batch_size > 0, ErrorKind::InvalidArgument, "decode batch size must be positive");
  std::vector<std::string> out;
  out.reserve(corpus.size());
  for (std::size_t start = 0; start < corpus.size(); start += decode.batch_size) {
    std::vector<std::vector<TokenId>> sources;
    for (std::size_t i = start; i < std::min(corpus.size(), start + decode.batch_size); ++i) {
      auto ids = src_vocab.encode(corpus.pairs[i].source);
      ids.push_back(kEos);
      sources.push_back(std::move(ids));
    }
    for (const auto& ids : model.greedy_decode(std::span<const std::vector<TokenId>>(sources), decode.max_len)) {
      out.push_back(tgt_vocab.decode(ids));
    }
  }
  return out;
}

/// Full evaluation of a model on a test corpus. Unless `any_phase`, the model
/// must be finetuned.
template <typename T>
MetricReport evaluate_full(const PartitionedModel<T>& model, const Vocab& src_vocab, const Vocab& tgt_vocab,
                           const BitextCorpus& test, const DecodeConfig& decode, ScoreMode mode,
                           const std::string& experiment = "", bool any_phase = false) {
  require(any_phase || model.phase() == Phase::Finetuned, ErrorKind::PhaseError,
          "evaluation expects a finetuned model, got " + std::string(phase_name(model.phase())));
  require(!test.empty(), ErrorKind::EmptyCorpus, "empty test corpus");
  require(src_vocab.size() == model.src_vocab_size() && tgt_vocab.size() == model.tgt_vocab_size(),
          ErrorKind::InvalidArgument, "vocabulary sizes do not match the model embeddings");

  std::vector<EncodedPair> pairs;
  pairs.reserve(test.size());
  for (const auto& p : test.pairs) pairs.push_back(encode_pair(src_vocab, tgt_vocab, p.source, p.target));
  const TokenStats stats = token_stats(model, std::span<const EncodedPair>(pairs), decode.batch_size);

  const std::vector<std::string> predictions = decode_corpus(model, src_vocab, tgt_vocab, test, decode);
  std::vector<std::string> references;
  references.reserve(test.size());
  for (const auto& p : test.pairs) references.push_back(join(p.target));

  MetricReport r;
  r.experiment = experiment;
  r.perplexity = perplexity(stats);
  r.accuracy_pct = accuracy_pct(stats);
  r.examples = test.size();
  r.target_tokens = stats.tokens;
  r.phase = std::string(phase_name(model.phase()));
  r.decode_max_len = decode.max_len;
  r.score_mode = std::string(score_mode_name(mode));
  if (mode == ScoreMode::Bash) {
    r.bash_score = bash::bash_corpus_score(predictions, references);
    r.score_version = std::string(bash::kFormulaVersion);
  } else {
    r.bash_score = exact_match_score(predictions, references);
    r.score_version = std::string(kExactMatchVersion);
  }
  return r;
}

}  // namespace xfer
