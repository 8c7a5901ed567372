#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "xfer/metrics.hpp"
#include "xfer/trainer.hpp"

using namespace xfer;
using xfer::testing::kind_of;

namespace {

using Model = PartitionedModel<float>;

ModelConfig micro() {
  ModelConfig c;
  c.layers = 1;
  c.heads = 2;
  c.d_model = 8;
  c.d_ffn = 16;
  c.max_positions = 32;
  return c;
}

EncodedPair pair_of(std::vector<TokenId> tgt_body) {
  EncodedPair p;
  p.src = {4, kEos};
  p.tgt.push_back(kBos);
  p.tgt.insert(p.tgt.end(), tgt_body.begin(), tgt_body.end());
  p.tgt.push_back(kEos);
  return p;
}

std::vector<EncodedPair> random_pairs(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<EncodedPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    EncodedPair p;
    const std::size_t ls = 1 + rng.below(7), lt = 1 + rng.below(7);
    for (std::size_t k = 0; k < ls; ++k) p.src.push_back(static_cast<TokenId>(kNumSpecials + rng.below(vocab - 4)));
    p.src.push_back(kEos);
    p.tgt.push_back(kBos);
    for (std::size_t k = 0; k < lt; ++k) p.tgt.push_back(static_cast<TokenId>(kNumSpecials + rng.below(vocab - 4)));
    p.tgt.push_back(kEos);
    out.push_back(std::move(p));
  }
  return out;
}

Tensor<double> zeros_for(const Batch& b, std::size_t vocab) { return Tensor<double>(Shape{b.tgt_out.size(), vocab}); }

BitextCorpus copy_corpus(std::size_t n, std::uint64_t seed) {
  SyntheticOptions o;
  o.n = n;
  o.vocab_size = 10;
  o.len_min = 2;
  o.len_max = 5;
  o.seed = seed;
  return gen_copy(o);
}

}  // namespace

TEST(PerplexityTest, UniformLogitsGiveVocabularySize) {
  const auto pairs = random_pairs(37, 23, 1);
  for (std::size_t vocab : {23u, 50u, 1000u}) {
    const TokenStats s = token_stats<double>(pairs, [&](const Batch& b) { return zeros_for(b, vocab); }, 8);
    EXPECT_NEAR(perplexity(s), static_cast<double>(vocab), 1e-9 * vocab);
    // Ties break to id 0 (PAD), which is never gold.
    EXPECT_EQ(accuracy_pct(s), 0.0);
  }
}

TEST(PerplexityTest, HandExampleSqrtEight) {
  // One pair; gold ids 4 then EOS with probabilities 0.5 and 0.25 over V=5.
  const std::vector<EncodedPair> pairs{pair_of({4})};
  auto logits = [](const Batch& b) {
    Tensor<double> t(Shape{b.tgt_out.size(), 5});
    for (std::size_t k = 0; k < 5; ++k) {
      t.at(0, k) = std::log(k == 4 ? 0.5 : 0.125);
      t.at(1, k) = std::log(k == kEos ? 0.25 : 0.1875);
    }
    return t;
  };
  const TokenStats s = token_stats<double>(pairs, logits);
  EXPECT_EQ(s.tokens, 2u);
  EXPECT_NEAR(perplexity(s), std::sqrt(8.0), 1e-6);
  EXPECT_NEAR(perplexity(s), std::exp((std::log(2.0) + std::log(4.0)) / 2), 1e-12);
  // Gold is the argmax on both rows (0.5 > 0.125, 0.25 > 0.1875).
  EXPECT_EQ(accuracy_pct(s), 100.0);
}

TEST(PerplexityTest, OracleModel) {
  const auto pairs = random_pairs(20, 12, 2);
  auto oracle = [](const Batch& b) {
    Tensor<double> t(Shape{b.tgt_out.size(), 12}, -1e4);
    for (std::size_t r = 0; r < b.tgt_out.size(); ++r) t.at(r, static_cast<std::size_t>(b.tgt_out[r])) = 0.0;
    return t;
  };
  const TokenStats s = token_stats<double>(pairs, oracle);
  EXPECT_DOUBLE_EQ(perplexity(s), 1.0);
  EXPECT_DOUBLE_EQ(accuracy_pct(s), 100.0);
}

TEST(AccuracyTest, ConstantModelHalfCorrect) {
  // Gold tokens: (k, EOS), (k, EOS), (k, k, 5, EOS); exactly half are k.
  const TokenId k = 7;
  const std::vector<EncodedPair> pairs{pair_of({k}), pair_of({k}), pair_of({k, k, 5})};
  auto constant = [&](const Batch& b) {
    Tensor<double> t(Shape{b.tgt_out.size(), 10});
    for (std::size_t r = 0; r < b.tgt_out.size(); ++r) t.at(r, static_cast<std::size_t>(k)) = 1.0;
    return t;
  };
  EXPECT_DOUBLE_EQ(accuracy_pct(token_stats<double>(pairs, constant, 2)), 50.0);
}

TEST(AccuracyTest, EmptyCorpusErrors) {
  EncodedPair all_pad{{4, kEos}, {kBos, kPad, kPad}};
  const std::vector<EncodedPair> pairs{all_pad, all_pad};
  const TokenStats s = token_stats<double>(pairs, [](const Batch& b) { return zeros_for(b, 6); });
  EXPECT_EQ(s.tokens, 0u);
  EXPECT_EQ(kind_of([&] { perplexity(s); }), ErrorKind::EmptyCorpus);
  EXPECT_EQ(kind_of([&] { accuracy_pct(s); }), ErrorKind::EmptyCorpus);
  EXPECT_EQ(kind_of([] { perplexity(TokenStats{}); }), ErrorKind::EmptyCorpus);
}

TEST(AccuracyTest, MismatchedLogitShapeRejected) {
  const std::vector<EncodedPair> pairs{pair_of({4, 5})};
  EXPECT_EQ(kind_of([&] { token_stats<double>(pairs, [](const Batch&) { return Tensor<double>(Shape{1, 6}); }); }),
            ErrorKind::ShapeError);
  EXPECT_EQ(kind_of([&] { token_stats<double>(pairs, [](const Batch& b) { return zeros_for(b, 5); }); }),
            ErrorKind::InvalidId);
}

TEST(PerplexityTest, MatchesStreamingImplementation) {
  // Independent route: one token at a time, running mean of -log softmax.
  const Model m = Model::build(micro(), 15, 13, InitScheme::xavier(), 4);
  const auto pairs = random_pairs(25, 13, 3);
  double mean = 0.0;
  std::size_t n = 0;
  for (const auto& p : pairs) {
    const Batch b = make_batch(std::span<const EncodedPair>(&p, 1));
    const Tensor<float> lg = m.logits(b);
    for (std::size_t r = 0; r < b.tgt_out.size(); ++r) {
      std::vector<double> row(lg.dim(1));
      for (std::size_t k = 0; k < row.size(); ++k) row[k] = lg.at(r, k);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - mx);
      const double nll = mx + std::log(z) - row[static_cast<std::size_t>(b.tgt_out[r])];
      ++n;
      mean += (nll - mean) / static_cast<double>(n);
    }
  }
  const TokenStats s = token_stats(m, std::span<const EncodedPair>(pairs), 1);
  EXPECT_EQ(s.tokens, n);
  EXPECT_NEAR(perplexity(s), std::exp(mean), 1e-12 * std::exp(mean));
  EXPECT_NEAR(std::log(perplexity(s)), mean_nll(m, std::span<const EncodedPair>(pairs), 1), 1e-12);
}

TEST(AccuracyTest, InvariantUnderBatchingAndOrder) {
  const Model m = Model::build(micro(), 15, 13, InitScheme::xavier(), 5);
  auto pairs = random_pairs(40, 13, 4);
  const TokenStats ref = token_stats(m, std::span<const EncodedPair>(pairs), 64);
  for (std::size_t bs : {1u, 3u, 7u}) {
    const TokenStats s = token_stats(m, std::span<const EncodedPair>(pairs), bs);
    EXPECT_EQ(s.correct, ref.correct) << bs;
    EXPECT_EQ(s.tokens, ref.tokens) << bs;
    EXPECT_NEAR(perplexity(s), perplexity(ref), 1e-5 * perplexity(ref)) << bs;
  }
  std::reverse(pairs.begin(), pairs.end());
  Rng rng(9);
  rng.shuffle(pairs);
  const TokenStats shuffled = token_stats(m, std::span<const EncodedPair>(pairs), 5);
  EXPECT_EQ(shuffled.correct, ref.correct);
  EXPECT_NEAR(perplexity(shuffled), perplexity(ref), 1e-5 * perplexity(ref));
}

TEST(MetricReportTest, JsonRoundTripIsLossless) {
  MetricReport r;
  r.experiment = "copy A -> B";
  r.perplexity = 1.0 + 1.0 / 3.0;
  r.accuracy_pct = 99.123456789012345;
  r.bash_score = -12.5;
  r.examples = 100;
  r.target_tokens = 812;
  r.phase = "finetuned";
  r.decode_max_len = 40;
  EXPECT_EQ(MetricReport::parse(r.to_json_text()), r);
  const auto j = r.to_json();
  for (const char* key : {"ppl", "accuracy_pct", "bash_score", "examples", "target_tokens", "decode", "score_version",
                          "ppl_base", "accuracy_mode", "phase"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["ppl_base"], "e");
  EXPECT_EQ(j["accuracy_mode"], "teacher_forced");
  EXPECT_EQ(j["decode"], "greedy");
}

TEST(MetricReportTest, TsvRowOrder) {
  MetricReport r;
  r.experiment = "xavier";
  r.perplexity = 2.5;
  r.accuracy_pct = 75;
  r.bash_score = 10;
  EXPECT_EQ(r.tsv_row(), "xavier\t2.5\t75\t10");
}

TEST(MetricReportTest, InvalidReportsRejected) {
  MetricReport r;
  r.perplexity = 2;
  nlohmann::ordered_json j = r.to_json();
  j.erase("ppl");
  EXPECT_EQ(kind_of([&] { MetricReport::from_json(j); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([] { MetricReport::parse("{not json"); }), ErrorKind::ParseError);
  r.perplexity = 0.5;
  EXPECT_EQ(kind_of([&] { MetricReport::parse(r.to_json_text()); }), ErrorKind::InvalidArgument);
  r.perplexity = 2;
  r.accuracy_pct = 101;
  EXPECT_EQ(kind_of([&] { r.validate(); }), ErrorKind::InvalidArgument);
}

TEST(ExactMatchTest, Basic) {
  const std::vector<std::string> refs{"a b", "c", "d e f", "g"};
  const std::vector<std::string> preds{"a  b", "x", "d e f", ""};
  EXPECT_DOUBLE_EQ(exact_match_score(preds, refs), 50.0);
  EXPECT_EQ(kind_of([&] { exact_match_score(std::span(preds).first(2), refs); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(parse_score_mode("bash"), ScoreMode::Bash);
  EXPECT_EQ(parse_score_mode("exact_match"), ScoreMode::ExactMatch);
  EXPECT_EQ(kind_of([] { parse_score_mode("bleu"); }), ErrorKind::InvalidArgument);
}

TEST(EvaluateFullTest, ComposesSubMetricsDeterministically) {
  const BitextCorpus test = copy_corpus(30, 6);
  const Vocab sv = Vocab::build(test.sources());
  const Vocab tv = Vocab::build(test.targets());
  Model m = Model::build(micro(), sv.size(), tv.size(), InitScheme::xavier(), 8);
  m.set_phase(Phase::Finetuned);
  const DecodeConfig dc{16, 7};
  const MetricReport r = evaluate_full(m, sv, tv, test, dc, ScoreMode::ExactMatch, "copy");

  std::vector<EncodedPair> pairs;
  for (const auto& p : test.pairs) pairs.push_back(encode_pair(sv, tv, p.source, p.target));
  const TokenStats s = token_stats(m, std::span<const EncodedPair>(pairs));
  EXPECT_NEAR(r.perplexity, perplexity(s), 1e-6 * r.perplexity);
  EXPECT_DOUBLE_EQ(r.accuracy_pct, accuracy_pct(s));
  const auto preds = decode_corpus(m, sv, tv, test, dc);
  std::vector<std::string> refs;
  for (const auto& p : test.pairs) refs.push_back(join(p.target));
  EXPECT_DOUBLE_EQ(r.bash_score, exact_match_score(preds, refs));
  EXPECT_EQ(r.examples, 30u);
  EXPECT_EQ(r.target_tokens, s.tokens);
  EXPECT_EQ(r.score_mode, "exact_match");
  EXPECT_EQ(r.score_version, "exact-match/1");
  EXPECT_EQ(r.phase, "finetuned");
  EXPECT_EQ(r.experiment, "copy");

  EXPECT_EQ(evaluate_full(m, sv, tv, test, dc, ScoreMode::ExactMatch, "copy"), r);
}

TEST(EvaluateFullTest, BashModeOnShellTargets) {
  BitextCorpus test;
  test.pairs = {{split_whitespace("list files"), split_whitespace("ls -l")},
                {split_whitespace("find python files"), split_whitespace("find . -name *.py")},
                {split_whitespace("count lines"), split_whitespace("wc -l file")}};
  const Vocab sv = Vocab::build(test.sources());
  const Vocab tv = Vocab::build(test.targets());
  Model m = Model::build(micro(), sv.size(), tv.size(), InitScheme::xavier(), 1);
  m.set_phase(Phase::Finetuned);
  const MetricReport r = evaluate_full(m, sv, tv, test, DecodeConfig{}, ScoreMode::Bash);
  EXPECT_GE(r.bash_score, -100.0);
  EXPECT_LE(r.bash_score, 100.0);
  EXPECT_EQ(r.score_version, "bash-sim/1");
  const auto preds = decode_corpus(m, sv, tv, test, DecodeConfig{});
  std::vector<std::string> refs;
  for (const auto& p : test.pairs) refs.push_back(join(p.target));
  EXPECT_DOUBLE_EQ(r.bash_score, bash::bash_corpus_score(preds, refs));
}

TEST(EvaluateFullTest, PhaseAndVocabularyChecks) {
  const BitextCorpus test = copy_corpus(5, 1);
  const Vocab sv = Vocab::build(test.sources());
  const Vocab tv = Vocab::build(test.targets());
  Model m = Model::build(micro(), sv.size(), tv.size(), InitScheme::xavier(), 8);
  EXPECT_EQ(kind_of([&] { evaluate_full(m, sv, tv, test, {}, ScoreMode::ExactMatch); }), ErrorKind::PhaseError);
  EXPECT_EQ(evaluate_full(m, sv, tv, test, {}, ScoreMode::ExactMatch, "", true).phase, "initialized");
  m.set_phase(Phase::Finetuned);
  const Vocab other = Vocab::build({split_whitespace("q")});
  EXPECT_EQ(kind_of([&] { evaluate_full(m, other, tv, test, {}, ScoreMode::ExactMatch); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { evaluate_full(m, sv, tv, BitextCorpus{}, {}, ScoreMode::ExactMatch); }), ErrorKind::EmptyCorpus);
}
