#pragma once

// Transformer encoder-decoder with an explicit split between the core (every
// attention, feed-forward and layer-norm tensor plus the fixed sinusoidal
// position table) and the embeddings (source table and target table, the
// latter doubling as the output projection).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xfer/autodiff.hpp"
#include "xfer/error.hpp"
#include "xfer/optim.hpp"
#include "xfer/random.hpp"
#include "xfer/tensor.hpp"
#include "xfer/vocab.hpp"

namespace xfer {

struct ModelConfig {
  std::size_t layers = 6;
  std::size_t heads = 8;
  std::size_t d_model = 512;
  std::size_t d_ffn = 2048;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  std::size_t max_positions = 256;

  static ModelConfig base() { return ModelConfig{}; }

  static ModelConfig tiny() {
    ModelConfig c;
    c.layers = 2;
    c.heads = 4;
    c.d_model = 64;
    c.d_ffn = 128;
    return c;
  }

  void validate() const {
    require(layers > 0 && heads > 0 && d_model > 0 && d_ffn > 0 && max_positions > 0, ErrorKind::InvalidConfig,
            "model dimensions must be positive");
    require(d_model % heads == 0, ErrorKind::InvalidConfig,
            "d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(heads) + " heads");
    require(dropout >= 0.0 && dropout < 1.0, ErrorKind::InvalidConfig, "dropout must be in [0, 1)");
    require(label_smoothing >= 0.0 && label_smoothing < 1.0, ErrorKind::InvalidConfig,
            "label smoothing must be in [0, 1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Partition { Core, Embeddings };
enum class PartitionSelector { Core, Embeddings, All };
enum class Phase { Initialized, Pretrained, Finetuned };

inline std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::Initialized: return "initialized";
    case Phase::Pretrained: return "pretrained";
    case Phase::Finetuned: return "finetuned";
  }
  return "?";
}

inline Phase parse_phase(std::string_view s) {
  if (s == "initialized") return Phase::Initialized;
  if (s == "pretrained") return Phase::Pretrained;
  if (s == "finetuned") return Phase::Finetuned;
  fail(ErrorKind::CorruptCheckpoint, "unknown phase tag '" + std::string(s) + "'");
}

struct InitScheme {
  enum class Kind { Xavier, Uniform } kind = Kind::Xavier;
  double half_width = 0.1;

  static InitScheme xavier() { return {}; }
  static InitScheme uniform(double half_width) { return {Kind::Uniform, half_width}; }
  std::string name() const { return kind == Kind::Xavier ? "xavier" : "uniform"; }
};

inline constexpr std::string_view kSrcEmbedding = "embed.src";
inline constexpr std::string_view kTgtEmbedding = "embed.tgt";
inline constexpr std::string_view kPositions = "core.positions";

/// One padded, rectangular batch of id sequences.
struct Batch {
  std::size_t size = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<TokenId> src;      // size * src_len
  std::vector<TokenId> tgt_in;   // size * tgt_len, BOS-prefixed
  std::vector<TokenId> tgt_out;  // size * tgt_len, EOS-terminated gold
};

/// A training/evaluation example: source ids (EOS-terminated) and target ids
/// framed BOS ... EOS.
struct EncodedPair {
  std::vector<TokenId> src;
  std::vector<TokenId> tgt;
};

inline EncodedPair encode_pair(const Vocab& src_vocab, const Vocab& tgt_vocab, const Sentence& source,
                               const Sentence& target) {
  EncodedPair p{src_vocab.encode(source), tgt_vocab.encode(target, true)};
  p.src.push_back(kEos);
  return p;
}

inline Batch make_batch(std::span<const EncodedPair> pairs) {
  require(!pairs.empty(), ErrorKind::InvalidArgument, "empty batch");
  Batch b;
  b.size = pairs.size();
  for (const auto& p : pairs) {
    require(!p.src.empty() && p.tgt.size() >= 2, ErrorKind::InvalidArgument, "malformed encoded pair");
    b.src_len = std::max(b.src_len, p.src.size());
    b.tgt_len = std::max(b.tgt_len, p.tgt.size() - 1);
  }
  b.src.assign(b.size * b.src_len, kPad);
  b.tgt_in.assign(b.size * b.tgt_len, kPad);
  b.tgt_out.assign(b.size * b.tgt_len, kPad);
  for (std::size_t i = 0; i < b.size; ++i) {
    const auto& p = pairs[i];
    std::copy(p.src.begin(), p.src.end(), b.src.begin() + static_cast<std::ptrdiff_t>(i * b.src_len));
    std::copy(p.tgt.begin(), p.tgt.end() - 1, b.tgt_in.begin() + static_cast<std::ptrdiff_t>(i * b.tgt_len));
    std::copy(p.tgt.begin() + 1, p.tgt.end(), b.tgt_out.begin() + static_cast<std::ptrdiff_t>(i * b.tgt_len));
  }
  return b;
}

/// Dropout configuration for one forward pass. Each dropout site draws its
/// mask from (seed, site index), so a pass is replayable.
struct DropoutPlan {
  bool training = false;
  std::uint64_t seed = 0;
  std::uint64_t site = 0;

  std::uint64_t next() { return derive_seed(seed, site++); }
};

template <typename T>
class PartitionedModel {
 public:
  PartitionedModel() = default;

  enum class TensorKind { Weight, Zeros, Ones, Positions, Embedding };

  struct TensorSpec {
    std::string name;
    Shape shape;
    TensorKind kind;
  };

  /// The full tensor inventory implied by a config, in storage order.
  static std::vector<TensorSpec> inventory(const ModelConfig& config, std::size_t src_vocab_size,
                                           std::size_t tgt_vocab_size) {
    const std::size_t d = config.d_model, f = config.d_ffn;
    std::vector<TensorSpec> out;
    auto attention = [&](const std::string& p) {
      for (const char* w : {"wq", "wk", "wv", "wo"}) {
        out.push_back({p + "." + w, {d, d}, TensorKind::Weight});
        out.push_back({p + ".b" + std::string(w).substr(1), {d}, TensorKind::Zeros});
      }
    };
    auto norm = [&](const std::string& p) {
      out.push_back({p + ".gain", {d}, TensorKind::Ones});
      out.push_back({p + ".bias", {d}, TensorKind::Zeros});
    };
    auto ffn = [&](const std::string& p) {
      out.push_back({p + ".w1", {d, f}, TensorKind::Weight});
      out.push_back({p + ".b1", {f}, TensorKind::Zeros});
      out.push_back({p + ".w2", {f, d}, TensorKind::Weight});
      out.push_back({p + ".b2", {d}, TensorKind::Zeros});
    };
    for (std::size_t l = 0; l < config.layers; ++l) {
      const std::string p = "enc." + std::to_string(l);
      norm(p + ".ln1");
      attention(p + ".self_attn");
      norm(p + ".ln2");
      ffn(p + ".ffn");
    }
    norm("enc.final_ln");
    for (std::size_t l = 0; l < config.layers; ++l) {
      const std::string p = "dec." + std::to_string(l);
      norm(p + ".ln1");
      attention(p + ".self_attn");
      norm(p + ".ln2");
      attention(p + ".cross_attn");
      norm(p + ".ln3");
      ffn(p + ".ffn");
    }
    norm("dec.final_ln");
    out.push_back({std::string(kPositions), {config.max_positions, d}, TensorKind::Positions});
    out.push_back({std::string(kSrcEmbedding), {src_vocab_size, d}, TensorKind::Embedding});
    out.push_back({std::string(kTgtEmbedding), {tgt_vocab_size, d}, TensorKind::Embedding});
    return out;
  }

  /// Builds and initializes a model. Weight matrices follow `init`; biases and
  /// layer-norm offsets start at zero and gains at one; the position table is
  /// sinusoidal and never trainable.
  static PartitionedModel build(const ModelConfig& config, std::size_t src_vocab_size, std::size_t tgt_vocab_size,
                                InitScheme init, std::uint64_t seed) {
    config.validate();
    require(src_vocab_size >= kNumSpecials && tgt_vocab_size >= kNumSpecials, ErrorKind::InvalidConfig,
            "vocabularies must hold at least the special tokens");
    PartitionedModel m;
    m.config_ = config;
    m.init_ = init;
    for (auto& spec : inventory(config, src_vocab_size, tgt_vocab_size)) {
      Tensor<T> value;
      switch (spec.kind) {
        case TensorKind::Weight: value = m.init_matrix(spec.shape, derive_seed(seed, m.params_.size())); break;
        case TensorKind::Zeros: value = Tensor<T>(spec.shape); break;
        case TensorKind::Ones: value = Tensor<T>(spec.shape, T{1}); break;
        case TensorKind::Positions: value = sinusoid_table(spec.shape[0], spec.shape[1]); break;
        case TensorKind::Embedding:
          value = m.init_matrix(spec.shape, embedding_seed(seed, spec.name));
          break;
      }
      m.add(spec.name, std::move(value));
      if (spec.kind == TensorKind::Positions) m.params_.back().trainable = false;
    }
    return m;
  }

  const ModelConfig& config() const { return config_; }
  const InitScheme& init_scheme() const { return init_; }
  Phase phase() const { return phase_; }
  void set_phase(Phase p) { phase_ = p; }
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  std::size_t src_vocab_size() const { return param(kSrcEmbedding).value.dim(0); }
  std::size_t tgt_vocab_size() const { return param(kTgtEmbedding).value.dim(0); }

  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }

  static Partition partition_of(std::string_view name) {
    return name.starts_with("embed.") ? Partition::Embeddings : Partition::Core;
  }

  // Fixed tables are part of the core but never learn.
  static bool is_fixed(std::string_view name) { return name == kPositions; }

  const Parameter<T>& param(std::string_view name) const {
    auto it = index_.find(std::string(name));
    require(it != index_.end(), ErrorKind::InvalidArgument, "no parameter named '" + std::string(name) + "'");
    return params_[it->second];
  }
  Parameter<T>& param(std::string_view name) {
    return const_cast<Parameter<T>&>(std::as_const(*this).param(name));
  }

  std::vector<std::string> names(Partition part) const {
    std::vector<std::string> out;
    for (const auto& p : params_) {
      if (partition_of(p.name) == part) out.push_back(p.name);
    }
    return out;
  }

  /// Number of learnable scalars (the fixed position table is excluded).
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
      if (!is_fixed(p.name)) n += p.value.size();
    }
    return n;
  }

  /// Hash over every tensor of one partition, in inventory order.
  std::uint64_t partition_checksum(Partition part) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : params_) {
      if (partition_of(p.name) != part) continue;
      h = fnv1a(p.name.data(), p.name.size(), h);
      h = checksum(p.value, h);
    }
    return h;
  }

  void set_trainable(PartitionSelector which, bool flag) {
    for (auto& p : params_) {
      if (is_fixed(p.name)) continue;
      const Partition part = partition_of(p.name);
      if (which == PartitionSelector::All || (which == PartitionSelector::Core) == (part == Partition::Core)) {
        p.trainable = flag;
      }
    }
  }

  /// Replaces both embedding tables with freshly Xavier-initialized ones of
  /// the given sizes. Core tensors are left untouched.
  PartitionedModel swap_embeddings(std::size_t new_src_vocab_size, std::size_t new_tgt_vocab_size,
                                   std::uint64_t seed) const {
    require(phase_ == Phase::Pretrained, ErrorKind::PhaseError,
            "embedding swap needs a pretrained model, got phase '" + std::string(phase_name(phase_)) + "'");
    PartitionedModel out = *this;
    const std::size_t d = config_.d_model;
    out.param(kSrcEmbedding).value = xavier_init<T>({new_src_vocab_size, d}, embedding_seed(seed, kSrcEmbedding));
    out.param(kTgtEmbedding).value = xavier_init<T>({new_tgt_vocab_size, d}, embedding_seed(seed, kTgtEmbedding));
    return out;
  }

  /// Binds every parameter into a tape, trainable ones as gradient leaves.
  std::vector<ad::Var<T>> bind(ad::Tape<T>& tape) const {
    std::vector<ad::Var<T>> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) vars.push_back(tape.borrow(p.value, p.trainable));
    return vars;
  }

  /// Encoder output [batch*src_len, d].
  ad::Var<T> encode(ad::Tape<T>& tape, const std::vector<ad::Var<T>>& vars, const Batch& b, DropoutPlan& drop) const {
    check_lengths(b.src_len, "source");
    const Binding w{*this, vars};
    const std::size_t B = b.size, L = b.src_len;
    ad::Var<T> x = embed(tape, w, w(kSrcEmbedding), b.src, B, L, drop);
    const ad::Var<T> mask = tape.constant(attention_mask(b.src, b.src, B, L, L, false));
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = "enc." + std::to_string(l);
      ad::Var<T> h = norm(w, p + ".ln1", x);
      x = ad::add(x, dropout(attend(w, p + ".self_attn", h, h, mask, B, L, L), drop));
      h = norm(w, p + ".ln2", x);
      x = ad::add(x, dropout(feed_forward(w, p + ".ffn", h, drop), drop));
    }
    return norm(w, "enc.final_ln", x);
  }

  /// Decoder logits [batch*tgt_len, tgt_vocab] given encoder memory.
  ad::Var<T> decode(ad::Tape<T>& tape, const std::vector<ad::Var<T>>& vars, ad::Var<T> memory,
                    std::span<const TokenId> src, std::span<const TokenId> tgt_in, std::size_t batch,
                    std::size_t src_len, std::size_t tgt_len, DropoutPlan& drop) const {
    check_lengths(tgt_len, "target");
    const Binding w{*this, vars};
    ad::Var<T> x = embed(tape, w, w(kTgtEmbedding), tgt_in, batch, tgt_len, drop);
    const ad::Var<T> self_mask = tape.constant(attention_mask(tgt_in, tgt_in, batch, tgt_len, tgt_len, true));
    const ad::Var<T> cross_mask = tape.constant(attention_mask(tgt_in, src, batch, tgt_len, src_len, false));
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = "dec." + std::to_string(l);
      ad::Var<T> h = norm(w, p + ".ln1", x);
      x = ad::add(x, dropout(attend(w, p + ".self_attn", h, h, self_mask, batch, tgt_len, tgt_len), drop));
      h = norm(w, p + ".ln2", x);
      x = ad::add(x, dropout(attend(w, p + ".cross_attn", h, memory, cross_mask, batch, tgt_len, src_len), drop));
      h = norm(w, p + ".ln3", x);
      x = ad::add(x, dropout(feed_forward(w, p + ".ffn", h, drop), drop));
    }
    x = norm(w, "dec.final_ln", x);
    // Output projection shares storage with the target embedding table.
    return ad::matmul(x, ad::transpose(w(kTgtEmbedding)));
  }

  /// Teacher-forced logits [batch*tgt_len, tgt_vocab].
  ad::Var<T> forward(ad::Tape<T>& tape, const std::vector<ad::Var<T>>& vars, const Batch& b, DropoutPlan& drop) const {
    const ad::Var<T> memory = encode(tape, vars, b, drop);
    return decode(tape, vars, memory, b.src, b.tgt_in, b.size, b.src_len, b.tgt_len, drop);
  }

  /// Teacher-forced logits in eval mode (no dropout, no gradients).
  Tensor<T> logits(const Batch& b) const {
    ad::Tape<T> tape;
    auto vars = bind_frozen(tape);
    DropoutPlan drop;
    return forward(tape, vars, b, drop).value();
  }

  /// Greedy decoding from BOS: emits the argmax token (lowest id on ties)
  /// until EOS or max_len tokens. Results omit the leading BOS and the final EOS.
  std::vector<std::vector<TokenId>> greedy_decode(std::span<const std::vector<TokenId>> sources,
                                                  std::size_t max_len) const {
    require(max_len >= 1, ErrorKind::InvalidArgument, "max_len must be at least 1");
    std::vector<std::vector<TokenId>> out(sources.size());
    if (sources.empty()) return out;
    const std::size_t limit = std::min(max_len, config_.max_positions);
    Batch b;
    b.size = sources.size();
    for (const auto& s : sources) {
      require(!s.empty(), ErrorKind::InvalidArgument, "empty source sequence");
      b.src_len = std::max(b.src_len, s.size());
    }
    b.src.assign(b.size * b.src_len, kPad);
    for (std::size_t i = 0; i < b.size; ++i) {
      std::copy(sources[i].begin(), sources[i].end(), b.src.begin() + static_cast<std::ptrdiff_t>(i * b.src_len));
    }
    ad::Tape<T> tape;
    const auto vars = bind_frozen(tape);
    DropoutPlan drop;
    const ad::Var<T> memory = encode(tape, vars, b, drop);
    std::vector<bool> done(b.size, false);
    std::vector<std::vector<TokenId>> prefix(b.size, std::vector<TokenId>{kBos});
    const std::size_t vocab = tgt_vocab_size();
    for (std::size_t t = 0; t < limit; ++t) {
      const std::size_t len = t + 1;
      std::vector<TokenId> tgt_in(b.size * len, kPad);
      for (std::size_t i = 0; i < b.size; ++i) {
        for (std::size_t j = 0; j < len; ++j) tgt_in[i * len + j] = j < prefix[i].size() ? prefix[i][j] : kPad;
      }
      const ad::Var<T> logits = decode(tape, vars, memory, b.src, tgt_in, b.size, b.src_len, len, drop);
      const auto lv = logits.value().data();
      bool all_done = true;
      for (std::size_t i = 0; i < b.size; ++i) {
        if (done[i]) continue;
        const T* row = lv.data() + (i * len + t) * vocab;
        const auto best = static_cast<TokenId>(std::max_element(row, row + vocab) - row);
        if (best == kEos) {
          done[i] = true;
        } else {
          out[i].push_back(best);
          prefix[i].push_back(best);
          all_done = false;
        }
      }
      if (all_done) break;
    }
    return out;
  }

  friend bool operator==(const PartitionedModel& a, const PartitionedModel& b) {
    if (!(a.config_ == b.config_) || a.phase_ != b.phase_ || a.step_ != b.step_ || a.params_.size() != b.params_.size()) {
      return false;
    }
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      const auto& x = a.params_[i];
      const auto& y = b.params_[i];
      if (x.name != y.name || x.trainable != y.trainable || !(x.value == y.value)) return false;
    }
    return true;
  }

  // Adds a parameter during deserialization; names must follow the inventory.
  void adopt(Parameter<T> p) {
    index_[p.name] = params_.size();
    params_.push_back(std::move(p));
  }
  void set_config(const ModelConfig& c) { config_ = c; }
  void set_init_scheme(const InitScheme& s) { init_ = s; }

  static Tensor<T> sinusoid_table(std::size_t positions, std::size_t d) {
    Tensor<T> t(Shape{positions, d});
    for (std::size_t pos = 0; pos < positions; ++pos) {
      for (std::size_t i = 0; i < d; i += 2) {
        const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
        t.at(pos, i) = static_cast<T>(std::sin(angle));
        if (i + 1 < d) t.at(pos, i + 1) = static_cast<T>(std::cos(angle));
      }
    }
    return t;
  }

 private:
  struct Binding {
    const PartitionedModel& model;
    const std::vector<ad::Var<T>>& vars;
    ad::Var<T> operator()(std::string_view name) const {
      return vars[model.index_.at(std::string(name))];
    }
  };

  std::vector<ad::Var<T>> bind_frozen(ad::Tape<T>& tape) const {
    std::vector<ad::Var<T>> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) vars.push_back(tape.borrow(p.value, false));
    return vars;
  }

  static std::uint64_t embedding_seed(std::uint64_t seed, std::string_view name) {
    return derive_seed(seed, name == kSrcEmbedding ? 0xE5 : 0xE7);
  }

  void add(std::string name, Tensor<T> value) { adopt(Parameter<T>{std::move(name), std::move(value), true}); }

  Tensor<T> init_matrix(const Shape& shape, std::uint64_t seed) const {
    return init_.kind == InitScheme::Kind::Xavier ? xavier_init<T>(shape, seed)
                                                  : uniform_init<T>(shape, seed, init_.half_width);
  }

  void check_lengths(std::size_t len, const char* what) const {
    require(len <= config_.max_positions, ErrorKind::SequenceTooLong,
            std::string(what) + " length " + std::to_string(len) + " exceeds max_positions " +
                std::to_string(config_.max_positions));
  }

  ad::Var<T> dropout(ad::Var<T> x, DropoutPlan& drop) const {
    if (!drop.training || config_.dropout == 0.0) return x;
    return ad::dropout(x, 1.0 - config_.dropout, drop.next(), true);
  }

  ad::Var<T> embed(ad::Tape<T>& tape, const Binding& w, ad::Var<T> table, std::span<const TokenId> ids,
                   std::size_t batch, std::size_t len, DropoutPlan& drop) const {
    (void)tape;
    std::vector<TokenId> positions(batch * len);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<TokenId>(i % len);
    const T scale = static_cast<T>(std::sqrt(static_cast<double>(config_.d_model)));
    ad::Var<T> x = ad::scale(ad::embedding_lookup(table, ids), scale);
    x = ad::add(x, ad::embedding_lookup(w(kPositions), std::span<const TokenId>(positions)));
    return dropout(x, drop);
  }

  ad::Var<T> norm(const Binding& w, const std::string& p, ad::Var<T> x) const {
    return ad::layer_norm(x, w(p + ".gain"), w(p + ".bias"));
  }

  ad::Var<T> linear(const Binding& w, const std::string& weight, const std::string& bias, ad::Var<T> x) const {
    return ad::add(ad::matmul(x, w(weight)), w(bias));
  }

  ad::Var<T> feed_forward(const Binding& w, const std::string& p, ad::Var<T> x, DropoutPlan& drop) const {
    ad::Var<T> h = ad::relu(linear(w, p + ".w1", p + ".b1", x));
    return linear(w, p + ".w2", p + ".b2", dropout(h, drop));
  }

  // Scaled dot-product multi-head attention. `mask` is additive, [B*H, Lq, Lk].
  ad::Var<T> attend(const Binding& w, const std::string& p, ad::Var<T> query_in, ad::Var<T> kv_in, ad::Var<T> mask,
                    std::size_t batch, std::size_t lq, std::size_t lk) const {
    const std::size_t H = config_.heads;
    const ad::Var<T> q = ad::split_heads(linear(w, p + ".wq", p + ".bq", query_in), batch, lq, H);
    const ad::Var<T> k = ad::split_heads(linear(w, p + ".wk", p + ".bk", kv_in), batch, lk, H);
    const ad::Var<T> v = ad::split_heads(linear(w, p + ".wv", p + ".bv", kv_in), batch, lk, H);
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(config_.d_model / H)));
    ad::Var<T> scores = ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt);
    const ad::Var<T> probs = ad::softmax_row(ad::add(scores, mask));
    const ad::Var<T> ctx = ad::merge_heads(ad::matmul(probs, v), batch, H);
    return linear(w, p + ".wo", p + ".bo", ctx);
  }

  // Additive mask: key positions holding PAD, and future positions when causal,
  // get a large negative score.
  Tensor<T> attention_mask(std::span<const TokenId> queries, std::span<const TokenId> keys, std::size_t batch,
                           std::size_t lq, std::size_t lk, bool causal) const {
    (void)queries;
    const std::size_t H = config_.heads;
    Tensor<T> mask(Shape{batch * H, lq, lk});
    const T blocked = static_cast<T>(-1e9);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t qi = 0; qi < lq; ++qi) {
        for (std::size_t ki = 0; ki < lk; ++ki) {
          const bool off = keys[b * lk + ki] == kPad || (causal && ki > qi);
          if (!off) continue;
          for (std::size_t h = 0; h < H; ++h) mask.data()[((b * H + h) * lq + qi) * lk + ki] = blocked;
        }
      }
    }
    return mask;
  }

  ModelConfig config_;
  InitScheme init_;
  Phase phase_ = Phase::Initialized;
  std::uint64_t step_ = 0;
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace xfer
