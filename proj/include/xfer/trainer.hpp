#pragma once

// Mini-batch training loop: Adam with warmup/inverse-sqrt schedule, seeded
// batch order and dropout, periodic validation with early stopping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "xfer/autodiff.hpp"
#include "xfer/error.hpp"
#include "xfer/model.hpp"
#include "xfer/optim.hpp"
#include "xfer/random.hpp"

namespace xfer {

struct TrainOptions {
  std::uint64_t max_steps = 5000;
  std::size_t batch_size = 64;
  AdamHyper adam;
  std::uint64_t warmup = 400;
  std::uint64_t eval_every = 250;
  std::size_t patience = 5;  // 0 disables early stopping
  std::uint64_t order_seed = 0;
  std::uint64_t dropout_seed = 0;
  bool restore_best = true;
  // Pairs are sorted by length within windows of this many batches to cut
  // padding; batch order is then shuffled. 0 or 1 keeps plain shuffling.
  std::size_t bucket_window = 16;
};

/// Batches for one epoch: a seeded shuffle, optional length bucketing, then a
/// seeded shuffle of the batch order.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::span<const EncodedPair> pairs, std::size_t batch_size,
                                                           std::size_t bucket_window, std::uint64_t seed) {
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  if (bucket_window > 1) {
    const std::size_t window = batch_size * bucket_window;
    for (std::size_t start = 0; start < order.size(); start += window) {
      const auto first = order.begin() + static_cast<std::ptrdiff_t>(start);
      const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + window));
      std::stable_sort(first, last, [&](std::size_t a, std::size_t b) {
        return std::max(pairs[a].src.size(), pairs[a].tgt.size()) < std::max(pairs[b].src.size(), pairs[b].tgt.size());
      });
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch_size)));
  }
  if (bucket_window > 1) rng.shuffle(batches);
  return batches;
}

struct TrainResult {
  std::uint64_t steps = 0;
  bool stopped_early = false;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::uint64_t best_step = 0;
  double last_train_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<std::uint64_t, double>> val_history;
};

/// Mean unsmoothed per-token NLL over a set of pairs, in eval mode.
template <typename T>
double mean_nll(const PartitionedModel<T>& model, std::span<const EncodedPair> pairs, std::size_t batch_size = 64) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    const auto chunk = pairs.subspan(start, std::min(batch_size, pairs.size() - start));
    const Batch b = make_batch(chunk);
    const Tensor<T> logits = model.logits(b);
    const std::size_t vocab = logits.dim(1);
    for (std::size_t r = 0; r < b.tgt_out.size(); ++r) {
      if (b.tgt_out[r] == kPad) continue;
      const T* row = logits.data().data() + r * vocab;
      double mx = row[0];
      for (std::size_t k = 1; k < vocab; ++k) mx = std::max(mx, static_cast<double>(row[k]));
      double z = 0.0;
      for (std::size_t k = 0; k < vocab; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
      total += std::log(z) + mx - static_cast<double>(row[b.tgt_out[r]]);
      ++tokens;
    }
  }
  require(tokens > 0, ErrorKind::EmptyCorpus, "no target tokens to score");
  return total / static_cast<double>(tokens);
}

/// One optimization step on a batch. Returns the (smoothed) training loss.
template <typename T>
double train_step(PartitionedModel<T>& model, const Batch& batch, AdamState<T>& adam, double lr,
                  std::uint64_t dropout_seed) {
  ad::Tape<T> tape;
  const auto vars = model.bind(tape);
  DropoutPlan drop{true, dropout_seed, 0};
  const ad::Var<T> logits = model.forward(tape, vars, batch, drop);
  const ad::Var<T> loss = ad::cross_entropy_label_smoothed(logits, std::span<const TokenId>(batch.tgt_out),
                                                           model.config().label_smoothing, kPad);
  tape.backward(loss);
  std::vector<Parameter<T>*> params;
  std::vector<Tensor<T>> grads;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    params.push_back(&model.params()[i]);
    grads.push_back(model.params()[i].trainable && tape.has_grad(vars[i]) ? tape.grad(vars[i]) : Tensor<T>());
  }
  adam_step<T>(params, grads, adam, lr);
  return static_cast<double>(loss.value()[0]);
}

/// Trains `model` in place. Frozen tensors are never modified. With
/// restore_best, the parameters from the best validation evaluation are kept.
template <typename T>
TrainResult train(PartitionedModel<T>& model, std::span<const EncodedPair> train_set, std::span<const EncodedPair> val_set,
                  const TrainOptions& opt, std::ostream* log = nullptr) {
  TrainResult result;
  if (opt.max_steps == 0) return result;
  require(!train_set.empty(), ErrorKind::EmptyCorpus, "no training pairs");
  require(opt.batch_size > 0, ErrorKind::InvalidArgument, "batch size must be positive");

  AdamState<T> adam;
  adam.hyper = opt.adam;
  std::vector<std::vector<std::size_t>> batches;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;
  std::size_t since_best = 0;
  std::vector<Parameter<T>> best_params;
  const std::uint64_t base_step = model.step();

  for (std::uint64_t step = 1; step <= opt.max_steps; ++step) {
    if (cursor >= batches.size()) {
      batches = epoch_batches(train_set, opt.batch_size, opt.bucket_window, derive_seed(opt.order_seed, epoch++));
      cursor = 0;
    }
    std::vector<EncodedPair> chunk;
    for (std::size_t idx : batches[cursor++]) chunk.push_back(train_set[idx]);
    const Batch batch = make_batch(chunk);
    const double lr = warmup_inverse_sqrt(opt.adam.lr, step, opt.warmup);
    double loss = 0.0;
    try {
      loss = train_step(model, batch, adam, lr, derive_seed(opt.dropout_seed, base_step + step));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NonFinite) {
        fail(ErrorKind::TrainingDiverged, "step " + std::to_string(step) + ": " + e.what());
      }
      throw;
    }
    if (!std::isfinite(loss)) fail(ErrorKind::TrainingDiverged, "step " + std::to_string(step) + ": loss is not finite");
    result.last_train_loss = loss;
    result.steps = step;
    model.set_step(base_step + step);

    const bool eval_now = !val_set.empty() && opt.eval_every > 0 && (step % opt.eval_every == 0 || step == opt.max_steps);
    if (eval_now) {
      const double val = mean_nll(model, val_set, opt.batch_size);
      result.val_history.emplace_back(step, val);
      if (log) *log << "step " << step << " train_loss " << loss << " val_nll " << val << " lr " << lr << '\n';
      if (val < result.best_val_loss) {
        result.best_val_loss = val;
        result.best_step = step;
        since_best = 0;
        if (opt.restore_best) best_params = model.params();
      } else if (opt.patience > 0 && ++since_best >= opt.patience) {
        result.stopped_early = true;
        break;
      }
    }
  }
  if (opt.restore_best && !best_params.empty() && result.best_step != result.steps) {
    for (std::size_t i = 0; i < best_params.size(); ++i) {
      if (model.params()[i].trainable) model.params()[i].value = std::move(best_params[i].value);
    }
  }
  return result;
}

}  // namespace xfer
