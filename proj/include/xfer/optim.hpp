#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xfer/error.hpp"
#include "xfer/tensor.hpp"

namespace xfer {

/// A named learnable tensor. Frozen parameters are never touched by the optimizer.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool trainable = true;
};

struct AdamHyper {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  AdamHyper hyper;
};

/// Linear warmup to the base rate over `warmup` steps, then inverse-sqrt decay.
/// `step` counts from 1.
inline double warmup_inverse_sqrt(double base_lr, std::uint64_t step, std::uint64_t warmup) {
  const double s = static_cast<double>(std::max<std::uint64_t>(step, 1));
  if (warmup == 0) return base_lr;
  const double w = static_cast<double>(warmup);
  return base_lr * std::min(s / w, std::sqrt(w / s));
}

/// One bias-corrected Adam update. `grads[i]` pairs with `params[i]`; an empty
/// gradient tensor means the parameter received no gradient this step.
/// `lr` overrides state.hyper.lr when positive (scheduled rates).
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               double lr = -1.0) {
  require(params.size() == grads.size(), ErrorKind::ShapeError,
          std::to_string(params.size()) + " parameters but " + std::to_string(grads.size()) + " gradients");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
  }
  require(state.m.size() == params.size(), ErrorKind::ShapeError, "optimizer state was built for a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor<T>& g = grads[i];
    if (g.size() != 0) {
      require(g.shape() == params[i]->value.shape(), ErrorKind::ShapeError,
              "gradient " + shape_str(g.shape()) + " for parameter '" + params[i]->name + "' of shape " +
                  shape_str(params[i]->value.shape()));
    }
  }

  state.step += 1;
  const AdamHyper& h = state.hyper;
  const double rate = lr > 0.0 ? lr : h.lr;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    const Tensor<T>& g = grads[i];
    if (!p.trainable || g.size() == 0) continue;
    if (state.m[i].size() == 0) {
      state.m[i] = Tensor<T>(p.value.shape());
      state.v[i] = Tensor<T>(p.value.shape());
    }
    require(state.m[i].shape() == p.value.shape(), ErrorKind::ShapeError,
            "optimizer moments for '" + p.name + "' do not match its shape");
    auto w = p.value.data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    const auto gv = g.data();
    const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
    const T step_scale = static_cast<T>(rate / bc1);
    const T v_scale = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(h.eps);
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (T{1} - b1) * gv[j];
      v[j] = b2 * v[j] + (T{1} - b2) * gv[j] * gv[j];
      w[j] -= step_scale * m[j] / (std::sqrt(v[j]) * v_scale + eps);
    }
    require(p.value.all_finite(), ErrorKind::NonFinite, "adam update produced non-finite values in '" + p.name + "'");
  }
}

}  // namespace xfer
