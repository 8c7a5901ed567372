#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// A Tape owns every intermediate produced while building a computation; nodes
// are appended in evaluation order, so reverse creation order is a valid
// topological order for the backward sweep. Vars are cheap handles into a tape.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xfer/error.hpp"
#include "xfer/random.hpp"
#include "xfer/tensor.hpp"

namespace xfer::ad {

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t id() const { return id_; }
  Tape<T>* tape() const { return tape_; }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  // Called with the gradient flowing into the node's output and the output itself.
  using Backward = std::function<void(Tape&, const Tensor<T>& grad, const Tensor<T>& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    Node node;
    node.op = "leaf";
    node.owned = std::move(value);
    node.requires_grad = requires_grad;
    return push(std::move(node));
  }

  // Leaf that references caller-owned storage; the tensor must outlive the tape.
  Var<T> borrow(const Tensor<T>& value, bool requires_grad) {
    Node node;
    node.op = "leaf";
    node.borrowed = &value;
    node.requires_grad = requires_grad;
    return push(std::move(node));
  }

  Var<T> record(std::string_view op, Tensor<T> value, std::vector<std::size_t> inputs, Backward backward) {
    if (!value.all_finite()) {
      fail(ErrorKind::NonFinite, "non-finite value produced by op '" + std::string(op) + "'");
    }
    Node node;
    node.op = op;
    node.owned = std::move(value);
    node.inputs = std::move(inputs);
    for (std::size_t in : node.inputs) node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    if (node.requires_grad) node.backward = std::move(backward);
    return push(std::move(node));
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value(); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::string_view op(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer for accumulation; allocated on first use.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& node = nodes_[id];
    if (node.grad.size() == 0) node.grad = Tensor<T>(node.value().shape());
    return node.grad;
  }

  bool has_grad(Var<T> v) const { return nodes_[v.id()].grad.size() != 0; }

  // Gradient of the last backward() target with respect to v; zeros when no
  // gradient reached it.
  Tensor<T> grad(Var<T> v) const {
    const Node& node = nodes_[v.id()];
    if (node.grad.size() != 0) return node.grad;
    return Tensor<T>(node.value().shape());
  }

  void backward(Var<T> loss) {
    require(loss.tape() == this, ErrorKind::InvalidArgument, "loss belongs to another tape");
    require(loss.value().size() == 1, ErrorKind::InvalidArgument,
            "backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    for (Node& node : nodes_) node.grad = Tensor<T>();
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id())[0] = T{1};
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.backward || node.grad.size() == 0) continue;
      node.backward(*this, node.grad, node.value());
      for (std::size_t in : node.inputs) {
        if (nodes_[in].grad.size() != 0 && !nodes_[in].grad.all_finite()) {
          fail(ErrorKind::NonFinite, "non-finite gradient flowing out of op '" + std::string(node.op) + "'");
        }
      }
    }
  }

 private:
  struct Node {
    std::string_view op;
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;

    const Tensor<T>& value() const { return borrowed ? *borrowed : owned; }
  };

  Var<T> push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
  }

  // deque: references to existing nodes stay valid as the tape grows.
  std::deque<Node> nodes_;
};

namespace detail {

// Below this many multiply-adds the transposing paths cost more than they save.
inline constexpr std::size_t kSmallGemm = 16384;

template <typename T>
void transpose_into(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

template <typename T>
struct Lanes {
#if defined(__AVX__)
  static constexpr std::size_t kBytes = 32;
#else
  static constexpr std::size_t kBytes = 16;
#endif
  static constexpr std::size_t kWidth = kBytes / sizeof(T);
  typedef T type __attribute__((vector_size(kBytes)));
};

template <typename V, typename T>
inline V load_lanes(const T* p) {
  V v;
  std::memcpy(&v, p, sizeof(V));
  return v;
}

template <typename V, typename T>
inline void store_lanes(T* p, const V& v) {
  std::memcpy(p, &v, sizeof(V));
}

// One R x (NV * lane width) block of C, accumulated in registers over the
// whole k range. Entries sum their k products in index order.
template <typename T, std::size_t R, std::size_t NV>
void gemm_tile(std::size_t k, std::size_t n, const T* a, const T* b, T* c, std::size_t i, std::size_t j) {
  using V = typename Lanes<T>::type;
  constexpr std::size_t L = Lanes<T>::kWidth;
  V acc[R][NV];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t v = 0; v < NV; ++v) acc[r][v] = load_lanes<V>(c + (i + r) * n + j + v * L);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n + j;
    V bv[NV];
    for (std::size_t v = 0; v < NV; ++v) bv[v] = load_lanes<V>(brow + v * L);
    for (std::size_t r = 0; r < R; ++r) {
      const T av = a[(i + r) * k + p];
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] += av * bv[v];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t v = 0; v < NV; ++v) store_lanes(c + (i + r) * n + j + v * L, acc[r][v]);
  }
}

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  constexpr std::size_t R = 4;
  constexpr std::size_t NV = 2;
  constexpr std::size_t W = NV * Lanes<T>::kWidth;
  const std::size_t m_full = m - m % R;
  const std::size_t n_full = n - n % W;
  for (std::size_t i = 0; i < m_full; i += R) {
    for (std::size_t j = 0; j < n_full; j += W) gemm_tile<T, R, NV>(k, n, a, b, c, i, j);
  }
  // ragged edges
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j0 = i < m_full ? n_full : 0;
    if (j0 == n) continue;
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = j0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  if (m * n * k < kSmallGemm) {
    for (std::size_t p = 0; p < k; ++p) {
      const T* arow = a + p * m;
      const T* brow = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = arow[i];
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
    return;
  }
  std::vector<T> at(m * k);
  transpose_into(k, m, a, at.data());
  gemm_nn(m, k, n, at.data(), b, c);
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  if (m * n * k < kSmallGemm) {
    for (std::size_t i = 0; i < m; ++i) {
      const T* arow = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = b + j * k;
        T acc{0};
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        c[i * n + j] += acc;
      }
    }
    return;
  }
  std::vector<T> bt(k * n);
  transpose_into(n, k, b, bt.data());
  gemm_nn(m, k, n, a, bt.data(), c);
}

inline void same_tape(const void* a, const void* b) {
  require(a == b, ErrorKind::InvalidArgument, "operands belong to different tapes");
}

template <typename T>
std::size_t rows_of(const Tensor<T>& t) {
  return t.size() / t.shape().back();
}

}  // namespace detail

/// Matrix product. Rank 2: [m,k]x[k,n] -> [m,n]. Rank 3 is batched over the
/// leading axis: [B,m,k]x[B,k,n] -> [B,m,n].
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::same_tape(a.tape(), b.tape());
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool ok = (sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0]) ||
                  (sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[1]);
  require(ok, ErrorKind::ShapeError, "matmul " + shape_str(sa) + " x " + shape_str(sb));
  const bool batched = sa.size() == 3;
  const std::size_t batch = batched ? sa[0] : 1;
  const std::size_t m = sa[sa.size() - 2], k = sa.back(), n = sb.back();
  Tensor<T> out(batched ? Shape{batch, m, n} : Shape{m, n});
  const T* ad = a.value().data().data();
  const T* bd = b.value().data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    detail::gemm_nn(m, k, n, ad + i * m * k, bd + i * k * n, out.data().data() + i * m * n);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("matmul", std::move(out), {ia, ib}, [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    const T* av = tape.value(ia).data().data();
    const T* bv = tape.value(ib).data().data();
    const T* gv = g.data().data();
    if (tape.requires_grad(ia)) {
      T* ga = tape.grad_buffer(ia).data().data();
      for (std::size_t i = 0; i < batch; ++i) {
        detail::gemm_nt(m, n, k, gv + i * m * n, bv + i * k * n, ga + i * m * k);
      }
    }
    if (tape.requires_grad(ib)) {
      T* gb = tape.grad_buffer(ib).data().data();
      for (std::size_t i = 0; i < batch; ++i) {
        detail::gemm_tn(k, m, n, av + i * m * k, gv + i * m * n, gb + i * k * n);
      }
    }
  });
}

/// Elementwise sum. `b` may also be rank 1 with the length of a's last axis,
/// in which case it is broadcast across rows (bias addition).
template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_tape(a.tape(), b.tape());
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool same = sa == sb;
  const bool bias = !same && sb.size() == 1 && !sa.empty() && sb[0] == sa.back();
  require(same || bias, ErrorKind::ShapeError, "add " + shape_str(sa) + " + " + shape_str(sb));
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  auto ov = out.data();
  if (same) {
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
  } else {
    const std::size_t n = sb[0];
    for (std::size_t r = 0; r < ov.size(); r += n) {
      for (std::size_t j = 0; j < n; ++j) ov[r + j] += bv[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("add", std::move(out), {ia, ib}, [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    const auto gv = g.data();
    if (tape.requires_grad(ia)) {
      auto ga = tape.grad_buffer(ia).data();
      for (std::size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i];
    }
    if (tape.requires_grad(ib)) {
      auto gb = tape.grad_buffer(ib).data();
      const std::size_t n = gb.size();
      for (std::size_t r = 0; r < gv.size(); r += n) {
        for (std::size_t j = 0; j < n; ++j) gb[j] += gv[r + j];
      }
    }
  });
}

/// Elementwise (Hadamard) product of equal shapes.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_tape(a.tape(), b.tape());
  require(a.shape() == b.shape(), ErrorKind::ShapeError,
          "mul " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("mul", std::move(out), {ia, ib}, [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    const auto gv = g.data();
    if (tape.requires_grad(ia)) {
      const auto bv2 = tape.value(ib).data();
      auto ga = tape.grad_buffer(ia).data();
      for (std::size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i] * bv2[i];
    }
    if (tape.requires_grad(ib)) {
      const auto av2 = tape.value(ia).data();
      auto gb = tape.grad_buffer(ib).data();
      for (std::size_t i = 0; i < gv.size(); ++i) gb[i] += gv[i] * av2[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v *= factor;
  const std::size_t ix = x.id();
  return x.tape()->record("scale", std::move(out), {ix}, [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    auto gx = tape.grad_buffer(ix).data();
    const auto gv = g.data();
    for (std::size_t i = 0; i < gv.size(); ++i) gx[i] += gv[i] * factor;
  });
}

/// Softmax over the last axis.
template <typename T>
Var<T> softmax_row(Var<T> x) {
  require(x.value().rank() >= 1, ErrorKind::InvalidArgument, "softmax over an empty axis");
  const std::size_t n = x.shape().back();
  const std::size_t rows = detail::rows_of(x.value());
  Tensor<T> out = x.value();
  auto ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = ov.data() + r * n;
    const T mx = *std::max_element(row, row + n);
    T total{0};
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= total;
  }
  const std::size_t ix = x.id();
  return x.tape()->record("softmax_row", std::move(out), {ix},
                          [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>& y) {
                            const auto yv = y.data();
                            const auto gv = g.data();
                            auto gx = tape.grad_buffer(ix).data();
                            for (std::size_t r = 0; r < rows; ++r) {
                              T dot{0};
                              for (std::size_t j = 0; j < n; ++j) dot += gv[r * n + j] * yv[r * n + j];
                              for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += yv[r * n + j] * (gv[r * n + j] - dot);
                            }
                          });
}

/// Layer normalization over the last axis using the population variance,
/// followed by a learnable per-feature gain and bias.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  detail::same_tape(x.tape(), gain.tape());
  detail::same_tape(x.tape(), bias.tape());
  const std::size_t n = x.shape().back();
  require(gain.shape() == Shape{n} && bias.shape() == Shape{n}, ErrorKind::ShapeError,
          "layer_norm gain/bias must be (" + std::to_string(n) + ")");
  const std::size_t rows = detail::rows_of(x.value());
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(rows);
  const auto xv = x.value().data();
  const auto gv = gain.value().data();
  const auto bv = bias.value().data();
  auto ov = out.data();
  auto hv = xhat.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * n;
    T mean{0};
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<T>(n);
    T var{0};
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(n);
    const T is = T{1} / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      hv[r * n + j] = (row[j] - mean) * is;
      ov[r * n + j] = hv[r * n + j] * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape()->record(
      "layer_norm", std::move(out), {ix, ig, ib},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const auto gr = g.data();
        const auto h = xhat.data();
        if (tape.requires_grad(ig)) {
          auto gg = tape.grad_buffer(ig).data();
          for (std::size_t i = 0; i < gr.size(); ++i) gg[i % n] += gr[i] * h[i];
        }
        if (tape.requires_grad(ib)) {
          auto gb = tape.grad_buffer(ib).data();
          for (std::size_t i = 0; i < gr.size(); ++i) gb[i % n] += gr[i];
        }
        if (tape.requires_grad(ix)) {
          const auto gain_v = tape.value(ig).data();
          auto gx = tape.grad_buffer(ix).data();
          std::vector<T> dh(n);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh{0}, mean_dh_h{0};
            for (std::size_t j = 0; j < n; ++j) {
              dh[j] = gr[r * n + j] * gain_v[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * h[r * n + j];
            }
            mean_dh /= static_cast<T>(n);
            mean_dh_h /= static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j) {
              gx[r * n + j] += inv_std[r] * (dh[j] - mean_dh - h[r * n + j] * mean_dh_h);
            }
          }
        }
      });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  const std::size_t ix = x.id();
  return x.tape()->record("relu", std::move(out), {ix}, [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    const auto xv = tape.value(ix).data();
    const auto gv = g.data();
    auto gx = tape.grad_buffer(ix).data();
    for (std::size_t i = 0; i < gv.size(); ++i) {
      if (xv[i] > T{0}) gx[i] += gv[i];
    }
  });
}

/// Gathers rows of a [V,d] table: ids -> [ids.size(), d].
template <typename T>
Var<T> embedding_lookup(Var<T> table, std::span<const std::int32_t> ids) {
  require(table.value().rank() == 2, ErrorKind::ShapeError,
          "embedding table must be 2-D, got " + shape_str(table.shape()));
  require(!ids.empty(), ErrorKind::ShapeError, "embedding lookup with no ids");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  Tensor<T> out(Shape{ids.size(), d});
  const auto tv = table.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = ids[i];
    require(id >= 0 && static_cast<std::size_t>(id) < vocab, ErrorKind::InvalidId,
            "embedding id " + std::to_string(id) + " outside table of " + std::to_string(vocab) + " rows");
    std::copy_n(tv.data() + static_cast<std::size_t>(id) * d, d, ov.data() + i * d);
  }
  const std::size_t it = table.id();
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return table.tape()->record("embedding_lookup", std::move(out), {it},
                              [=, saved = std::move(saved)](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
                                auto gt = tape.grad_buffer(it).data();
                                const auto gv = g.data();
                                for (std::size_t i = 0; i < saved.size(); ++i) {
                                  T* dst = gt.data() + static_cast<std::size_t>(saved[i]) * d;
                                  const T* src = gv.data() + i * d;
                                  for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                                }
                              });
}

/// Inverted dropout: keeps each entry with probability keep_prob and rescales
/// by 1/keep_prob. The mask is a pure function of `seed`. Identity when not
/// training.
template <typename T>
Var<T> dropout(Var<T> x, double keep_prob, std::uint64_t seed, bool training) {
  require(keep_prob > 0.0 && keep_prob <= 1.0, ErrorKind::InvalidArgument, "dropout keep probability must be in (0, 1]");
  if (!training || keep_prob == 1.0) return x;
  std::vector<T> mask(x.value().size());
  // Element i is kept when the top 53 bits of a hash of (seed, i), read as a
  // fraction in [0, 1), fall below keep_prob.
  const T keep_scale = static_cast<T>(1.0 / keep_prob);
  const std::uint64_t base = mix_seed(seed);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double u = static_cast<double>(mix_seed(base + i) >> 11) * 0x1.0p-53;
    mask[i] = u < keep_prob ? keep_scale : T{0};
  }
  Tensor<T> out = x.value();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= mask[i];
  const std::size_t ix = x.id();
  return x.tape()->record("dropout", std::move(out), {ix},
                          [=, mask = std::move(mask)](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
                            auto gx = tape.grad_buffer(ix).data();
                            const auto gv = g.data();
                            for (std::size_t i = 0; i < gv.size(); ++i) gx[i] += gv[i] * mask[i];
                          });
}

/// Concatenates along the last axis; all leading dimensions must agree.
template <typename T>
Var<T> concat(std::span<const Var<T>> parts) {
  require(!parts.empty(), ErrorKind::InvalidArgument, "concat of nothing");
  Tape<T>* tape = parts[0].tape();
  const Shape& first = parts[0].shape();
  Shape lead(first.begin(), first.end() - 1);
  std::size_t total = 0;
  std::vector<std::size_t> widths, ids;
  for (const Var<T>& p : parts) {
    detail::same_tape(tape, p.tape());
    const Shape& s = p.shape();
    require(s.size() == first.size() && Shape(s.begin(), s.end() - 1) == lead, ErrorKind::ShapeError,
            "concat " + shape_str(first) + " with " + shape_str(s));
    widths.push_back(s.back());
    ids.push_back(p.id());
    total += s.back();
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor<T> out(out_shape);
  const std::size_t rows = numel(lead);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].value().data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.data() + r * widths[k], widths[k], out.data().data() + r * total + offset);
    }
    offset += widths[k];
  }
  return tape->record("concat", std::move(out), ids, [=](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) {
        auto gp = tp.grad_buffer(ids[k]).data();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < widths[k]; ++j) gp[r * widths[k] + j] += g[r * total + off + j];
        }
      }
      off += widths[k];
    }
  });
}

template <typename T>
Var<T> concat(std::initializer_list<Var<T>> parts) {
  std::vector<Var<T>> v(parts);
  return concat<T>(std::span<const Var<T>>(v));
}

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T>
Var<T> transpose(Var<T> x) {
  const Shape& s = x.shape();
  require(s.size() == 2 || s.size() == 3, ErrorKind::ShapeError, "transpose needs rank 2 or 3, got " + shape_str(s));
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t r = s[s.size() - 2], c = s.back();
  Shape os = s;
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  Tensor<T> out(os);
  for (std::size_t b = 0; b < batch; ++b) {
    detail::transpose_into(r, c, x.value().data().data() + b * r * c, out.data().data() + b * r * c);
  }
  const std::size_t ix = x.id();
  return x.tape()->record("transpose", std::move(out), {ix}, [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    auto gx = tape.grad_buffer(ix).data();
    for (std::size_t b = 0; b < batch; ++b) {
      const T* gsrc = g.data().data() + b * r * c;
      T* dst = gx.data() + b * r * c;
      for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < r; ++j) dst[j * c + i] += gsrc[i * r + j];
      }
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  require(numel(shape) == x.value().size(), ErrorKind::ShapeError,
          "reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  const std::size_t ix = x.id();
  return x.tape()->record("reshape", x.value().reshaped(std::move(shape)), {ix},
                          [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
                            auto gx = tape.grad_buffer(ix).data();
                            const auto gv = g.data();
                            for (std::size_t i = 0; i < gv.size(); ++i) gx[i] += gv[i];
                          });
}

/// Sum of all entries, as a one-element tensor.
template <typename T>
Var<T> sum(Var<T> x) {
  T total{0};
  for (T v : x.value().data()) total += v;
  const std::size_t ix = x.id();
  return x.tape()->record("sum", Tensor<T>::scalar(total), {ix}, [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    for (T& v : tape.grad_buffer(ix).data()) v += g[0];
  });
}

namespace detail {

// [B*L, H*dk] <-> [B*H, L, dk]
template <typename T>
void permute_heads(const T* src, T* dst, std::size_t batch, std::size_t len, std::size_t heads, std::size_t dk,
                   bool split, bool accumulate) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t flat = ((b * len + t) * heads + h) * dk;
        const std::size_t head = ((b * heads + h) * len + t) * dk;
        const T* from = src + (split ? flat : head);
        T* to = dst + (split ? head : flat);
        for (std::size_t j = 0; j < dk; ++j) {
          if (accumulate) {
            to[j] += from[j];
          } else {
            to[j] = from[j];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Rearranges [batch*len, heads*dk] into per-head blocks [batch*heads, len, dk].
template <typename T>
Var<T> split_heads(Var<T> x, std::size_t batch, std::size_t len, std::size_t heads) {
  const Shape& s = x.shape();
  require(s.size() == 2 && s[0] == batch * len && s[1] % heads == 0, ErrorKind::ShapeError,
          "split_heads on " + shape_str(s));
  const std::size_t dk = s[1] / heads;
  Tensor<T> out(Shape{batch * heads, len, dk});
  detail::permute_heads(x.value().data().data(), out.data().data(), batch, len, heads, dk, true, false);
  const std::size_t ix = x.id();
  return x.tape()->record("split_heads", std::move(out), {ix}, [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    detail::permute_heads(g.data().data(), tape.grad_buffer(ix).data().data(), batch, len, heads, dk, false, true);
  });
}

/// Inverse of split_heads: [batch*heads, len, dk] -> [batch*len, heads*dk].
template <typename T>
Var<T> merge_heads(Var<T> x, std::size_t batch, std::size_t heads) {
  const Shape& s = x.shape();
  require(s.size() == 3 && s[0] == batch * heads, ErrorKind::ShapeError, "merge_heads on " + shape_str(s));
  const std::size_t len = s[1], dk = s[2];
  Tensor<T> out(Shape{batch * len, heads * dk});
  detail::permute_heads(x.value().data().data(), out.data().data(), batch, len, heads, dk, false, false);
  const std::size_t ix = x.id();
  return x.tape()->record("merge_heads", std::move(out), {ix}, [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    detail::permute_heads(g.data().data(), tape.grad_buffer(ix).data().data(), batch, len, heads, dk, true, true);
  });
}

/// Mean over non-pad positions of the cross entropy between softmax(logits)
/// and the smoothed target q = (1 - eps) * onehot(gold) + eps / V.
template <typename T>
Var<T> cross_entropy_label_smoothed(Var<T> logits, std::span<const std::int32_t> gold, double epsilon,
                                    std::int32_t pad_id) {
  require(logits.value().rank() == 2, ErrorKind::ShapeError, "logits must be [positions, V]");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  require(gold.size() == rows, ErrorKind::ShapeError,
          "gold has " + std::to_string(gold.size()) + " ids for " + std::to_string(rows) + " positions");
  require(epsilon >= 0.0 && epsilon < 1.0, ErrorKind::InvalidArgument, "label smoothing must be in [0, 1)");
  std::size_t count = 0;
  for (std::int32_t g : gold) {
    if (g == pad_id) continue;
    require(g >= 0 && static_cast<std::size_t>(g) < vocab, ErrorKind::InvalidId,
            "gold id " + std::to_string(g) + " outside [0, " + std::to_string(vocab) + ")");
    ++count;
  }
  require(count > 0, ErrorKind::EmptyLoss, "every position is padding");

  const T on = static_cast<T>(1.0 - epsilon);
  const T off = static_cast<T>(epsilon / static_cast<double>(vocab));
  const auto lv = logits.value().data();
  Tensor<T> probs(logits.shape());
  auto pv = probs.data();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (gold[r] == pad_id) continue;
    const T* row = lv.data() + r * vocab;
    const T mx = *std::max_element(row, row + vocab);
    T z{0};
    for (std::size_t k = 0; k < vocab; ++k) z += std::exp(row[k] - mx);
    const T log_z = std::log(z) + mx;
    T row_loss{0};
    for (std::size_t k = 0; k < vocab; ++k) {
      const T logp = row[k] - log_z;
      pv[r * vocab + k] = std::exp(logp);
      const T q = off + (static_cast<std::size_t>(gold[r]) == k ? on : T{0});
      row_loss -= q * logp;
    }
    total += static_cast<double>(row_loss);
  }
  const T loss = static_cast<T>(total / static_cast<double>(count));
  const std::size_t il = logits.id();
  std::vector<std::int32_t> saved(gold.begin(), gold.end());
  return logits.tape()->record(
      "cross_entropy", Tensor<T>::scalar(loss), {il},
      [=, probs = std::move(probs), saved = std::move(saved)](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        auto gl = tape.grad_buffer(il).data();
        const auto p = probs.data();
        const T factor = g[0] / static_cast<T>(count);
        for (std::size_t r = 0; r < rows; ++r) {
          if (saved[r] == pad_id) continue;
          for (std::size_t k = 0; k < vocab; ++k) {
            const T q = off + (static_cast<std::size_t>(saved[r]) == k ? on : T{0});
            gl[r * vocab + k] += factor * (p[r * vocab + k] - q);
          }
        }
      });
}

}  // namespace xfer::ad
