#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "oaug/core/graph.hpp"
#include "oaug/core/rng.hpp"

namespace oaug {

using EigenRowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenRowMat>;
using ConstMatMap = Eigen::Map<const EigenRowMat>;

namespace detail {
inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->val.same_shape(b->val))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->val.shape()) +
                                " vs " + shape_str(b->val.shape()));
}
}  // namespace detail

// ---------- elementwise ----------

inline Var add(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out = a->val;
  out.add_scaled(b->val, 1.0);
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    add_grad(a, [&](Tensor& g) { g.add_scaled(n.grad, 1.0); });
    add_grad(b, [&](Tensor& g) { g.add_scaled(n.grad, 1.0); });
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out = a->val;
  out.add_scaled(b->val, -1.0);
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    add_grad(a, [&](Tensor& g) { g.add_scaled(n.grad, 1.0); });
    add_grad(b, [&](Tensor& g) { g.add_scaled(n.grad, -1.0); });
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out(a->val.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] * b->val[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    add_grad(a, [&](Tensor& g) {
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * b->val[i];
    });
    add_grad(b, [&](Tensor& g) {
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * a->val[i];
    });
  });
}

inline Var div(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "div");
  Tensor out(a->val.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] / b->val[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    add_grad(a, [&](Tensor& g) {
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] / b->val[i];
    });
    add_grad(b, [&](Tensor& g) {
      for (int64_t i = 0; i < g.numel(); ++i)
        g[i] -= n.grad[i] * a->val[i] / (b->val[i] * b->val[i]);
    });
  });
}

inline Var neg(const Var& a) {
  Tensor out = a->val;
  out.scale_inplace(-1.0);
  return make_op(std::move(out), {a},
                 [a](Node& n) { add_grad(a, [&](Tensor& g) { g.add_scaled(n.grad, -1.0); }); });
}

inline Var scale(const Var& a, double c) {
  Tensor out = a->val;
  out.scale_inplace(c);
  return make_op(std::move(out), {a},
                 [a, c](Node& n) { add_grad(a, [&](Tensor& g) { g.add_scaled(n.grad, c); }); });
}

inline Var add_scalar(const Var& a, double c) {
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
  return make_op(std::move(out), {a},
                 [a](Node& n) { add_grad(a, [&](Tensor& g) { g.add_scaled(n.grad, 1.0); }); });
}

inline Var square(const Var& a) { return mul(a, a); }

inline Var relu(const Var& a) {
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, out[i]);
  return make_op(std::move(out), {a}, [a](Node& n) {
    add_grad(a, [&](Tensor& g) {
      for (int64_t i = 0; i < g.numel(); ++i)
        if (a->val[i] > 0.0) g[i] += n.grad[i];
    });
  });
}

inline Var tanh_op(const Var& a) {
  Tensor out(a->val.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(a->val[i]);
  return make_op(std::move(out), {a}, [a](Node& n) {
    add_grad(a, [&](Tensor& g) {
      for (int64_t i = 0; i < g.numel(); ++i) {
        const double t = std::tanh(a->val[i]);
        g[i] += n.grad[i] * (1.0 - t * t);
      }
    });
  });
}

inline Var exp_op(const Var& a) {
  Tensor out(a->val.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(a->val[i]);
  return make_op(std::move(out), {a}, [a](Node& n) {
    add_grad(a, [&](Tensor& g) {
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * std::exp(a->val[i]);
    });
  });
}

/// Subgradient zero outside [lo, hi].
inline Var clamp(const Var& a, double lo, double hi) {
  Tensor out(a->val.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(hi, std::max(lo, a->val[i]));
  return make_op(std::move(out), {a}, [a, lo, hi](Node& n) {
    add_grad(a, [&](Tensor& g) {
      for (int64_t i = 0; i < g.numel(); ++i)
        if (a->val[i] > lo && a->val[i] < hi) g[i] += n.grad[i];
    });
  });
}

/// Inverted dropout; mask drawn at build time so re-running a stored graph
/// closure is deterministic.
inline Var dropout(const Var& a, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  Tensor mask(a->val.shape());
  const double keep = 1.0 - p;
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
  Tensor out(a->val.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] * mask[i];
  return make_op(std::move(out), {a}, [a, mask](Node& n) {
    add_grad(a, [&](Tensor& g) {
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * mask[i];
    });
  });
}

// ---------- structure ----------

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a->val.reshaped(shape);
  return make_op(std::move(out), {a}, [a](Node& n) {
    add_grad(a, [&](Tensor& g) { g.add_scaled(n.grad.reshaped(g.shape()), 1.0); });
  });
}

/// Concatenate along the channel axis of NCHW tensors.
inline Var concat_channels(const Var& a, const Var& b) {
  const Tensor &av = a->val, &bv = b->val;
  if (av.ndim() != 4 || bv.ndim() != 4 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) ||
      av.dim(3) != bv.dim(3))
    throw std::invalid_argument("concat_channels: incompatible shapes");
  const int64_t n = av.dim(0), ca = av.dim(1), cb = bv.dim(1), hw = av.dim(2) * av.dim(3);
  Tensor out({n, ca + cb, av.dim(2), av.dim(3)});
  for (int64_t i = 0; i < n; ++i) {
    std::memcpy(out.data() + (i * (ca + cb)) * hw, av.data() + i * ca * hw,
                static_cast<size_t>(ca * hw) * sizeof(double));
    std::memcpy(out.data() + (i * (ca + cb) + ca) * hw, bv.data() + i * cb * hw,
                static_cast<size_t>(cb * hw) * sizeof(double));
  }
  return make_op(std::move(out), {a, b}, [a, b, n, ca, cb, hw](Node& nd) {
    add_grad(a, [&](Tensor& g) {
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < ca * hw; ++j) g[i * ca * hw + j] += nd.grad[(i * (ca + cb)) * hw + j];
    });
    add_grad(b, [&](Tensor& g) {
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < cb * hw; ++j)
          g[i * cb * hw + j] += nd.grad[(i * (ca + cb) + ca) * hw + j];
    });
  });
}

/// [n,2,h,w] -> [n,h,w,2]; pairs grid-delta decoder output with grid layout.
inline Var chw2_to_hwc2(const Var& a) {
  const Tensor& av = a->val;
  if (av.ndim() != 4 || av.dim(1) != 2) throw std::invalid_argument("chw2_to_hwc2: expect [n,2,h,w]");
  const int64_t n = av.dim(0), h = av.dim(2), w = av.dim(3), hw = h * w;
  Tensor out({n, h, w, 2});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t p = 0; p < hw; ++p) {
      out[(i * hw + p) * 2 + 0] = av[(i * 2 + 0) * hw + p];
      out[(i * hw + p) * 2 + 1] = av[(i * 2 + 1) * hw + p];
    }
  return make_op(std::move(out), {a}, [a, n, hw](Node& nd) {
    add_grad(a, [&](Tensor& g) {
      for (int64_t i = 0; i < n; ++i)
        for (int64_t p = 0; p < hw; ++p) {
          g[(i * 2 + 0) * hw + p] += nd.grad[(i * hw + p) * 2 + 0];
          g[(i * 2 + 1) * hw + p] += nd.grad[(i * hw + p) * 2 + 1];
        }
    });
  });
}

// ---------- linear algebra ----------

inline Var matmul(const Var& a, const Var& b) {
  const Tensor &av = a->val, &bv = b->val;
  if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes");
  const int64_t m = av.dim(0), k = av.dim(1), n2 = bv.dim(1);
  Tensor out({m, n2});
  MatMap(out.data(), m, n2).noalias() = ConstMatMap(av.data(), m, k) * ConstMatMap(bv.data(), k, n2);
  return make_op(std::move(out), {a, b}, [a, b, m, k, n2](Node& nd) {
    add_grad(a, [&](Tensor& g) {
      MatMap(g.data(), m, k).noalias() +=
          ConstMatMap(nd.grad.data(), m, n2) * ConstMatMap(b->val.data(), k, n2).transpose();
    });
    add_grad(b, [&](Tensor& g) {
      MatMap(g.data(), k, n2).noalias() +=
          ConstMatMap(a->val.data(), m, k).transpose() * ConstMatMap(nd.grad.data(), m, n2);
    });
  });
}

/// x[n,f] * W[o,f]^T + b[o]
inline Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor &xv = x->val, &wv = w->val;
  if (xv.ndim() != 2 || wv.ndim() != 2 || xv.dim(1) != wv.dim(1))
    throw std::invalid_argument("linear: incompatible shapes");
  const int64_t n = xv.dim(0), f = xv.dim(1), o = wv.dim(0);
  if (b->val.numel() != o) throw std::invalid_argument("linear: bad bias");
  Tensor out({n, o});
  MatMap om(out.data(), n, o);
  om.noalias() = ConstMatMap(xv.data(), n, f) * ConstMatMap(wv.data(), o, f).transpose();
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->val.data(), o);
  return make_op(std::move(out), {x, w, b}, [x, w, b, n, f, o](Node& nd) {
    ConstMatMap gm(nd.grad.data(), n, o);
    add_grad(x, [&](Tensor& g) {
      MatMap(g.data(), n, f).noalias() += gm * ConstMatMap(w->val.data(), o, f);
    });
    add_grad(w, [&](Tensor& g) {
      MatMap(g.data(), o, f).noalias() += gm.transpose() * ConstMatMap(x->val.data(), n, f);
    });
    add_grad(b, [&](Tensor& g) {
      Eigen::Map<Eigen::RowVectorXd>(g.data(), o) += gm.colwise().sum();
    });
  });
}

// ---------- reductions ----------

inline Var sum_all(const Var& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a->val.numel(); ++i) s += a->val[i];
  return make_op(Tensor::scalar(s), {a}, [a](Node& n) {
    const double g0 = n.grad[0];
    add_grad(a, [&](Tensor& g) {
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += g0;
    });
  });
}

inline Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a->val.numel())); }

/// mean over all elements of (a - b)^2
inline Var mse(const Var& a, const Var& b) { return mean_all(square(sub(a, b))); }

// ---------- task losses ----------

/// Mean cross-entropy over a batch of logits [n,k] with integer labels [n].
/// Stable log-sum-exp; backward is (softmax - onehot)/n.
inline Var softmax_cross_entropy(const Var& logits, const IntTensor& labels) {
  const Tensor& lv = logits->val;
  if (lv.ndim() != 2 || labels.numel() != lv.dim(0))
    throw std::invalid_argument("softmax_cross_entropy: bad shapes");
  const int64_t n = lv.dim(0), k = lv.dim(1);
  Tensor soft({n, k});
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = lv.data() + i * k;
    double mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const double lse = mx + std::log(denom);
    for (int64_t j = 0; j < k; ++j) soft.at(i, j) = std::exp(row[j] - lse);
    const int32_t y = labels[i];
    if (y < 0 || y >= k) throw std::invalid_argument("softmax_cross_entropy: label out of range");
    loss += lse - row[y];
  }
  loss /= static_cast<double>(n);
  return make_op(Tensor::scalar(loss), {logits}, [logits, soft, labels, n, k](Node& nd) {
    const double g0 = nd.grad[0] / static_cast<double>(n);
    add_grad(logits, [&](Tensor& g) {
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < k; ++j) g.at(i, j) += g0 * soft.at(i, j);
        g.at(i, labels[i]) -= g0;
      }
    });
  });
}

/// Pixelwise mean cross-entropy for logits [n,k,h,w] and labels [n,h,w].
inline Var softmax_cross_entropy_2d(const Var& logits, const IntTensor& labels) {
  const Tensor& lv = logits->val;
  if (lv.ndim() != 4 || labels.ndim() != 3 || labels.dim(0) != lv.dim(0) ||
      labels.dim(1) != lv.dim(2) || labels.dim(2) != lv.dim(3))
    throw std::invalid_argument("softmax_cross_entropy_2d: bad shapes");
  const int64_t n = lv.dim(0), k = lv.dim(1), hw = lv.dim(2) * lv.dim(3);
  Tensor soft(lv.shape());
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t p = 0; p < hw; ++p) {
      double mx = lv[(i * k) * hw + p];
      for (int64_t j = 1; j < k; ++j) mx = std::max(mx, lv[(i * k + j) * hw + p]);
      double denom = 0.0;
      for (int64_t j = 0; j < k; ++j) denom += std::exp(lv[(i * k + j) * hw + p] - mx);
      const double lse = mx + std::log(denom);
      for (int64_t j = 0; j < k; ++j) soft[(i * k + j) * hw + p] = std::exp(lv[(i * k + j) * hw + p] - lse);
      const int32_t y = labels[i * hw + p];
      if (y < 0 || y >= k) throw std::invalid_argument("softmax_cross_entropy_2d: label out of range");
      loss += lse - lv[(i * k + y) * hw + p];
    }
  }
  loss /= static_cast<double>(n * hw);
  return make_op(Tensor::scalar(loss), {logits}, [logits, soft, labels, n, k, hw](Node& nd) {
    const double g0 = nd.grad[0] / static_cast<double>(n * hw);
    add_grad(logits, [&](Tensor& g) {
      for (int64_t i = 0; i < n; ++i)
        for (int64_t p = 0; p < hw; ++p) {
          for (int64_t j = 0; j < k; ++j) g[(i * k + j) * hw + p] += g0 * soft[(i * k + j) * hw + p];
          g[(i * k + labels[i * hw + p]) * hw + p] -= g0;
        }
    });
  });
}

// ---------- affine pack/unpack (per-sample 2x3 matrices) ----------

/// Extract component `idx` (0..5, row-major over the 2x3 matrix) of a batch of
/// affine parameters [n,2,3] as an [n] vector.
inline Var affine_component(const Var& theta, int idx) {
  const Tensor& tv = theta->val;
  if (tv.ndim() != 3 || tv.dim(1) != 2 || tv.dim(2) != 3)
    throw std::invalid_argument("affine_component: expect [n,2,3]");
  const int64_t n = tv.dim(0);
  Tensor out({n});
  for (int64_t i = 0; i < n; ++i) out[i] = tv[i * 6 + idx];
  return make_op(std::move(out), {theta}, [theta, idx, n](Node& nd) {
    add_grad(theta, [&](Tensor& g) {
      for (int64_t i = 0; i < n; ++i) g[i * 6 + idx] += nd.grad[i];
    });
  });
}

/// Assemble six [n] vectors (row-major components) into [n,2,3].
inline Var affine_pack(const std::array<Var, 6>& c) {
  const int64_t n = c[0]->val.numel();
  for (const auto& v : c)
    if (v->val.numel() != n) throw std::invalid_argument("affine_pack: inconsistent lengths");
  Tensor out({n, 2, 3});
  for (int64_t i = 0; i < n; ++i)
    for (int j = 0; j < 6; ++j) out[i * 6 + j] = c[static_cast<size_t>(j)]->val[i];
  std::vector<Var> parents(c.begin(), c.end());
  return make_op(std::move(out), parents, [c, n](Node& nd) {
    for (int j = 0; j < 6; ++j)
      add_grad(c[static_cast<size_t>(j)], [&](Tensor& g) {
        for (int64_t i = 0; i < n; ++i) g[i] += nd.grad[i * 6 + j];
      });
  });
}

}  // namespace oaug
