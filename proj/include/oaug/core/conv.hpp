#pragma once

#include "oaug/core/ops.hpp"

namespace oaug {

// Convolutions as im2col/col2im plus GEMM. Weight layouts follow the usual
// convention: conv W[oc,ic,kh,kw], transposed conv W[ic,oc,kh,kw].

namespace detail {

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

/// cols[(c*k*k) x (oh*ow)] <- gather from src[c,h,w]; out-of-bounds reads are 0.
inline void im2col(const double* src, int64_t c, int64_t h, int64_t w, int64_t k, int64_t stride,
                   int64_t pad, int64_t oh, int64_t ow, double* cols) {
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t u = 0; u < k; ++u)
      for (int64_t v = 0; v < k; ++v) {
        double* dst = cols + ((ch * k + u) * k + v) * (oh * ow);
        for (int64_t i = 0; i < oh; ++i) {
          const int64_t y = i * stride + u - pad;
          for (int64_t j = 0; j < ow; ++j) {
            const int64_t x = j * stride + v - pad;
            dst[i * ow + j] =
                (y >= 0 && y < h && x >= 0 && x < w) ? src[(ch * h + y) * w + x] : 0.0;
          }
        }
      }
}

/// Scatter-add transpose of im2col: dst[c,h,w] += scatter(cols).
inline void col2im(const double* cols, int64_t c, int64_t h, int64_t w, int64_t k, int64_t stride,
                   int64_t pad, int64_t oh, int64_t ow, double* dst) {
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t u = 0; u < k; ++u)
      for (int64_t v = 0; v < k; ++v) {
        const double* src = cols + ((ch * k + u) * k + v) * (oh * ow);
        for (int64_t i = 0; i < oh; ++i) {
          const int64_t y = i * stride + u - pad;
          if (y < 0 || y >= h) continue;
          for (int64_t j = 0; j < ow; ++j) {
            const int64_t x = j * stride + v - pad;
            if (x >= 0 && x < w) dst[(ch * h + y) * w + x] += src[i * ow + j];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution: x[n,ic,h,w], w[oc,ic,k,k], b[oc].
inline Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride = 1, int64_t pad = 1) {
  const Tensor &xv = x->val, &wv = w->val;
  if (xv.ndim() != 4 || wv.ndim() != 4 || xv.dim(1) != wv.dim(1) || wv.dim(2) != wv.dim(3))
    throw std::invalid_argument("conv2d: bad shapes");
  const int64_t n = xv.dim(0), ic = xv.dim(1), h = xv.dim(2), win = xv.dim(3);
  const int64_t oc = wv.dim(0), k = wv.dim(2);
  if (b->val.numel() != oc) throw std::invalid_argument("conv2d: bad bias");
  const int64_t oh = detail::conv_out_dim(h, k, stride, pad), ow = detail::conv_out_dim(win, k, stride, pad);
  if (oh < 1 || ow < 1) throw std::invalid_argument("conv2d: output would be empty");

  Tensor out({n, oc, oh, ow});
  const int64_t ckk = ic * k * k, ohw = oh * ow;
  Tensor cols({n, ckk, ohw});  // kept for backward
  for (int64_t i = 0; i < n; ++i) {
    double* ci = cols.data() + i * ckk * ohw;
    detail::im2col(xv.data() + i * ic * h * win, ic, h, win, k, stride, pad, oh, ow, ci);
    MatMap om(out.data() + i * oc * ohw, oc, ohw);
    om.noalias() = ConstMatMap(wv.data(), oc, ckk) * ConstMatMap(ci, ckk, ohw);
    for (int64_t c = 0; c < oc; ++c) om.row(c).array() += b->val[c];
  }

  return make_op(std::move(out), {x, w, b},
                 [x, w, b, cols, n, ic, h, win, oc, k, stride, pad, oh, ow, ckk, ohw](Node& nd) {
    for (int64_t i = 0; i < n; ++i) {
      ConstMatMap gm(nd.grad.data() + i * oc * ohw, oc, ohw);
      const double* ci = cols.data() + i * ckk * ohw;
      add_grad(w, [&](Tensor& g) {
        MatMap(g.data(), oc, ckk).noalias() += gm * ConstMatMap(ci, ckk, ohw).transpose();
      });
      add_grad(b, [&](Tensor& g) {
        for (int64_t c = 0; c < oc; ++c) g[c] += gm.row(c).sum();
      });
      add_grad(x, [&](Tensor& g) {
        Tensor dcols({ckk, ohw});
        MatMap(dcols.data(), ckk, ohw).noalias() =
            ConstMatMap(w->val.data(), oc, ckk).transpose() * gm;
        detail::col2im(dcols.data(), ic, h, win, k, stride, pad, oh, ow, g.data() + i * ic * h * win);
      });
    }
  });
}

/// Transposed 2-D convolution: x[n,ic,h,w], w[ic,oc,k,k], b[oc].
/// Output spatial size: (h-1)*stride - 2*pad + k + out_pad.
inline Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int64_t stride = 1,
                            int64_t pad = 1, int64_t out_pad = 0) {
  const Tensor &xv = x->val, &wv = w->val;
  if (xv.ndim() != 4 || wv.ndim() != 4 || xv.dim(1) != wv.dim(0) || wv.dim(2) != wv.dim(3))
    throw std::invalid_argument("conv_transpose2d: bad shapes");
  const int64_t n = xv.dim(0), ic = xv.dim(1), h = xv.dim(2), win = xv.dim(3);
  const int64_t oc = wv.dim(1), k = wv.dim(2);
  if (b->val.numel() != oc) throw std::invalid_argument("conv_transpose2d: bad bias");
  const int64_t oh = (h - 1) * stride - 2 * pad + k + out_pad;
  const int64_t ow = (win - 1) * stride - 2 * pad + k + out_pad;
  if (oh < 1 || ow < 1) throw std::invalid_argument("conv_transpose2d: output would be empty");

  Tensor out({n, oc, oh, ow});
  const int64_t ckk = oc * k * k, ihw = h * win;
  for (int64_t i = 0; i < n; ++i) {
    Tensor cols({ckk, ihw});
    MatMap(cols.data(), ckk, ihw).noalias() =
        ConstMatMap(wv.data(), ic, ckk).transpose() * ConstMatMap(xv.data() + i * ic * ihw, ic, ihw);
    double* oi = out.data() + i * oc * oh * ow;
    detail::col2im(cols.data(), oc, oh, ow, k, stride, pad, h, win, oi);
    for (int64_t c = 0; c < oc; ++c)
      for (int64_t p = 0; p < oh * ow; ++p) oi[c * oh * ow + p] += b->val[c];
  }

  return make_op(std::move(out), {x, w, b},
                 [x, w, b, n, ic, h, win, oc, k, stride, pad, oh, ow, ckk, ihw](Node& nd) {
    for (int64_t i = 0; i < n; ++i) {
      // dcols = im2col(dy) under the same geometry used to scatter.
      Tensor dcols({ckk, ihw});
      detail::im2col(nd.grad.data() + i * oc * oh * ow, oc, oh, ow, k, stride, pad, h, win,
                     dcols.data());
      add_grad(x, [&](Tensor& g) {
        MatMap(g.data() + i * ic * ihw, ic, ihw).noalias() +=
            ConstMatMap(w->val.data(), ic, ckk) * ConstMatMap(dcols.data(), ckk, ihw);
      });
      add_grad(w, [&](Tensor& g) {
        MatMap(g.data(), ic, ckk).noalias() +=
            ConstMatMap(x->val.data() + i * ic * ihw, ic, ihw) *
            ConstMatMap(dcols.data(), ckk, ihw).transpose();
      });
      add_grad(b, [&](Tensor& g) {
        const double* gy = nd.grad.data() + i * oc * oh * ow;
        for (int64_t c = 0; c < oc; ++c)
          for (int64_t p = 0; p < oh * ow; ++p) g[c] += gy[c * oh * ow + p];
      });
    }
  });
}

/// 2x2 average pooling with stride 2 (spatial dims must be even).
inline Var avg_pool2(const Var& x) {
  const Tensor& xv = x->val;
  if (xv.ndim() != 4 || xv.dim(2) % 2 != 0 || xv.dim(3) % 2 != 0)
    throw std::invalid_argument("avg_pool2: expect even NCHW");
  const int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int64_t oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const double* s = xv.data() + nc * h * w;
    double* d = out.data() + nc * oh * ow;
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j)
        d[i * ow + j] = 0.25 * (s[(2 * i) * w + 2 * j] + s[(2 * i) * w + 2 * j + 1] +
                                s[(2 * i + 1) * w + 2 * j] + s[(2 * i + 1) * w + 2 * j + 1]);
  }
  return make_op(std::move(out), {x}, [x, n, c, h, w, oh, ow](Node& nd) {
    add_grad(x, [&](Tensor& g) {
      for (int64_t nc = 0; nc < n * c; ++nc) {
        double* gd = g.data() + nc * h * w;
        const double* gs = nd.grad.data() + nc * oh * ow;
        for (int64_t i = 0; i < oh; ++i)
          for (int64_t j = 0; j < ow; ++j) {
            const double gq = 0.25 * gs[i * ow + j];
            gd[(2 * i) * w + 2 * j] += gq;
            gd[(2 * i) * w + 2 * j + 1] += gq;
            gd[(2 * i + 1) * w + 2 * j] += gq;
            gd[(2 * i + 1) * w + 2 * j + 1] += gq;
          }
      }
    });
  });
}

/// [n,c,h,w] -> [n,c] mean over spatial positions.
inline Var global_avg_pool(const Var& x) {
  const Tensor& xv = x->val;
  if (xv.ndim() != 4) throw std::invalid_argument("global_avg_pool: expect NCHW");
  const int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor out({n, c});
  for (int64_t nc = 0; nc < n * c; ++nc) {
    double s = 0.0;
    for (int64_t p = 0; p < hw; ++p) s += xv[nc * hw + p];
    out[nc] = s / static_cast<double>(hw);
  }
  return make_op(std::move(out), {x}, [x, n, c, hw](Node& nd) {
    add_grad(x, [&](Tensor& g) {
      for (int64_t nc = 0; nc < n * c; ++nc) {
        const double gv = nd.grad[nc] / static_cast<double>(hw);
        for (int64_t p = 0; p < hw; ++p) g[nc * hw + p] += gv;
      }
    });
  });
}

}  // namespace oaug
