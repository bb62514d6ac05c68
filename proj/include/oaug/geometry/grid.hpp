#pragma once

#include "oaug/core/conv.hpp"
#include "oaug/core/ops.hpp"

namespace oaug {

/// Thrown when an affine transform's linear part is too close to singular.
struct SingularTransform : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr double kAffineDetTolerance = 1e-6;

// Normalized coordinates are corner-aligned: (-1,-1) is the center of the
// top-left pixel, (+1,+1) the center of the bottom-right pixel. Values outside
// [-1,1] are legal; bilinear sampling zero-pads, nearest sampling of label
// masks yields background class 0.

inline double norm_coord(int64_t idx, int64_t extent) {
  return extent > 1 ? -1.0 + 2.0 * static_cast<double>(idx) / static_cast<double>(extent - 1) : 0.0;
}

/// [h,w,2] grid with coords(i,j) = (x_j, y_i).
inline Tensor identity_grid(int64_t h, int64_t w) {
  if (h < 1 || w < 1) throw std::invalid_argument("identity_grid: dimensions must be positive");
  Tensor g({h, w, 2});
  for (int64_t i = 0; i < h; ++i) {
    const double y = norm_coord(i, h);
    for (int64_t j = 0; j < w; ++j) {
      g[(i * w + j) * 2 + 0] = norm_coord(j, w);
      g[(i * w + j) * 2 + 1] = y;
    }
  }
  return g;
}

/// Map the identity grid through a batch of affine matrices [n,2,3] (or a
/// single [2,3]); returns [n,h,w,2] (or [h,w,2]). Differentiable w.r.t. theta.
inline Var affine_to_grid(const Var& theta, int64_t h, int64_t w) {
  const Tensor& tv = theta->val;
  const bool batched = tv.ndim() == 3;
  if (!(batched && tv.dim(1) == 2 && tv.dim(2) == 3) && !(tv.ndim() == 2 && tv.dim(0) == 2 && tv.dim(1) == 3))
    throw std::invalid_argument("affine_to_grid: theta must be [n,2,3] or [2,3]");
  if (!tv.all_finite()) throw std::invalid_argument("affine_to_grid: non-finite affine parameters");
  if (h < 1 || w < 1) throw std::invalid_argument("affine_to_grid: dimensions must be positive");
  const int64_t n = batched ? tv.dim(0) : 1;

  Tensor out(batched ? Shape{n, h, w, 2} : Shape{h, w, 2});
  for (int64_t s = 0; s < n; ++s) {
    const double* m = tv.data() + s * 6;
    double* o = out.data() + s * h * w * 2;
    for (int64_t i = 0; i < h; ++i) {
      const double y = norm_coord(i, h);
      for (int64_t j = 0; j < w; ++j) {
        const double x = norm_coord(j, w);
        o[(i * w + j) * 2 + 0] = m[0] * x + m[1] * y + m[2];
        o[(i * w + j) * 2 + 1] = m[3] * x + m[4] * y + m[5];
      }
    }
  }
  return make_op(std::move(out), {theta}, [theta, n, h, w](Node& nd) {
    add_grad(theta, [&](Tensor& g) {
      for (int64_t s = 0; s < n; ++s) {
        double* gm = g.data() + s * 6;
        const double* go = nd.grad.data() + s * h * w * 2;
        for (int64_t i = 0; i < h; ++i) {
          const double y = norm_coord(i, h);
          for (int64_t j = 0; j < w; ++j) {
            const double x = norm_coord(j, w);
            const double gx = go[(i * w + j) * 2 + 0], gy = go[(i * w + j) * 2 + 1];
            gm[0] += gx * x;
            gm[1] += gx * y;
            gm[2] += gx;
            gm[3] += gy * x;
            gm[4] += gy * y;
            gm[5] += gy;
          }
        }
      }
    });
  });
}

namespace detail {
inline void check_grid_shapes(const Tensor& x, const Tensor& g, int64_t& oh, int64_t& ow,
                              bool& shared) {
  if (x.ndim() != 4) throw std::invalid_argument("grid_sample: input must be [n,c,h,w]");
  if (g.ndim() == 3 && g.dim(2) == 2) {
    shared = true;
    oh = g.dim(0);
    ow = g.dim(1);
  } else if (g.ndim() == 4 && g.dim(3) == 2) {
    shared = false;
    if (g.dim(0) != x.dim(0))
      throw std::invalid_argument("grid_sample: grid batch does not match input batch");
    oh = g.dim(1);
    ow = g.dim(2);
  } else {
    throw std::invalid_argument("grid_sample: grid must be [h,w,2] or [n,h,w,2]");
  }
}
}  // namespace detail

/// Bilinear sampling of x[n,c,h,w] at normalized grid coords; zero padding.
/// Differentiable w.r.t. both the input and the grid.
inline Var grid_sample_bilinear(const Var& x, const Var& grid) {
  const Tensor &xv = x->val, &gv = grid->val;
  int64_t oh = 0, ow = 0;
  bool shared = false;
  detail::check_grid_shapes(xv, gv, oh, ow, shared);
  const int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);

  Tensor out({n, c, oh, ow});
  const double sx = 0.5 * static_cast<double>(w - 1), sy = 0.5 * static_cast<double>(h - 1);
  auto sample_val = [&](int64_t s, int64_t ch, int64_t yy, int64_t xx) -> double {
    return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? xv[((s * c + ch) * h + yy) * w + xx] : 0.0;
  };
  for (int64_t s = 0; s < n; ++s) {
    const double* gp = gv.data() + (shared ? 0 : s * oh * ow * 2);
    for (int64_t p = 0; p < oh * ow; ++p) {
      const double px = (gp[p * 2 + 0] + 1.0) * sx;
      const double py = (gp[p * 2 + 1] + 1.0) * sy;
      const int64_t x0 = static_cast<int64_t>(std::floor(px)), y0 = static_cast<int64_t>(std::floor(py));
      const double wx1 = px - static_cast<double>(x0), wy1 = py - static_cast<double>(y0);
      const double wx0 = 1.0 - wx1, wy0 = 1.0 - wy1;
      for (int64_t ch = 0; ch < c; ++ch) {
        out[((s * c + ch) * oh) * ow + p] =
            wy0 * (wx0 * sample_val(s, ch, y0, x0) + wx1 * sample_val(s, ch, y0, x0 + 1)) +
            wy1 * (wx0 * sample_val(s, ch, y0 + 1, x0) + wx1 * sample_val(s, ch, y0 + 1, x0 + 1));
      }
    }
  }

  return make_op(std::move(out), {x, grid}, [x, grid, n, c, h, w, oh, ow, shared, sx, sy](Node& nd) {
    const Tensor& xv2 = x->val;
    const Tensor& gv2 = grid->val;
    auto val_at = [&](int64_t s, int64_t ch, int64_t yy, int64_t xx) -> double {
      return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? xv2[((s * c + ch) * h + yy) * w + xx] : 0.0;
    };
    const bool want_x = x->requires_grad, want_g = grid->requires_grad;
    for (int64_t s = 0; s < n; ++s) {
      const double* gp = gv2.data() + (shared ? 0 : s * oh * ow * 2);
      double* gg = want_g ? grid->grad.data() + (shared ? 0 : s * oh * ow * 2) : nullptr;
      for (int64_t p = 0; p < oh * ow; ++p) {
        const double px = (gp[p * 2 + 0] + 1.0) * sx;
        const double py = (gp[p * 2 + 1] + 1.0) * sy;
        const int64_t x0 = static_cast<int64_t>(std::floor(px)), y0 = static_cast<int64_t>(std::floor(py));
        const double wx1 = px - static_cast<double>(x0), wy1 = py - static_cast<double>(y0);
        const double wx0 = 1.0 - wx1, wy0 = 1.0 - wy1;
        double dpx = 0.0, dpy = 0.0;
        for (int64_t ch = 0; ch < c; ++ch) {
          const double go = nd.grad[((s * c + ch) * oh) * ow + p];
          if (go == 0.0) continue;
          if (want_x) {
            double* gx = x->grad.data() + ((s * c + ch) * h) * w;
            auto add_at = [&](int64_t yy, int64_t xx, double wgt) {
              if (yy >= 0 && yy < h && xx >= 0 && xx < w) gx[yy * w + xx] += go * wgt;
            };
            add_at(y0, x0, wy0 * wx0);
            add_at(y0, x0 + 1, wy0 * wx1);
            add_at(y0 + 1, x0, wy1 * wx0);
            add_at(y0 + 1, x0 + 1, wy1 * wx1);
          }
          if (want_g) {
            const double v00 = val_at(s, ch, y0, x0), v01 = val_at(s, ch, y0, x0 + 1);
            const double v10 = val_at(s, ch, y0 + 1, x0), v11 = val_at(s, ch, y0 + 1, x0 + 1);
            dpx += go * (wy0 * (v01 - v00) + wy1 * (v11 - v10));
            dpy += go * (wx0 * (v10 - v00) + wx1 * (v11 - v01));
          }
        }
        if (want_g) {
          gg[p * 2 + 0] += dpx * sx;
          gg[p * 2 + 1] += dpy * sy;
        }
      }
    }
  });
}

/// Nearest-neighbor sampling for label masks [n,h,w]; the same grid that
/// warped the paired images. Out-of-bounds targets get background class 0.
/// Not differentiated.
inline IntTensor grid_sample_nearest(const IntTensor& masks, const Tensor& grid) {
  if (masks.ndim() != 3) throw std::invalid_argument("grid_sample_nearest: masks must be [n,h,w]");
  int64_t oh = 0, ow = 0;
  bool shared = false;
  if (grid.ndim() == 3 && grid.dim(2) == 2) {
    shared = true;
    oh = grid.dim(0);
    ow = grid.dim(1);
  } else if (grid.ndim() == 4 && grid.dim(3) == 2 && grid.dim(0) == masks.dim(0)) {
    oh = grid.dim(1);
    ow = grid.dim(2);
  } else {
    throw std::invalid_argument("grid_sample_nearest: bad grid shape");
  }
  const int64_t n = masks.dim(0), h = masks.dim(1), w = masks.dim(2);
  const double sx = 0.5 * static_cast<double>(w - 1), sy = 0.5 * static_cast<double>(h - 1);
  IntTensor out({n, oh, ow});
  for (int64_t s = 0; s < n; ++s) {
    const double* gp = grid.data() + (shared ? 0 : s * oh * ow * 2);
    for (int64_t p = 0; p < oh * ow; ++p) {
      const int64_t xx = std::llround((gp[p * 2 + 0] + 1.0) * sx);
      const int64_t yy = std::llround((gp[p * 2 + 1] + 1.0) * sy);
      out[s * oh * ow + p] =
          (yy >= 0 && yy < h && xx >= 0 && xx < w) ? masks[(s * h + yy) * w + xx] : 0;
    }
  }
  return out;
}

inline double affine_det(const Tensor& m, int64_t sample = 0) {
  const double* p = m.data() + sample * 6;
  return p[0] * p[4] - p[1] * p[3];
}

/// Plain (non-differentiable) inverse of a single 2x3 affine matrix: the top
/// two rows of the inverse of the augmented 3x3 matrix.
inline Tensor invert_affine(const Tensor& m) {
  if (!(m.ndim() == 2 && m.dim(0) == 2 && m.dim(1) == 3))
    throw std::invalid_argument("invert_affine: expect [2,3]");
  if (!m.all_finite()) throw std::invalid_argument("invert_affine: non-finite entries");
  const double a = m[0], b = m[1], tx = m[2], c = m[3], d = m[4], ty = m[5];
  const double det = a * d - b * c;
  if (std::fabs(det) < kAffineDetTolerance)
    throw SingularTransform("invert_affine: |det| below tolerance");
  return Tensor::of({2, 3}, {d / det, -b / det, (b * ty - d * tx) / det,
                             -c / det, a / det, (c * tx - a * ty) / det});
}

/// Differentiable batched inverse on [n,2,3], built from primitive ops so the
/// gradient follows automatically.
inline Var invert_affine_op(const Var& theta) {
  const Tensor& tv = theta->val;
  if (!(tv.ndim() == 3 && tv.dim(1) == 2 && tv.dim(2) == 3))
    throw std::invalid_argument("invert_affine_op: expect [n,2,3]");
  for (int64_t s = 0; s < tv.dim(0); ++s)
    if (std::fabs(affine_det(tv, s)) < kAffineDetTolerance)
      throw SingularTransform("invert_affine_op: |det| below tolerance");
  const Var a = affine_component(theta, 0), b = affine_component(theta, 1),
            tx = affine_component(theta, 2), c = affine_component(theta, 3),
            d = affine_component(theta, 4), ty = affine_component(theta, 5);
  const Var det = sub(mul(a, d), mul(b, c));
  return affine_pack({div(d, det), neg(div(b, det)), div(sub(mul(b, ty), mul(d, tx)), det),
                      neg(div(c, det)), div(a, det), div(sub(mul(c, tx), mul(a, ty)), det)});
}

/// Compose two affine maps as coordinate maps: result(p) = m1(m2(p)).
inline Tensor compose_affine(const Tensor& m1, const Tensor& m2) {
  const double a1 = m1[0], b1 = m1[1], t1 = m1[2], c1 = m1[3], d1 = m1[4], u1 = m1[5];
  const double a2 = m2[0], b2 = m2[1], t2 = m2[2], c2 = m2[3], d2 = m2[4], u2 = m2[5];
  return Tensor::of({2, 3}, {a1 * a2 + b1 * c2, a1 * b2 + b1 * d2, a1 * t2 + b1 * u2 + t1,
                             c1 * a2 + d1 * c2, c1 * b2 + d1 * d2, c1 * t2 + d1 * u2 + u1});
}

/// Warp x with theta under sample-coordinate semantics:
/// tau(x)(p) = x(theta . p).
inline Var warp_affine(const Var& x, const Var& theta) {
  return grid_sample_bilinear(x, affine_to_grid(theta, x->val.dim(2), x->val.dim(3)));
}

/// Double cycle-consistency: mean((tau_inv(tau(x)) - x)^2) + mean((tau(tau_inv(x)) - x)^2).
/// theta may be [2,3] (shared) or [n,2,3] (per sample); differentiable w.r.t.
/// both x and theta.
inline Var double_cycle_loss(const Var& x, const Var& theta) {
  Var th = theta;
  if (theta->val.ndim() == 2) th = reshape(theta, {1, 2, 3});
  const int64_t h = x->val.dim(2), w = x->val.dim(3);
  const Var th_inv = invert_affine_op(th);
  const Var g_fwd = affine_to_grid(th, h, w);
  const Var g_inv = affine_to_grid(th_inv, h, w);
  const Var cycle_a = grid_sample_bilinear(grid_sample_bilinear(x, g_fwd), g_inv);
  const Var cycle_b = grid_sample_bilinear(grid_sample_bilinear(x, g_inv), g_fwd);
  return add(mse(cycle_a, x), mse(cycle_b, x));
}

/// Mean over directed 4-neighborhood pairs of ||delta(i) - delta(j)||^2 on a
/// [n,h,w,2] (or [h,w,2]) delta field. Single-pixel fields give 0.
inline Var smoothness_loss(const Var& delta) {
  const Tensor& dv = delta->val;
  const bool batched = dv.ndim() == 4;
  if (!(batched && dv.dim(3) == 2) && !(dv.ndim() == 3 && dv.dim(2) == 2))
    throw std::invalid_argument("smoothness_loss: expect [n,h,w,2] or [h,w,2]");
  const int64_t n = batched ? dv.dim(0) : 1;
  const int64_t h = batched ? dv.dim(1) : dv.dim(0);
  const int64_t w = batched ? dv.dim(2) : dv.dim(1);
  const int64_t directed_pairs = n * 2 * (h * (w - 1) + w * (h - 1));
  if (directed_pairs == 0)
    return make_op(Tensor::scalar(0.0), {delta}, [](Node&) {});

  const double inv_p = 1.0 / static_cast<double>(directed_pairs);
  double acc = 0.0;
  for (int64_t s = 0; s < n; ++s) {
    const double* dp = dv.data() + s * h * w * 2;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j)
        for (int64_t k = 0; k < 2; ++k) {
          const double v = dp[(i * w + j) * 2 + k];
          if (j + 1 < w) {
            const double e = v - dp[(i * w + j + 1) * 2 + k];
            acc += 2.0 * e * e;  // both directed orientations
          }
          if (i + 1 < h) {
            const double e = v - dp[((i + 1) * w + j) * 2 + k];
            acc += 2.0 * e * e;
          }
        }
  }
  return make_op(Tensor::scalar(acc * inv_p), {delta}, [delta, n, h, w, inv_p](Node& nd) {
    const double g0 = nd.grad[0] * inv_p;
    add_grad(delta, [&](Tensor& g) {
      const Tensor& dv2 = delta->val;
      for (int64_t s = 0; s < n; ++s) {
        const double* dp = dv2.data() + s * h * w * 2;
        double* gp = g.data() + s * h * w * 2;
        for (int64_t i = 0; i < h; ++i)
          for (int64_t j = 0; j < w; ++j)
            for (int64_t k = 0; k < 2; ++k) {
              const double v = dp[(i * w + j) * 2 + k];
              if (j + 1 < w) {
                const double e = v - dp[(i * w + j + 1) * 2 + k];
                gp[(i * w + j) * 2 + k] += g0 * 4.0 * e;
                gp[(i * w + j + 1) * 2 + k] -= g0 * 4.0 * e;
              }
              if (i + 1 < h) {
                const double e = v - dp[((i + 1) * w + j) * 2 + k];
                gp[(i * w + j) * 2 + k] += g0 * 4.0 * e;
                gp[((i + 1) * w + j) * 2 + k] -= g0 * 4.0 * e;
              }
            }
      }
    });
  });
}

}  // namespace oaug
