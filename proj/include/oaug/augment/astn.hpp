#pragma once

#include <memory>

#include "oaug/augment/augmenter.hpp"
#include "oaug/nn/layers.hpp"

namespace oaug {

struct AStnWeights {
  double lambda_cycle = 0.1;  // cycle-consistency weight
  double beta = 0.1;          // adversarial weight
};

/// Result of applying the generated transform and its inverse to a batch.
struct AStnTransform {
  Var theta;  // [n,2,3]
  Var x_fwd;
  Var x_inv;
  Var grid_fwd;
  Var grid_inv;
  std::optional<IntTensor> mask_fwd;
  std::optional<IntTensor> mask_inv;
};

/// Noise-conditioned spatial transform augmenter: a 6-layer MLP mapping one
/// Gaussian scalar per sample to a 2x3 affine matrix. Hidden layers are
/// width 8 with batch norm, ReLU, and dropout 0.5; the final layer starts at
/// zero weights with an identity bias so a fresh model transforms nothing.
/// The matrix and its inverse are both applied to the batch.
class AStn : public Augmenter {
 public:
  static constexpr int kHidden = 8;
  static constexpr int kHiddenLayers = 5;

  AStn(Rng& rng, AStnWeights weights = {}, double dropout_p = 0.5, bool bn_training_mode = true)
      : weights_(weights), dropout_(dropout_p), bn_training_mode_(bn_training_mode) {
    int64_t in = 1;
    for (int i = 0; i < kHiddenLayers; ++i) {
      hidden_.emplace_back(rng, in, kHidden);
      norms_.emplace_back(kHidden, /*banks=*/1);
      in = kHidden;
    }
    out_ = std::make_unique<LinearLayer>(rng, kHidden, 6);
    out_->w_->val.fill(0.0);
    const double identity_bias[6] = {1, 0, 0, 0, 1, 0};
    for (int i = 0; i < 6; ++i) out_->b_->val[i] = identity_bias[i];
  }

  const std::string& name() const override {
    static const std::string n = "astn";
    return n;
  }
  double beta() const override { return weights_.beta; }
  std::string arch_desc() const override { return "astn:mlp1x8x5x6"; }

  Tensor draw_noise(int64_t n, Rng& rng) const { return rng.normal_tensor({n, 1}); }

  /// MLP pass z[n,1] -> theta[n,2,3], with near-singular outputs blended
  /// toward the identity just enough to restore |det| >= tolerance.
  Var localize(const FwdCtx& ctx, const Tensor& z) const {
    FwdCtx bn_ctx = ctx;
    if (!bn_training_mode_) {
      bn_ctx.training = false;
      bn_ctx.update_bn = false;
    }
    Var h = make_const(z);
    for (size_t i = 0; i < hidden_.size(); ++i) {
      h = hidden_[i].forward(h);
      h = const_cast<BatchNormLayer&>(norms_[i]).forward(bn_ctx, h);
      h = relu(h);
      h = dropout_.forward(ctx, h);
    }
    Var theta = reshape(out_->forward(h), {z.dim(0), 2, 3});
    return clamp_degenerate(theta);
  }

  AStnTransform transform(const FwdCtx& ctx, const Tensor& x, const Tensor& z,
                          const IntTensor* masks = nullptr) const {
    if (z.ndim() != 2 || z.dim(1) != 1 || z.dim(0) != x.dim(0))
      throw std::invalid_argument("astn: noise must be [n,1] matching the batch");
    Var theta = localize(ctx, z);
    bool degenerate = false;
    for (int64_t s = 0; s < theta->val.dim(0); ++s)
      if (std::fabs(affine_det(theta->val, s)) < kAffineDetTolerance) degenerate = true;
    if (degenerate) throw SingularTransform("astn: degenerate transform after clamping");
    return apply_theta(x, theta, masks);
  }

  /// Warp with an externally chosen theta (test hook for the transform path).
  AStnTransform apply_theta(const Tensor& x, const Var& theta, const IntTensor* masks = nullptr) const {
    AStnTransform r;
    r.theta = theta;
    Var theta_inv = invert_affine_op(theta);
    r.grid_fwd = affine_to_grid(theta, x.dim(2), x.dim(3));
    r.grid_inv = affine_to_grid(theta_inv, x.dim(2), x.dim(3));
    Var xc = make_const(x);
    r.x_fwd = grid_sample_bilinear(xc, r.grid_fwd);
    r.x_inv = grid_sample_bilinear(xc, r.grid_inv);
    if (masks) {
      r.mask_fwd = grid_sample_nearest(*masks, r.grid_fwd->val);
      r.mask_inv = grid_sample_nearest(*masks, r.grid_inv->val);
    }
    return r;
  }

  /// Unweighted double cycle-consistency regularizer for the given draws.
  Var regularizer(const FwdCtx& ctx, const Tensor& x, const Tensor& z) const {
    return double_cycle_loss(make_const(x), localize(ctx, z));
  }

  AugmenterOutput forward_full(const FwdCtx& ctx, const Tensor& images, const IntTensor* masks,
                               Rng& draws) override {
    Tensor z = draw_noise(images.dim(0), draws);
    Var theta = localize(ctx, z);
    bool degenerate = false;
    for (int64_t s = 0; s < theta->val.dim(0); ++s)
      if (std::fabs(affine_det(theta->val, s)) < kAffineDetTolerance) degenerate = true;
    if (degenerate) {
      // one fresh draw, then clamp_degenerate (inside localize) guarantees
      // invertibility
      z = draw_noise(images.dim(0), draws);
      theta = localize(ctx, z);
    }
    AStnTransform t = apply_theta(images, theta, masks);

    AugmenterOutput out;
    out.views = {t.x_fwd, t.x_inv};
    if (masks) out.mask_views = {*t.mask_fwd, *t.mask_inv};
    out.grids = {t.grid_fwd, t.grid_inv};
    out.reg_weighted = scale(double_cycle_loss(make_const(images), theta), weights_.lambda_cycle);
    out.reg_value = out.reg_weighted->val.item();
    return out;
  }

  void collect(const std::string& prefix, ParamMap& out) override {
    for (size_t i = 0; i < hidden_.size(); ++i) {
      hidden_[i].collect(prefix + ".fc" + std::to_string(i), out);
      norms_[i].collect(prefix + ".bn" + std::to_string(i), out);
    }
    out_->collect(prefix + ".out", out);
  }

  AStnWeights weights_;

 private:
  /// For samples whose linear part has |det| < tolerance, blend it toward the
  /// identity by the minimal factor restoring the threshold. The blend factor
  /// is data-dependent but treated as constant in the gradient.
  Var clamp_degenerate(const Var& theta) const {
    const Tensor& tv = theta->val;
    const int64_t n = tv.dim(0);
    bool any = false;
    Tensor s_blend({n});
    for (int64_t i = 0; i < n; ++i) {
      s_blend[i] = 1.0;
      if (std::fabs(affine_det(tv, i)) >= kAffineDetTolerance) continue;
      any = true;
      const double a = tv[i * 6 + 0], b = tv[i * 6 + 1], c = tv[i * 6 + 3], d = tv[i * 6 + 4];
      const double target = kAffineDetTolerance * (1.0 + 1e-6);
      auto det_at = [&](double s) {
        const double as = 1.0 + s * (a - 1.0), bs = s * b, cs = s * c, ds = 1.0 + s * (d - 1.0);
        return std::fabs(as * ds - bs * cs);
      };
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (det_at(mid) >= target)
          lo = mid;
        else
          hi = mid;
      }
      s_blend[i] = lo;
    }
    if (!any) return theta;
    Tensor out = tv;
    for (int64_t i = 0; i < n; ++i) {
      const double s = s_blend[i];
      out[i * 6 + 0] = 1.0 + s * (tv[i * 6 + 0] - 1.0);
      out[i * 6 + 1] = s * tv[i * 6 + 1];
      out[i * 6 + 3] = s * tv[i * 6 + 3];
      out[i * 6 + 4] = 1.0 + s * (tv[i * 6 + 4] - 1.0);
    }
    return make_op(std::move(out), {theta}, [theta, s_blend, n](Node& nd) {
      add_grad(theta, [&](Tensor& g) {
        for (int64_t i = 0; i < n; ++i) {
          const double s = s_blend[i];
          g[i * 6 + 0] += s * nd.grad[i * 6 + 0];
          g[i * 6 + 1] += s * nd.grad[i * 6 + 1];
          g[i * 6 + 2] += nd.grad[i * 6 + 2];
          g[i * 6 + 3] += s * nd.grad[i * 6 + 3];
          g[i * 6 + 4] += s * nd.grad[i * 6 + 4];
          g[i * 6 + 5] += nd.grad[i * 6 + 5];
        }
      });
    });
  }

  std::vector<LinearLayer> hidden_;
  std::vector<BatchNormLayer> norms_;
  std::unique_ptr<LinearLayer> out_;
  DropoutLayer dropout_;
  bool bn_training_mode_;
};

}  // namespace oaug
