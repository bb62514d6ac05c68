#pragma once

#include "oaug/augment/augmenter.hpp"
#include "oaug/augment/vae.hpp"

namespace oaug {

struct DVaeWeights {
  double lambda_vae = 1.0;      // reconstruction + KL
  double lambda_smooth = 10.0;  // deformation smoothness
  double beta = 1e-2;           // adversarial weight
};

struct DVaeResult {
  Var x_def;
  Var delta;  // [n,h,w,2] grid-map offsets
  LatentStats stats;
  Var grid;
  std::optional<IntTensor> mask_def;
};

/// Deformation augmenter: a VAE whose decoder emits per-pixel sampling-offset
/// deltas added to the identity grid; the warped input doubles as the VAE
/// reconstruction.
class DVae : public Augmenter {
 public:
  DVae(Rng& rng, int64_t in_channels, int64_t image_size, DVaeWeights weights = {},
       int64_t base_channels = 32, int64_t latent_dim = 32)
      : weights_(weights),
        vae_(rng, VaeConfig{in_channels, image_size, base_channels, latent_dim, 2, 512}) {}

  const std::string& name() const override {
    static const std::string n = "dvae";
    return n;
  }
  double beta() const override { return weights_.beta; }
  std::string arch_desc() const override { return vae_.arch_desc("dvae"); }

  LatentStats encode(const Var& x) const { return vae_.encode(x); }

  Tensor draw_eps(int64_t n, Rng& rng) const { return rng.normal_tensor({n, vae_.cfg_.latent_dim}); }

  DVaeResult augment(const Tensor& x, const Tensor& eps, const IntTensor* masks = nullptr) const {
    DVaeResult r;
    Var xc = make_const(x);
    r.stats = vae_.encode(xc);
    Var z = reparameterize(r.stats, eps);
    r.delta = chw2_to_hwc2(vae_.decode(z));
    r.grid = add(r.delta, make_const(batched_identity(x.dim(0), x.dim(2), x.dim(3))));
    r.x_def = grid_sample_bilinear(xc, r.grid);
    if (masks) r.mask_def = grid_sample_nearest(*masks, r.grid->val);
    return r;
  }

  /// lambda_vae * (recon + KL) + lambda_smooth * smoothness, all on the same
  /// draws as augment().
  Var regularizer_of(const Tensor& x, const DVaeResult& r) const {
    Var vae_term = add(mse(make_const(x), r.x_def), kl_diag_gaussian(r.stats));
    return add(scale(vae_term, weights_.lambda_vae),
               scale(smoothness_loss(r.delta), weights_.lambda_smooth));
  }

  Var regularizer(const Tensor& x, const Tensor& eps) const {
    return regularizer_of(x, augment(x, eps));
  }

  AugmenterOutput forward_full(const FwdCtx& ctx, const Tensor& images, const IntTensor* masks,
                               Rng& draws) override {
    (void)ctx;  // the VAE has no mode-dependent layers
    const Tensor eps = draw_eps(images.dim(0), draws);
    DVaeResult r = augment(images, eps, masks);
    AugmenterOutput out;
    out.views = {r.x_def};
    if (masks) out.mask_views = {*r.mask_def};
    out.grids = {r.grid};
    out.reg_weighted = regularizer_of(images, r);
    out.reg_value = out.reg_weighted->val.item();
    return out;
  }

  void collect(const std::string& prefix, ParamMap& out) override { vae_.collect(prefix, out); }

  static Tensor batched_identity(int64_t n, int64_t h, int64_t w) {
    const Tensor id = identity_grid(h, w);
    Tensor out({n, h, w, 2});
    for (int64_t i = 0; i < n; ++i)
      std::memcpy(out.data() + i * id.numel(), id.data(), static_cast<size_t>(id.numel()) * sizeof(double));
    return out;
  }

  DVaeWeights weights_;
  ConvVae vae_;
};

}  // namespace oaug
