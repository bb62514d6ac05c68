#pragma once

#include "oaug/augment/augmenter.hpp"
#include "oaug/augment/vae.hpp"

namespace oaug {

struct PVaeWeights {
  double lambda_vae = 1e-3;  // noise-energy + KL
  double beta = 10.0;        // adversarial weight
};

struct PVaeResult {
  Var x_pert;
  Var noise;  // additive map, same shape as the input
  LatentStats stats;
};

/// Intensity perturbation augmenter: the VAE decoder emits an additive noise
/// map; the perturbed input x + noise doubles as the reconstruction, so the
/// reconstruction term reduces to the noise energy.
class PVae : public Augmenter {
 public:
  PVae(Rng& rng, int64_t in_channels, int64_t image_size, PVaeWeights weights = {},
       int64_t base_channels = 32, int64_t latent_dim = 8)
      : weights_(weights),
        vae_(rng, VaeConfig{in_channels, image_size, base_channels, latent_dim, in_channels, 512}) {}

  const std::string& name() const override {
    static const std::string n = "pvae";
    return n;
  }
  double beta() const override { return weights_.beta; }
  std::string arch_desc() const override { return vae_.arch_desc("pvae"); }

  LatentStats encode(const Var& x) const { return vae_.encode(x); }

  Tensor draw_eps(int64_t n, Rng& rng) const { return rng.normal_tensor({n, vae_.cfg_.latent_dim}); }

  PVaeResult augment(const Tensor& x, const Tensor& eps) const {
    PVaeResult r;
    Var xc = make_const(x);
    r.stats = vae_.encode(xc);
    r.noise = vae_.decode(reparameterize(r.stats, eps));
    r.x_pert = add(xc, r.noise);
    return r;
  }

  /// lambda_vae * (mean ||noise||^2 + KL)
  Var regularizer_of(const PVaeResult& r) const {
    return scale(add(mean_all(square(r.noise)), kl_diag_gaussian(r.stats)), weights_.lambda_vae);
  }

  Var regularizer(const Tensor& x, const Tensor& eps) const { return regularizer_of(augment(x, eps)); }

  AugmenterOutput forward_full(const FwdCtx& ctx, const Tensor& images, const IntTensor* masks,
                               Rng& draws) override {
    (void)ctx;
    PVaeResult r = augment(images, draw_eps(images.dim(0), draws));
    AugmenterOutput out;
    out.views = {r.x_pert};
    if (masks) out.mask_views = {*masks};  // intensity-only: labels unchanged
    out.reg_weighted = regularizer_of(r);
    out.reg_value = out.reg_weighted->val.item();
    return out;
  }

  void collect(const std::string& prefix, ParamMap& out) override { vae_.collect(prefix, out); }

  PVaeWeights weights_;
  ConvVae vae_;
};

}  // namespace oaug
