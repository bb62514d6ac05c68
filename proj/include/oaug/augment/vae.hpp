#pragma once

#include <memory>

#include "oaug/nn/layers.hpp"

namespace oaug {

/// Encoded diagonal Gaussian: mu and log-variance, each [n,k]. log_var is
/// clamped to [-10,10] by the encoder.
struct LatentStats {
  Var mu;
  Var log_var;
};

constexpr double kLogVarClamp = 10.0;

/// z = mu + exp(0.5 * log_var) * eps
inline Var reparameterize(const LatentStats& s, const Tensor& eps) {
  if (!(eps.same_shape(s.mu->val))) throw std::invalid_argument("reparameterize: eps shape mismatch");
  return add(s.mu, mul(exp_op(scale(s.log_var, 0.5)), make_const(eps)));
}

/// Mean over the batch of KL(N(mu, diag(exp(log_var))) || N(0, I)):
/// 0.5 * sum_k (mu^2 + exp(log_var) - 1 - log_var).
inline Var kl_diag_gaussian(const LatentStats& s) {
  const int64_t n = s.mu->val.dim(0);
  Var term = sub(add(square(s.mu), exp_op(s.log_var)), add_scalar(s.log_var, 1.0));
  return scale(sum_all(term), 0.5 / static_cast<double>(n));
}

struct VaeConfig {
  int64_t in_channels = 1;
  int64_t image_size = 16;  // must be 4 * 2^k for k >= 1
  int64_t base_channels = 32;
  int64_t latent_dim = 32;
  int64_t out_channels = 2;
  int64_t fc_features = 512;
};

/// Convolutional VAE skeleton shared by the deformation and perturbation
/// augmenters. Encoder: a 3x3 stem to base_channels, then per halving a
/// stride-2 3x3 conv doubling the channels followed by a stride-1 3x3 conv,
/// down to a 4x4 bottleneck; a linear layer to fc_features and two heads for
/// mean/log-variance. Decoder mirrors the encoder with transposed
/// convolutions; the final layer is a zero-initialized 1x1 conv so a fresh
/// model emits an all-zero map.
class ConvVae : public Module {
 public:
  ConvVae(Rng& rng, const VaeConfig& cfg) : cfg_(cfg) {
    int64_t steps = 0;
    int64_t s = cfg.image_size;
    while (s > 4) {
      if (s % 2 != 0) throw std::invalid_argument("vae: image size must be 4*2^k");
      s /= 2;
      ++steps;
    }
    if (s != 4 || steps < 1) throw std::invalid_argument("vae: image size must be 4*2^k, k>=1");

    int64_t ch = cfg.base_channels;
    enc_.emplace_back(rng, cfg.in_channels, ch, 3, 1, 1);
    for (int64_t i = 0; i < steps; ++i) {
      enc_.emplace_back(rng, ch, ch * 2, 3, 2, 1);
      ch *= 2;
      enc_.emplace_back(rng, ch, ch, 3, 1, 1);
    }
    bottleneck_ch_ = ch;
    flat_ = ch * 4 * 4;
    enc_fc_ = std::make_unique<LinearLayer>(rng, flat_, cfg.fc_features);
    mu_head_ = std::make_unique<LinearLayer>(rng, cfg.fc_features, cfg.latent_dim);
    logvar_head_ = std::make_unique<LinearLayer>(rng, cfg.fc_features, cfg.latent_dim);

    dec_fc1_ = std::make_unique<LinearLayer>(rng, cfg.latent_dim, cfg.fc_features);
    dec_fc2_ = std::make_unique<LinearLayer>(rng, cfg.fc_features, flat_);
    for (int64_t i = 0; i < steps; ++i) {
      dec_.emplace_back(rng, ch, ch, 3, 1, 1, 0);
      dec_.emplace_back(rng, ch, ch / 2, 3, 2, 1, 1);
      ch /= 2;
    }
    out_conv_ = std::make_unique<Conv2dLayer>(rng, ch, cfg.out_channels, 1, 1, 0);
    out_conv_->zero_init();
  }

  LatentStats encode(const Var& x) const {
    const Tensor& xv = x->val;
    if (xv.ndim() != 4 || xv.dim(1) != cfg_.in_channels || xv.dim(2) != cfg_.image_size ||
        xv.dim(3) != cfg_.image_size)
      throw std::invalid_argument("vae encode: input shape does not match architecture");
    Var h = x;
    for (const auto& conv : enc_) h = relu(conv.forward(h));
    h = reshape(h, {xv.dim(0), flat_});
    h = relu(enc_fc_->forward(h));
    return {mu_head_->forward(h), clamp(logvar_head_->forward(h), -kLogVarClamp, kLogVarClamp)};
  }

  /// z [n,latent] -> map [n,out_channels,image,image]
  Var decode(const Var& z) const {
    const int64_t n = z->val.dim(0);
    Var h = relu(dec_fc1_->forward(z));
    h = relu(dec_fc2_->forward(h));
    h = reshape(h, {n, bottleneck_ch_, 4, 4});
    for (const auto& tconv : dec_) h = relu(tconv.forward(h));
    return out_conv_->forward(h);
  }

  void collect(const std::string& prefix, ParamMap& out) override {
    for (size_t i = 0; i < enc_.size(); ++i) enc_[i].collect(prefix + ".enc" + std::to_string(i), out);
    enc_fc_->collect(prefix + ".enc_fc", out);
    mu_head_->collect(prefix + ".mu", out);
    logvar_head_->collect(prefix + ".logvar", out);
    dec_fc1_->collect(prefix + ".dec_fc1", out);
    dec_fc2_->collect(prefix + ".dec_fc2", out);
    for (size_t i = 0; i < dec_.size(); ++i) dec_[i].collect(prefix + ".dec" + std::to_string(i), out);
    out_conv_->collect(prefix + ".out", out);
  }

  std::string arch_desc(const char* kind) const {
    std::ostringstream os;
    os << kind << ":in" << cfg_.in_channels << ":s" << cfg_.image_size << ":b" << cfg_.base_channels
       << ":z" << cfg_.latent_dim << ":o" << cfg_.out_channels << ":f" << cfg_.fc_features;
    return os.str();
  }

  VaeConfig cfg_;
  int64_t bottleneck_ch_ = 0, flat_ = 0;
  std::vector<Conv2dLayer> enc_;
  std::unique_ptr<LinearLayer> enc_fc_, mu_head_, logvar_head_, dec_fc1_, dec_fc2_;
  std::vector<ConvTranspose2dLayer> dec_;
  std::unique_ptr<Conv2dLayer> out_conv_;
};

}  // namespace oaug
