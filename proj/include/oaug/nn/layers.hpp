#pragma once

#include "oaug/core/conv.hpp"
#include "oaug/core/ops.hpp"
#include "oaug/nn/module.hpp"

namespace oaug {

class LinearLayer : public Module {
 public:
  LinearLayer(Rng& rng, int64_t in, int64_t out)
      : w_(init_uniform_fan_in(rng, {out, in}, in)), b_(init_uniform_fan_in(rng, {out}, in)) {}

  Var forward(const Var& x) const { return linear(x, w_, b_); }

  void collect(const std::string& prefix, ParamMap& out) override {
    out.add_param(prefix + ".w", w_);
    out.add_param(prefix + ".b", b_);
  }

  Var w_, b_;
};

class Conv2dLayer : public Module {
 public:
  Conv2dLayer(Rng& rng, int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride, int64_t pad)
      : stride_(stride),
        pad_(pad),
        w_(init_uniform_fan_in(rng, {out_ch, in_ch, k, k}, in_ch * k * k)),
        b_(init_uniform_fan_in(rng, {out_ch}, in_ch * k * k)) {}

  Var forward(const Var& x) const { return conv2d(x, w_, b_, stride_, pad_); }

  void collect(const std::string& prefix, ParamMap& out) override {
    out.add_param(prefix + ".w", w_);
    out.add_param(prefix + ".b", b_);
  }

  void zero_init() {
    w_->val.fill(0.0);
    b_->val.fill(0.0);
  }

  int64_t stride_, pad_;
  Var w_, b_;
};

class ConvTranspose2dLayer : public Module {
 public:
  ConvTranspose2dLayer(Rng& rng, int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride,
                       int64_t pad, int64_t out_pad)
      : stride_(stride),
        pad_(pad),
        out_pad_(out_pad),
        w_(init_uniform_fan_in(rng, {in_ch, out_ch, k, k}, out_ch * k * k)),
        b_(init_uniform_fan_in(rng, {out_ch}, out_ch * k * k)) {}

  Var forward(const Var& x) const { return conv_transpose2d(x, w_, b_, stride_, pad_, out_pad_); }

  void collect(const std::string& prefix, ParamMap& out) override {
    out.add_param(prefix + ".w", w_);
    out.add_param(prefix + ".b", b_);
  }

  int64_t stride_, pad_, out_pad_;
  Var w_, b_;
};

/// Batch normalization over [n,c] or [n,c,h,w] with `banks` independent sets
/// of affine parameters and running statistics. The active bank comes from the
/// forward context: bank 0 ("main") serves clean data and evaluation,
/// auxiliary banks serve augmented streams.
class BatchNormLayer : public Module {
 public:
  BatchNormLayer(int64_t channels, int banks, double momentum = 0.1, double eps = 1e-5)
      : channels_(channels), momentum_(momentum), eps_(eps) {
    for (int k = 0; k < banks; ++k) {
      gamma_.push_back(make_leaf(Tensor::full({channels}, 1.0)));
      beta_.push_back(make_leaf(Tensor::zeros({channels})));
      run_mean_.push_back(Tensor::zeros({channels}));
      run_var_.push_back(Tensor::full({channels}, 1.0));
    }
  }

  int banks() const { return static_cast<int>(gamma_.size()); }

  Var forward(const FwdCtx& ctx, const Var& x) {
    const Tensor& xv = x->val;
    if (!(xv.ndim() == 2 || xv.ndim() == 4) || xv.dim(1) != channels_)
      throw std::invalid_argument("batchnorm: bad input shape");
    if (ctx.bank < 0 || ctx.bank >= banks()) throw std::invalid_argument("batchnorm: bad bank");
    const Var gamma = gamma_[static_cast<size_t>(ctx.bank)];
    const Var beta = beta_[static_cast<size_t>(ctx.bank)];
    const int64_t n = xv.dim(0), c = channels_;
    const int64_t hw = xv.ndim() == 4 ? xv.dim(2) * xv.dim(3) : 1;
    const int64_t cnt = n * hw;  // reduce count per channel

    Tensor mean({c}), var({c});
    if (ctx.training) {
      for (int64_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int64_t i = 0; i < n; ++i)
          for (int64_t p = 0; p < hw; ++p) s += xv[(i * c + ch) * hw + p];
        mean[ch] = s / static_cast<double>(cnt);
        double sq = 0.0;
        for (int64_t i = 0; i < n; ++i)
          for (int64_t p = 0; p < hw; ++p) {
            const double d = xv[(i * c + ch) * hw + p] - mean[ch];
            sq += d * d;
          }
        var[ch] = sq / static_cast<double>(cnt);
      }
      if (ctx.update_bn) {
        Tensor& rm = run_mean_[static_cast<size_t>(ctx.bank)];
        Tensor& rv = run_var_[static_cast<size_t>(ctx.bank)];
        const double unbias = cnt > 1 ? static_cast<double>(cnt) / static_cast<double>(cnt - 1) : 1.0;
        for (int64_t ch = 0; ch < c; ++ch) {
          rm[ch] = (1.0 - momentum_) * rm[ch] + momentum_ * mean[ch];
          rv[ch] = (1.0 - momentum_) * rv[ch] + momentum_ * var[ch] * unbias;
        }
      }
    } else {
      mean = run_mean_[static_cast<size_t>(ctx.bank)];
      var = run_var_[static_cast<size_t>(ctx.bank)];
    }

    Tensor ivar({c});
    for (int64_t ch = 0; ch < c; ++ch) ivar[ch] = 1.0 / std::sqrt(var[ch] + eps_);
    Tensor xhat(xv.shape()), out(xv.shape());
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t p = 0; p < hw; ++p) {
          const int64_t idx = (i * c + ch) * hw + p;
          xhat[idx] = (xv[idx] - mean[ch]) * ivar[ch];
          out[idx] = gamma->val[ch] * xhat[idx] + beta->val[ch];
        }

    const bool batch_stats = ctx.training;
    return make_op(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat, ivar, n, c, hw, cnt, batch_stats](Node& nd) {
      add_grad(beta, [&](Tensor& g) {
        for (int64_t i = 0; i < n; ++i)
          for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t p = 0; p < hw; ++p) g[ch] += nd.grad[(i * c + ch) * hw + p];
      });
      add_grad(gamma, [&](Tensor& g) {
        for (int64_t i = 0; i < n; ++i)
          for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t p = 0; p < hw; ++p) {
              const int64_t idx = (i * c + ch) * hw + p;
              g[ch] += nd.grad[idx] * xhat[idx];
            }
      });
      add_grad(x, [&](Tensor& g) {
        if (!batch_stats) {
          // running statistics are constants
          for (int64_t i = 0; i < n; ++i)
            for (int64_t ch = 0; ch < c; ++ch)
              for (int64_t p = 0; p < hw; ++p) {
                const int64_t idx = (i * c + ch) * hw + p;
                g[idx] += nd.grad[idx] * gamma->val[ch] * ivar[ch];
              }
          return;
        }
        for (int64_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int64_t i = 0; i < n; ++i)
            for (int64_t p = 0; p < hw; ++p) {
              const int64_t idx = (i * c + ch) * hw + p;
              sum_dy += nd.grad[idx];
              sum_dy_xhat += nd.grad[idx] * xhat[idx];
            }
          const double k = gamma->val[ch] * ivar[ch] / static_cast<double>(cnt);
          for (int64_t i = 0; i < n; ++i)
            for (int64_t p = 0; p < hw; ++p) {
              const int64_t idx = (i * c + ch) * hw + p;
              g[idx] += k * (static_cast<double>(cnt) * nd.grad[idx] - sum_dy -
                             xhat[idx] * sum_dy_xhat);
            }
        }
      });
    });
  }

  void collect(const std::string& prefix, ParamMap& out) override {
    for (int k = 0; k < banks(); ++k) {
      const std::string bk = prefix + ".bank" + std::to_string(k);
      out.add_param(bk + ".gamma", gamma_[static_cast<size_t>(k)]);
      out.add_param(bk + ".beta", beta_[static_cast<size_t>(k)]);
      out.add_buffer(bk + ".run_mean", &run_mean_[static_cast<size_t>(k)]);
      out.add_buffer(bk + ".run_var", &run_var_[static_cast<size_t>(k)]);
    }
  }

  int64_t channels_;
  double momentum_, eps_;
  std::vector<Var> gamma_, beta_;
  std::vector<Tensor> run_mean_, run_var_;
};

class DropoutLayer {
 public:
  explicit DropoutLayer(double p) : p_(p) {}

  Var forward(const FwdCtx& ctx, const Var& x) const {
    if (!ctx.training || p_ <= 0.0) return x;
    if (!ctx.rng) throw std::logic_error("dropout: training forward needs an rng");
    return dropout(x, p_, *ctx.rng, true);
  }

  double p_;
};

}  // namespace oaug
