#pragma once

#include <memory>

#include "oaug/nn/layers.hpp"

namespace oaug {

/// Task network with switchable batch-norm banks: bank 0 ("main") serves the
/// clean stream and evaluation; each active augmenter gets one auxiliary bank.
class TargetModel : public Module {
 public:
  virtual Var forward(const FwdCtx& ctx, const Var& images) = 0;
  Var forward(const FwdCtx& ctx, const Tensor& images) { return forward(ctx, make_const(images)); }
  virtual int banks() const = 0;
  virtual bool segmentation() const = 0;
  virtual std::string arch_desc() const = 0;
};

/// 4-block CNN classifier: [conv3x3 - BN - ReLU - avgpool2] x4 with channel
/// widths w, 2w, 4w, 8w, then global average pooling and a linear head.
class SmallCnn : public TargetModel {
 public:
  SmallCnn(Rng& rng, int64_t in_channels, int64_t image_size, int64_t num_classes, int banks,
           int64_t width = 16)
      : in_ch_(in_channels), image_(image_size), classes_(num_classes), width_(width) {
    if (image_size % 16 != 0) throw std::invalid_argument("cnn: image size must be divisible by 16");
    int64_t c = in_channels;
    int64_t w = width;
    for (int i = 0; i < 4; ++i) {
      convs_.emplace_back(rng, c, w, 3, 1, 1);
      norms_.emplace_back(w, banks);
      c = w;
      w *= 2;
    }
    head_ = std::make_unique<LinearLayer>(rng, c, num_classes);
  }

  Var forward(const FwdCtx& ctx, const Var& images) override {
    Var h = images;
    for (size_t i = 0; i < convs_.size(); ++i) {
      h = convs_[i].forward(h);
      h = norms_[i].forward(ctx, h);
      h = relu(h);
      h = avg_pool2(h);
    }
    return head_->forward(global_avg_pool(h));
  }

  int banks() const override { return norms_.front().banks(); }
  bool segmentation() const override { return false; }
  std::string arch_desc() const override {
    std::ostringstream os;
    os << "cnn4:in" << in_ch_ << ":s" << image_ << ":w" << width_ << ":k" << classes_ << ":banks"
       << banks();
    return os.str();
  }

  void collect(const std::string& prefix, ParamMap& out) override {
    for (size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].collect(prefix + ".conv" + std::to_string(i), out);
      norms_[i].collect(prefix + ".bn" + std::to_string(i), out);
    }
    head_->collect(prefix + ".head", out);
  }

  int64_t in_ch_, image_, classes_, width_;
  std::vector<Conv2dLayer> convs_;
  std::vector<BatchNormLayer> norms_;
  std::unique_ptr<LinearLayer> head_;
};

/// Two conv3x3-BN-ReLU stages at one resolution.
class DoubleConv : public Module {
 public:
  DoubleConv(Rng& rng, int64_t in_ch, int64_t out_ch, int banks)
      : c1_(rng, in_ch, out_ch, 3, 1, 1),
        n1_(out_ch, banks),
        c2_(rng, out_ch, out_ch, 3, 1, 1),
        n2_(out_ch, banks) {}

  Var forward(const FwdCtx& ctx, const Var& x) {
    Var h = relu(n1_.forward(ctx, c1_.forward(x)));
    return relu(n2_.forward(ctx, c2_.forward(h)));
  }

  void collect(const std::string& prefix, ParamMap& out) override {
    c1_.collect(prefix + ".c1", out);
    n1_.collect(prefix + ".n1", out);
    c2_.collect(prefix + ".c2", out);
    n2_.collect(prefix + ".n2", out);
  }

  Conv2dLayer c1_;
  BatchNormLayer n1_;
  Conv2dLayer c2_;
  BatchNormLayer n2_;
};

/// 3-level U-Net segmenter with skip connections and pixelwise logits.
class UNet3 : public TargetModel {
 public:
  UNet3(Rng& rng, int64_t in_channels, int64_t image_size, int64_t num_classes, int banks,
        int64_t width = 8)
      : in_ch_(in_channels), image_(image_size), classes_(num_classes), width_(width) {
    if (image_size % 4 != 0) throw std::invalid_argument("unet: image size must be divisible by 4");
    enc1_ = std::make_unique<DoubleConv>(rng, in_channels, width, banks);
    enc2_ = std::make_unique<DoubleConv>(rng, width, 2 * width, banks);
    bott_ = std::make_unique<DoubleConv>(rng, 2 * width, 4 * width, banks);
    up2_ = std::make_unique<ConvTranspose2dLayer>(rng, 4 * width, 2 * width, 3, 2, 1, 1);
    dec2_ = std::make_unique<DoubleConv>(rng, 4 * width, 2 * width, banks);
    up1_ = std::make_unique<ConvTranspose2dLayer>(rng, 2 * width, width, 3, 2, 1, 1);
    dec1_ = std::make_unique<DoubleConv>(rng, 2 * width, width, banks);
    head_ = std::make_unique<Conv2dLayer>(rng, width, num_classes, 1, 1, 0);
  }

  Var forward(const FwdCtx& ctx, const Var& images) override {
    Var e1 = enc1_->forward(ctx, images);
    Var e2 = enc2_->forward(ctx, avg_pool2(e1));
    Var b = bott_->forward(ctx, avg_pool2(e2));
    Var d2 = dec2_->forward(ctx, concat_channels(up2_->forward(b), e2));
    Var d1 = dec1_->forward(ctx, concat_channels(up1_->forward(d2), e1));
    return head_->forward(d1);
  }

  int banks() const override { return enc1_->n1_.banks(); }
  bool segmentation() const override { return true; }
  std::string arch_desc() const override {
    std::ostringstream os;
    os << "unet3:in" << in_ch_ << ":s" << image_ << ":w" << width_ << ":k" << classes_ << ":banks"
       << banks();
    return os.str();
  }

  void collect(const std::string& prefix, ParamMap& out) override {
    enc1_->collect(prefix + ".enc1", out);
    enc2_->collect(prefix + ".enc2", out);
    bott_->collect(prefix + ".bott", out);
    up2_->collect(prefix + ".up2", out);
    dec2_->collect(prefix + ".dec2", out);
    up1_->collect(prefix + ".up1", out);
    dec1_->collect(prefix + ".dec1", out);
    head_->collect(prefix + ".head", out);
  }

  int64_t in_ch_, image_, classes_, width_;
  std::unique_ptr<DoubleConv> enc1_, enc2_, bott_, dec2_, dec1_;
  std::unique_ptr<ConvTranspose2dLayer> up2_, up1_;
  std::unique_ptr<Conv2dLayer> head_;
};

}  // namespace oaug
