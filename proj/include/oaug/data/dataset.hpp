#pragma once

#include <string>
#include <vector>

#include "oaug/core/rng.hpp"
#include "oaug/core/tensor.hpp"
#include "oaug/geometry/grid.hpp"

namespace oaug {

/// In-memory labeled dataset. Images are stored raw; `normalize` maps raw
/// intensities to network inputs (per-dataset mean/std for classification,
/// window clamping to [0,1] for the CT-like segmentation data).
struct Dataset {
  enum class Norm { MeanStd, Window };

  std::string name;
  std::string split = "train";
  int64_t num_classes = 0;
  bool segmentation = false;
  int64_t channels = 1, height = 0, width = 0;

  std::vector<Tensor> images;    // each [c,h,w]
  std::vector<int32_t> labels;   // classification
  std::vector<IntTensor> masks;  // segmentation, each [h,w]

  Norm norm = Norm::MeanStd;
  double mean = 0.0, stddev = 1.0;
  double window_lo = -200.0, window_hi = 250.0;

  int64_t size() const { return static_cast<int64_t>(images.size()); }

  double normalize_value(double v) const {
    if (norm == Norm::MeanStd) return (v - mean) / stddev;
    const double c = std::min(window_hi, std::max(window_lo, v));
    return (c - window_lo) / (window_hi - window_lo);
  }

  void fit_mean_std() {
    double s = 0.0, s2 = 0.0;
    int64_t n = 0;
    for (const Tensor& img : images) {
      for (int64_t i = 0; i < img.numel(); ++i) {
        s += img[i];
        s2 += img[i] * img[i];
        ++n;
      }
    }
    if (n == 0) return;
    mean = s / static_cast<double>(n);
    const double var = std::max(1e-12, s2 / static_cast<double>(n) - mean * mean);
    stddev = std::sqrt(var);
  }
};

struct Batch {
  Tensor images;     // [n,c,h,w], normalized
  IntTensor labels;  // [n] (classification)
  IntTensor masks;   // [n,h,w] (segmentation)
  bool segmentation = false;

  int64_t size() const { return images.empty() ? 0 : images.dim(0); }
};

inline Batch assemble_batch(const Dataset& d, const std::vector<int64_t>& idx) {
  if (idx.empty()) throw std::invalid_argument("assemble_batch: empty index list");
  const int64_t n = static_cast<int64_t>(idx.size());
  Batch b;
  b.segmentation = d.segmentation;
  b.images = Tensor({n, d.channels, d.height, d.width});
  if (d.segmentation)
    b.masks = IntTensor({n, d.height, d.width});
  else
    b.labels = IntTensor({n});
  for (int64_t i = 0; i < n; ++i) {
    const int64_t j = idx[static_cast<size_t>(i)];
    if (j < 0 || j >= d.size()) throw std::invalid_argument("assemble_batch: index out of range");
    const Tensor& img = d.images[static_cast<size_t>(j)];
    for (int64_t p = 0; p < img.numel(); ++p)
      b.images[i * img.numel() + p] = d.normalize_value(img[p]);
    if (d.segmentation) {
      const IntTensor& m = d.masks[static_cast<size_t>(j)];
      for (int64_t p = 0; p < m.numel(); ++p) b.masks[i * m.numel() + p] = m[p];
    } else {
      b.labels[i] = d.labels[static_cast<size_t>(j)];
    }
  }
  return b;
}

/// Subset by explicit indices; keeps normalization parameters.
inline Dataset subset(const Dataset& d, const std::vector<int64_t>& idx, std::string split_name = "") {
  Dataset out = d;
  out.images.clear();
  out.labels.clear();
  out.masks.clear();
  if (!split_name.empty()) out.split = std::move(split_name);
  for (int64_t j : idx) {
    if (j < 0 || j >= d.size()) throw std::invalid_argument("subset: index out of range");
    out.images.push_back(d.images[static_cast<size_t>(j)]);
    if (d.segmentation)
      out.masks.push_back(d.masks[static_cast<size_t>(j)]);
    else
      out.labels.push_back(d.labels[static_cast<size_t>(j)]);
  }
  return out;
}

/// Apply one grid to an image batch (bilinear) and its masks (nearest), the
/// two sampling modes paired on the identical grid. Value-only.
inline std::pair<Tensor, IntTensor> joint_transform(const Tensor& images, const IntTensor& masks,
                                                    const Tensor& grid) {
  NoGradGuard no_grad;
  Var out = grid_sample_bilinear(make_const(images), make_const(grid));
  return {out->val, grid_sample_nearest(masks, grid)};
}

}  // namespace oaug
