#pragma once

#include <optional>
#include <string>
#include <vector>

#include "oaug/geometry/grid.hpp"
#include "oaug/nn/module.hpp"

namespace oaug {

/// One augmentation pass: the views to feed the target network, transformed
/// masks when segmenting (transformed with the identical grids as the paired
/// images), and the weighted regularizer built over the same stochastic draws.
struct AugmenterOutput {
  std::vector<Var> views;
  std::vector<IntTensor> mask_views;
  std::vector<Var> grids;  // grid actually used per spatial view (empty for intensity-only)
  Var reg_weighted;
  double reg_value = 0.0;
};

class Augmenter : public Module {
 public:
  virtual const std::string& name() const = 0;
  /// Adversarial weight beta of this augmenter's objective.
  virtual double beta() const = 0;
  virtual std::string arch_desc() const = 0;
  /// Builds views + regularizer in one taped graph. `draws` supplies every
  /// stochastic choice (noise, eps, dropout), so re-running with an equal-state
  /// Rng reproduces the pass bit-exactly.
  virtual AugmenterOutput forward_full(const FwdCtx& ctx, const Tensor& images,
                                       const IntTensor* masks, Rng& draws) = 0;
};

}  // namespace oaug
