#pragma once

#include <functional>
#include <string>
#include <vector>

#include "oaug/core/graph.hpp"

namespace oaug {

// Central finite-difference gradient checking in double precision. `build`
// must construct a fresh scalar graph from the current values of the checked
// leaves on every call.

struct FdReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int64_t checked = 0;
};

/// Relative error with a floor on the denominator so near-zero gradients are
/// compared absolutely at the floor scale.
inline double fd_rel_err(double analytic, double numeric, double floor_scale = 0.1) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor_scale});
  return std::fabs(analytic - numeric) / denom;
}

inline FdReport finite_diff_check(const std::function<Var()>& build, const std::vector<Var>& wrt,
                                  double step = 1e-5, double floor_scale = 0.1) {
  FdReport rep;
  Var root = build();
  backward(root);
  std::vector<Tensor> analytic;
  analytic.reserve(wrt.size());
  for (const auto& v : wrt) {
    if (!v->requires_grad || !v->grad.same_shape(v->val))
      analytic.push_back(Tensor::zeros(v->val.shape()));
    else
      analytic.push_back(v->grad);
  }

  for (size_t vi = 0; vi < wrt.size(); ++vi) {
    Tensor& val = wrt[vi]->val;
    for (int64_t i = 0; i < val.numel(); ++i) {
      const double orig = val[i];
      val[i] = orig + step;
      const double fp = build()->val.item();
      val[i] = orig - step;
      const double fm = build()->val.item();
      val[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[vi][i];
      rep.max_rel_err = std::max(rep.max_rel_err, fd_rel_err(a, numeric, floor_scale));
      rep.max_abs_err = std::max(rep.max_abs_err, std::fabs(a - numeric));
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace oaug
