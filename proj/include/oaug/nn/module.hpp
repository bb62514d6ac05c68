#pragma once

#include <cstring>
#include <string>
#include <vector>

#include "oaug/core/graph.hpp"
#include "oaug/core/rng.hpp"

namespace oaug {

/// Forward-pass context threaded through layers. `update_bn` only matters in
/// training mode; meta-gradient passes run training-mode statistics without
/// touching the running averages.
struct FwdCtx {
  bool training = true;
  bool update_bn = true;
  int bank = 0;
  Rng* rng = nullptr;  // dropout draws

  static FwdCtx train(int bank_id, Rng& rng) { return {true, true, bank_id, &rng}; }
  static FwdCtx train_frozen(int bank_id, Rng& rng) { return {true, false, bank_id, &rng}; }
  static FwdCtx eval(int bank_id = 0) { return {false, false, bank_id, nullptr}; }
};

/// Named parameter/buffer registry; the stable flat view used by optimizers,
/// checkpoints, and gradient bookkeeping. Collection order is deterministic.
class ParamMap {
 public:
  void add_param(std::string name, const Var& v) { params_.emplace_back(std::move(name), v); }
  void add_buffer(std::string name, Tensor* t) { buffers_.emplace_back(std::move(name), t); }

  const std::vector<std::pair<std::string, Var>>& params() const { return params_; }
  const std::vector<std::pair<std::string, Tensor*>>& buffers() const { return buffers_; }

  std::vector<Var> vars() const {
    std::vector<Var> out;
    out.reserve(params_.size());
    for (const auto& [name, v] : params_) out.push_back(v);
    return out;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [name, v] : params_) n += v->val.numel();
    return n;
  }

  /// Order- and value-sensitive digest for parameter-disjointness checks.
  uint64_t checksum() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const Tensor& t) {
      for (int64_t i = 0; i < t.numel(); ++i) {
        uint64_t bits;
        const double v = t[i];
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(bits));
        h ^= bits;
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& [name, v] : params_) {
      h = fnv1a(name, h);
      mix(v->val);
    }
    for (const auto& [name, t] : buffers_) {
      h = fnv1a(name, h);
      mix(*t);
    }
    return h;
  }

 private:
  std::vector<std::pair<std::string, Var>> params_;
  std::vector<std::pair<std::string, Tensor*>> buffers_;
};

/// Anything that owns parameters. Modules are stable-address objects; they are
/// neither copied nor moved once built.
class Module {
 public:
  virtual ~Module() = default;
  virtual void collect(const std::string& prefix, ParamMap& out) = 0;

  ParamMap param_map(const std::string& prefix = "") {
    ParamMap m;
    collect(prefix, m);
    return m;
  }
};

inline Var init_uniform_fan_in(Rng& rng, Shape shape, int64_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
  return make_leaf(rng.uniform_tensor(std::move(shape), -bound, bound));
}

}  // namespace oaug
