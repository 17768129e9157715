#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "thorn/thorn.hpp"

namespace thorn::testing {

template <typename S>
Tensor<S> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<S> t(shape);
  for (auto& v : t.storage()) v = static_cast<S>(uniform(rng, lo, hi));
  return t;
}

template <typename S>
Tensor<S> random_presence(int T, int C, Rng& rng) {
  Tensor<S> p({T, C});
  for (auto& v : p.storage()) v = uniform01(rng) < 0.5 ? S(1) : S(0);
  return p;
}

template <typename S>
ClipTensor<S> random_clip(int T, int H, int W, Rng& rng) {
  return {random_tensor<S>({T, H, W, 3}, rng, 0.0, 1.0)};
}

/// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero pairs from
/// producing huge ratios out of rounding noise.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradCheck {
  double worst = 0.0;
  std::string where;
  int checked = 0;
};

/// Compares `analytic` against central differences of `loss` for up to
/// `max_entries` evenly spaced entries of `param`. `wide` switches to the
/// five-point stencil, whose smaller round-off resolves tiny gradients.
inline void check_entries(const std::string& name, Tensor<double>& param, const Tensor<double>& analytic,
                          const std::function<double()>& loss, GradCheck& out, int max_entries = 40,
                          double h = 1e-6, bool wide = false) {
  const std::size_t n = param.size();
  const std::size_t stride = std::max<std::size_t>(1, n / static_cast<std::size_t>(max_entries));
  auto at = [&](std::size_t i, double x) {
    param[i] = x;
    return loss();
  };
  for (std::size_t i = 0; i < n; i += stride) {
    const double orig = param[i];
    const double fd = wide ? (8 * (at(i, orig + h) - at(i, orig - h)) - (at(i, orig + 2 * h) - at(i, orig - 2 * h))) /
                                 (12 * h)
                           : (at(i, orig + h) - at(i, orig - h)) / (2 * h);
    param[i] = orig;
    const double e = rel_err(analytic[i], fd);
    ++out.checked;
    if (e > out.worst) {
      out.worst = e;
      out.where = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) + " fd " +
                  std::to_string(fd);
    }
  }
}

/// Small double-precision THORN configuration for gradient checks.
inline ModelConfig tiny_model(Architecture arch = Architecture::thorn, NodeMode mode = NodeMode::spatio_temporal,
                              bool verb_from_nodes = false) {
  ModelConfig m;
  m.arch = arch;
  m.node_mode = mode;
  m.verb_from_nodes = verb_from_nodes;
  m.num_classes = 3;
  m.num_verbs = 3;
  m.height = 16;
  m.width = 16;
  m.grid = 2;
  m.encoder_width = 2;
  m.d1 = 8;
  m.d_g = 5;
  m.d2 = 4;
  m.d_e = 2;
  m.heads = 3;
  m.blocks = 1;
  m.kernel = 3;
  m.dropout = 0.0;
  return m;
}

/// Gradient of the joint loss w.r.t. every parameter of `model`.
inline GradCheck check_model_gradients(ActionModel<double>& model, const ClipTensor<double>& clip, int verb, int noun,
                                       const Tensor<double>& presence, int max_entries = 40, bool wide = false) {
  auto loss = [&]() {
    const auto out = model.predict(clip);
    return joint_loss(out.bundle, verb, noun, presence).total;
  };
  model.zero_grad();
  model.accumulate(clip, verb, noun, presence, false, nullptr);
  GradCheck gc;
  model.visit(ParamVisitor<double>([&](const std::string& name, Param<double>& p) {
    const Tensor<double> analytic = p.grad;
    check_entries(name, p.value, analytic, loss, gc, max_entries, wide ? 1e-4 : 1e-6, wide);
  }));
  return gc;
}

}  // namespace thorn::testing
