#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "thorn/model.hpp"

namespace thorn {

/// Adam with bias correction; moments keyed by parameter name.
template <typename S>
class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 penalty folded into the gradient

  void step(ActionModel<S>& model, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, t_), c2 = 1.0 - std::pow(beta2, t_);
    model.visit(ParamVisitor<S>([&](const std::string& name, Param<S>& p) {
      auto& st = state_[name];
      if (st.m.size() != p.size()) {
        st.m.assign(p.size(), 0.0f);
        st.v.assign(p.size(), 0.0f);
      }
      S* w = p.value.data();
      const S* g = p.grad.data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]) + weight_decay * static_cast<double>(w[i]);
        st.m[i] = static_cast<float>(beta1 * st.m[i] + (1.0 - beta1) * gi);
        st.v[i] = static_cast<float>(beta2 * st.v[i] + (1.0 - beta2) * gi * gi);
        const double mh = st.m[i] / c1, vh = st.v[i] / c2;
        w[i] = static_cast<S>(w[i] - lr * mh / (std::sqrt(vh) + eps));
      }
    }));
  }

  long steps() const { return t_; }

 private:
  struct Moments {
    std::vector<float> m, v;
  };
  std::map<std::string, Moments> state_;
  long t_ = 0;
};

/// Scales gradients so their global L2 norm is at most `max_norm`.
template <typename S>
double clip_grad_norm(ActionModel<S>& model, double max_norm) {
  double sq = 0.0;
  model.visit(ParamVisitor<S>([&](const std::string&, Param<S>& p) {
    for (auto g : p.grad.storage()) sq += static_cast<double>(g) * g;
  }));
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const S s = static_cast<S>(max_norm / norm);
    model.visit(ParamVisitor<S>([&](const std::string&, Param<S>& p) {
      for (auto& g : p.grad.storage()) g *= s;
    }));
  }
  return norm;
}

/// Multiplies the learning rate by `factor` once the monitored loss has gone
/// `patience` consecutive epochs without a strict improvement, then restarts
/// the count.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, int patience) : factor_(factor), patience_(patience) {}

  /// Returns the learning rate to use next.
  double step(double loss, double lr) {
    if (loss < best_) {
      best_ = loss;
      bad_ = 0;
      return lr;
    }
    if (++bad_ >= patience_) {
      bad_ = 0;
      return lr * factor_;
    }
    return lr;
  }

  double best() const { return best_; }
  int bad_epochs() const { return bad_; }

 private:
  double factor_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

}  // namespace thorn
