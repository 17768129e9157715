#pragma once

#include <cmath>
#include <string>

#include "thorn/encoder.hpp"
#include "thorn/tensor.hpp"

namespace thorn {

/// Per-class node representations (T, C_o, D2).
template <typename S>
struct ObjectNodeTensor {
  Tensor<S> nodes;

  int frames() const { return nodes.dim(0); }
  int classes() const { return nodes.dim(1); }
  int channels() const { return nodes.dim(2); }
};

struct OrfConfig {
  int in_features = 0;  // H'*W'*D1 or D_g
  int num_classes = 10;
  int d2 = 128;
  double dropout = 0.3;
  bool relu_presence = false;        // ReLU on the presence logits before the sigmoid
  bool shared_classifier = false; // one D2 -> 1 head for all classes
};

/// Object representation filter: C_o class-specific linear filters over the
/// flattened scene feature, followed by a per-class presence classifier.
/// The C_o filters are stored as one (in, C_o, D2) block so a frame is
/// filtered for every class with a single product.
template <typename S>
class ObjectFilter {
 public:
  struct Cache {
    Tensor<S> input;  // (T, in)
    Tensor<S> act;    // post-ReLU, pre-dropout (T, C_o, D2)
    Tensor<S> mask;   // dropout scale per element; empty when not training
  };
  struct ClassifierCache {
    Tensor<S> nodes;
    Tensor<S> logits;
  };

  ObjectFilter() = default;
  explicit ObjectFilter(const OrfConfig& cfg) : cfg_(cfg) {
    if (cfg.in_features < 1) throw ConfigError("orf: in_features must be positive");
    if (cfg.num_classes < 1) throw ConfigError("orf: need at least one object class");
    if (cfg.d2 < 1) throw ConfigError("orf: d2 must be positive");
    if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw ConfigError("orf: dropout must lie in [0, 1)");
    const int heads = cfg.shared_classifier ? 1 : cfg.num_classes;
    weight = Param<S>({cfg.in_features, cfg.num_classes, cfg.d2});
    bias = Param<S>({cfg.num_classes, cfg.d2});
    cls_weight = Param<S>({heads, cfg.d2});
    cls_bias = Param<S>({heads});
  }

  void init(Rng& rng) {
    init_relu_fan_in(weight.value, cfg_.in_features, rng);
    bias.value.set_zero();
    init_fan_in(cls_weight.value, cfg_.d2, rng);
    init_fan_in(cls_bias.value, cfg_.d2, rng);
  }

  const OrfConfig& config() const { return cfg_; }
  int width() const { return cfg_.num_classes * cfg_.d2; }

  Tensor<S> flatten(const SceneFeature<S>& scene) const {
    const int T = scene.frames();
    if (scene.row_size() != cfg_.in_features)
      throw Error("orf: scene feature " + shape_str(scene.features.shape()) + " does not match filter weights " +
                  shape_str(weight.value.shape()) + " (expected " + std::to_string(cfg_.in_features) +
                  " features per frame)");
    return scene.features.reshaped({T, cfg_.in_features});
  }

  /// nodes[t, i, :] = ReLU(scene[t] W_i + b_i), then dropout when training.
  ObjectNodeTensor<S> filter(const SceneFeature<S>& scene, bool training, Rng* rng, Cache& cache) const {
    cache.input = flatten(scene);
    const int T = cache.input.dim(0), C = cfg_.num_classes, D = cfg_.d2;
    cache.act = Tensor<S>({T, C, D});
    auto A = as_matrix(cache.act, C * D);
    A.noalias() = as_matrix(cache.input, cfg_.in_features) * as_matrix(weight.value, C * D);
    A.rowwise() += ConstVecMap<S>(bias.value.data(), C * D).transpose();
    relu_inplace(cache.act);
    cache.mask = Tensor<S>();
    if (!training || cfg_.dropout == 0.0) return {cache.act};
    if (rng == nullptr) throw Error("orf: dropout in training mode needs an rng");
    cache.mask = Tensor<S>(cache.act.shape());
    const S keep_scale = static_cast<S>(1.0 / (1.0 - cfg_.dropout));
    for (auto& m : cache.mask.storage()) m = uniform01(*rng) < cfg_.dropout ? S(0) : keep_scale;
    Tensor<S> out = cache.act;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= cache.mask[i];
    return {std::move(out)};
  }

  ObjectNodeTensor<S> filter(const SceneFeature<S>& scene) const {
    Cache c;
    return filter(scene, false, nullptr, c);
  }

  /// Returns d(loss)/d(scene rows) as (T, in) when requested.
  Tensor<S> backward_filter(const Cache& cache, const Tensor<S>& dnodes, bool need_input_grad) {
    const int C = cfg_.num_classes, D = cfg_.d2;
    Tensor<S> dpre = dnodes;
    if (!cache.mask.empty())
      for (std::size_t i = 0; i < dpre.size(); ++i) dpre[i] *= cache.mask[i];
    relu_backward_inplace(cache.act, dpre);
    auto dP = as_matrix(dpre, C * D);
    as_matrix(weight.grad, C * D).noalias() += as_matrix(cache.input, cfg_.in_features).transpose() * dP;
    VecMap<S>(bias.grad.data(), C * D) += dP.colwise().sum().transpose();
    if (!need_input_grad) return {};
    Tensor<S> dx({cache.input.dim(0), cfg_.in_features});
    as_matrix(dx, cfg_.in_features).noalias() = dP * as_matrix(weight.value, C * D).transpose();
    return dx;
  }

  /// Presence logits (T, C_o); class i reads only its own node vector.
  Tensor<S> classify(const ObjectNodeTensor<S>& n, ClassifierCache* cache = nullptr) const {
    const auto& x = n.nodes;
    if (x.rank() != 3 || x.dim(1) != cfg_.num_classes || x.dim(2) != cfg_.d2)
      throw Error("orf.classify: expected (T, " + std::to_string(cfg_.num_classes) + ", " + std::to_string(cfg_.d2) +
                  "), got " + shape_str(x.shape()));
    const int T = x.dim(0), C = cfg_.num_classes, D = cfg_.d2;
    Tensor<S> logits({T, C});
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < C; ++c) {
        const int h = head_index(c);
        const S* w = cls_weight.value.data() + static_cast<std::size_t>(h) * D;
        const S* v = x.data() + (static_cast<std::size_t>(t) * C + c) * D;
        S acc = cls_bias.value[h];
        for (int d = 0; d < D; ++d) acc += v[d] * w[d];
        logits.at(t, c) = cfg_.relu_presence ? relu(acc) : acc;
      }
    if (cache) {
      cache->nodes = x;
      cache->logits = logits;
    }
    return logits;
  }

  /// Returns d(loss)/d(nodes).
  Tensor<S> backward_classify(const ClassifierCache& cache, const Tensor<S>& dlogits) {
    const auto& x = cache.nodes;
    const int T = x.dim(0), C = cfg_.num_classes, D = cfg_.d2;
    Tensor<S> dx(x.shape());
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < C; ++c) {
        S g = dlogits.at(t, c);
        if (cfg_.relu_presence && !(cache.logits.at(t, c) > S(0))) g = S(0);
        if (g == S(0)) continue;
        const int h = head_index(c);
        const std::size_t off = (static_cast<std::size_t>(t) * C + c) * D;
        S* gw = cls_weight.grad.data() + static_cast<std::size_t>(h) * D;
        const S* w = cls_weight.value.data() + static_cast<std::size_t>(h) * D;
        for (int d = 0; d < D; ++d) {
          gw[d] += g * x[off + d];
          dx[off + d] = g * w[d];
        }
        cls_bias.grad[h] += g;
      }
    return dx;
  }

  /// d(presence logit of class `cls` at frame t)/d(scene row t) for every t,
  /// evaluated at an eval-mode forward cache. Leaves gradients untouched.
  Tensor<S> presence_input_gradient(const Cache& cache, int cls) const {
    const int T = cache.input.dim(0), C = cfg_.num_classes, D = cfg_.d2, in = cfg_.in_features;
    if (cls < 0 || cls >= C) throw Error("orf: class index out of range");
    const int h = head_index(cls);
    Tensor<S> out({T, in});
    const auto Wc = as_matrix(weight.value, C * D).middleCols(static_cast<Eigen::Index>(cls) * D, D);
    Eigen::Matrix<S, Eigen::Dynamic, 1> coeff(D);
    for (int t = 0; t < T; ++t) {
      const S* a = cache.act.data() + (static_cast<std::size_t>(t) * C + cls) * D;
      S logit = cls_bias.value[h];
      for (int d = 0; d < D; ++d) {
        coeff[d] = a[d] > S(0) ? cls_weight.value.at(h, d) : S(0);
        logit += a[d] * cls_weight.value.at(h, d);
      }
      if (cfg_.relu_presence && !(logit > S(0))) coeff.setZero();
      as_matrix(out, in).row(t) = (Wc * coeff).transpose();
    }
    return out;
  }

  void visit(const ParamVisitor<S>& f) {
    f("orf.weight", weight);
    f("orf.bias", bias);
    f("orf.classifier.weight", cls_weight);
    f("orf.classifier.bias", cls_bias);
  }

  Param<S> weight;      // (in, C_o, D2)
  Param<S> bias;        // (C_o, D2)
  Param<S> cls_weight;  // (C_o or 1, D2)
  Param<S> cls_bias;    // (C_o or 1)

 private:
  int head_index(int c) const { return cfg_.shared_classifier ? 0 : c; }

  OrfConfig cfg_;
};

template <typename S>
void check_presence(const Tensor<S>& presence, int frames, int classes) {
  require_shape(presence.shape(), {frames, classes}, "presence");
  for (auto v : presence.storage())
    if (v != S(0) && v != S(1)) throw Error("presence entries must be 0 or 1");
}

/// Mean binary cross-entropy over all (t, class) cells, computed from logits.
template <typename S>
double object_pseudo_label_loss(const Tensor<S>& logits, const Tensor<S>& presence, Tensor<S>* dlogits = nullptr) {
  check_presence(presence, logits.dim(0), logits.dim(1));
  const double n = static_cast<double>(logits.size());
  double loss = 0.0;
  if (dlogits) *dlogits = Tensor<S>(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i], y = presence[i];
    // log(1 + exp(-|z|)) form avoids overflow for large |z|.
    loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    if (dlogits) (*dlogits)[i] = static_cast<S>((1.0 / (1.0 + std::exp(-z)) - y) / n);
  }
  return loss / n;
}

}  // namespace thorn
