#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "thorn/layers.hpp"
#include "thorn/orr.hpp"
#include "thorn/tensor.hpp"

namespace thorn {

template <typename S>
struct PredictionBundle {
  Tensor<S> verb_logits;    // (C_v)
  Tensor<S> noun_logits;    // (C_o)
  Tensor<S> object_logits;  // (T, C_o); empty for models without an object filter
};

struct HeadsConfig {
  int num_classes = 10;
  int d2 = 128;
  int num_verbs = 6;
  bool verb_from_nodes = false;  // verbs from pooled nodes instead of the adjacency
};

/// Noun logits from time-pooled nodes (one D2 -> 1 map per class); verb
/// logits from the last block's head-averaged adjacency, flattened.
template <typename S>
class PredictionHeads {
 public:
  struct Cache {
    int frames = 0;
    Tensor<S> pooled;      // (C, D2)
    Tensor<S> verb_input;  // (1, C*C) or (1, C*D2)
    Shape adjacency_shape;
  };

  PredictionHeads() = default;
  explicit PredictionHeads(const HeadsConfig& cfg) : cfg_(cfg) {
    if (cfg.num_classes < 1 || cfg.d2 < 1 || cfg.num_verbs < 1)
      throw ConfigError("heads: class counts and d2 must be positive");
    noun_weight = Param<S>({cfg.num_classes, cfg.d2});
    noun_bias = Param<S>({cfg.num_classes});
    const int verb_in = cfg.verb_from_nodes ? cfg.num_classes * cfg.d2 : cfg.num_classes * cfg.num_classes;
    verb = Linear<S>(verb_in, cfg.num_verbs);
  }

  void init(Rng& rng) {
    init_fan_in(noun_weight.value, cfg_.d2, rng);
    init_fan_in(noun_bias.value, cfg_.d2, rng);
    verb.init(rng);
  }

  const HeadsConfig& config() const { return cfg_; }

  PredictionBundle<S> predict(const ObjectNodeTensor<S>& nodes, const AdjacencyState<S>& adjacency,
                              Cache* cache = nullptr) const {
    const auto& g = nodes.nodes;
    const int C = cfg_.num_classes, D = cfg_.d2;
    if (g.rank() != 3 || g.dim(1) != C || g.dim(2) != D)
      throw Error("heads: expected nodes (T, " + std::to_string(C) + ", " + std::to_string(D) + "), got " +
                  shape_str(g.shape()));
    const int T = g.dim(0);
    Tensor<S> pooled({C, D});
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < C * D; ++i) pooled[i] += g[static_cast<std::size_t>(t) * C * D + i];
    for (auto& v : pooled.storage()) v /= static_cast<S>(T);

    PredictionBundle<S> out;
    out.noun_logits = Tensor<S>({C});
    for (int c = 0; c < C; ++c) {
      S acc = noun_bias.value[c];
      for (int d = 0; d < D; ++d) acc += pooled.at(c, d) * noun_weight.value.at(c, d);
      out.noun_logits[c] = acc;
    }

    Tensor<S> verb_input;
    if (cfg_.verb_from_nodes) {
      verb_input = pooled.reshaped({1, C * D});
    } else {
      const auto& a = adjacency.superimposed;
      if (a.rank() != 4 || a.dim(0) < 1 || a.dim(2) != C || a.dim(3) != C)
        throw Error("heads: adjacency " + shape_str(a.shape()) + " does not match nodes " + shape_str(g.shape()));
      verb_input = adjacency.last_block_mean().reshaped({1, C * C});
    }
    out.verb_logits = verb.forward(verb_input).reshaped({cfg_.num_verbs});
    if (cache) {
      cache->frames = T;
      cache->pooled = std::move(pooled);
      cache->verb_input = std::move(verb_input);
      cache->adjacency_shape = adjacency.superimposed.shape();
    }
    return out;
  }

  struct Grads {
    Tensor<S> nodes;      // (T, C, D2)
    Tensor<S> adjacency;  // (blocks, heads, C, C); empty when verbs come from nodes
  };

  Grads backward(const Cache& cache, const Tensor<S>& dnoun, const Tensor<S>& dverb) {
    const int C = cfg_.num_classes, D = cfg_.d2, T = cache.frames;
    Tensor<S> dpooled({C, D});
    for (int c = 0; c < C; ++c) {
      const S g = dnoun[c];
      noun_bias.grad[c] += g;
      for (int d = 0; d < D; ++d) {
        noun_weight.grad.at(c, d) += g * cache.pooled.at(c, d);
        dpooled.at(c, d) = g * noun_weight.value.at(c, d);
      }
    }
    const Tensor<S> dv = dverb.reshaped({1, cfg_.num_verbs});
    Tensor<S> dvin = verb.backward(cache.verb_input, dv, true);
    Grads out;
    if (cfg_.verb_from_nodes) {
      for (int i = 0; i < C * D; ++i) dpooled[i] += dvin[i];
    } else {
      const auto& shp = cache.adjacency_shape;
      const int B = shp[0], H = shp[1];
      out.adjacency = Tensor<S>(shp);
      S* last = out.adjacency.data() + static_cast<std::size_t>(B - 1) * H * C * C;
      for (int h = 0; h < H; ++h)
        for (int i = 0; i < C * C; ++i) last[static_cast<std::size_t>(h) * C * C + i] = dvin[i] / static_cast<S>(H);
    }
    out.nodes = Tensor<S>({T, C, D});
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < C * D; ++i) out.nodes[static_cast<std::size_t>(t) * C * D + i] = dpooled[i] / static_cast<S>(T);
    return out;
  }

  void visit(const ParamVisitor<S>& f) {
    f("heads.noun.weight", noun_weight);
    f("heads.noun.bias", noun_bias);
    verb.visit(cfg_.verb_from_nodes ? "heads.verb_nodes" : "heads.verb_adjacency", f);
  }

  Param<S> noun_weight;  // (C, D2)
  Param<S> noun_bias;    // (C)
  Linear<S> verb;        // (C*C or C*D2) -> C_v

 private:
  HeadsConfig cfg_;
};

/// Encoder-only baseline: global average of the feature grid, then linear
/// verb and noun classifiers.
template <typename S>
class PooledHeads {
 public:
  PooledHeads() = default;
  PooledHeads(int features, int num_classes, int num_verbs)
      : verb(features, num_verbs), noun(features, num_classes) {}

  void init(Rng& rng) {
    verb.init(rng);
    noun.init(rng);
  }

  /// features: (rows, F) averaged over rows.
  PredictionBundle<S> predict(const Tensor<S>& features, Tensor<S>* pooled_out = nullptr) const {
    const int F = verb.in_features();
    Tensor<S> pooled({1, F});
    as_matrix(pooled, F) = as_matrix(features, F).colwise().mean();
    PredictionBundle<S> out;
    out.verb_logits = verb.forward(pooled).reshaped({verb.out_features()});
    out.noun_logits = noun.forward(pooled).reshaped({noun.out_features()});
    if (pooled_out) *pooled_out = std::move(pooled);
    return out;
  }

  /// Returns d/d(features) with the same element count as the forward input.
  Tensor<S> backward(const Tensor<S>& pooled, std::size_t feature_rows, const Tensor<S>& dnoun, const Tensor<S>& dverb) {
    const int F = verb.in_features();
    Tensor<S> dp = verb.backward(pooled, dverb.reshaped({1, verb.out_features()}), true);
    const Tensor<S> dn = noun.backward(pooled, dnoun.reshaped({1, noun.out_features()}), true);
    for (int i = 0; i < F; ++i) dp[i] += dn[i];
    Tensor<S> dx({static_cast<int>(feature_rows), F});
    as_matrix(dx, F).rowwise() = as_matrix(dp, F).row(0) / static_cast<S>(feature_rows);
    return dx;
  }

  void visit(const ParamVisitor<S>& f) {
    verb.visit("baseline.verb", f);
    noun.visit("baseline.noun", f);
  }

  Linear<S> verb;
  Linear<S> noun;
};

// ---------------------------------------------------------------------------
// Losses

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (auto& v : p) z += (v = std::exp(v - mx));
  for (auto& v : p) v /= z;
  return p;
}

template <typename S>
std::vector<double> to_doubles(const Tensor<S>& t) {
  return {t.storage().begin(), t.storage().end()};
}

/// Negative log-likelihood of softmax(logits) at `label`; writes dL/dlogits when asked.
template <typename S>
double nll_loss(const Tensor<S>& logits, int label, Tensor<S>* dlogits = nullptr) {
  const int n = static_cast<int>(logits.size());
  if (label < 0 || label >= n)
    throw Error("label " + std::to_string(label) + " out of range for " + std::to_string(n) + " classes");
  const auto z = to_doubles(logits);
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  if (dlogits) {
    *dlogits = Tensor<S>(logits.shape());
    for (int i = 0; i < n; ++i) (*dlogits)[i] = static_cast<S>(std::exp(z[i] - lse) - (i == label ? 1.0 : 0.0));
  }
  return lse - z[label];
}

struct LossBreakdown {
  double verbs = 0.0;
  double nouns = 0.0;
  double objects = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    verbs += o.verbs;
    nouns += o.nouns;
    objects += o.objects;
    total += o.total;
    return *this;
  }
};

template <typename S>
struct LossGrads {
  Tensor<S> verb_logits;
  Tensor<S> noun_logits;
  Tensor<S> object_logits;
};

/// L = L_verbs + L_nouns + L_clip-objects (unweighted); the object term is
/// skipped when the bundle carries no object logits.
template <typename S>
LossBreakdown joint_loss(const PredictionBundle<S>& b, int verb_gt, int noun_gt, const Tensor<S>& presence,
                         LossGrads<S>* grads = nullptr) {
  LossBreakdown l;
  l.verbs = nll_loss(b.verb_logits, verb_gt, grads ? &grads->verb_logits : nullptr);
  l.nouns = nll_loss(b.noun_logits, noun_gt, grads ? &grads->noun_logits : nullptr);
  if (!b.object_logits.empty())
    l.objects = object_pseudo_label_loss(b.object_logits, presence, grads ? &grads->object_logits : nullptr);
  l.total = l.verbs + l.nouns + l.objects;
  return l;
}

// ---------------------------------------------------------------------------
// Detector fusion and action composition

/// Clip-level detector score per class: mean over frames, zeroed below the
/// threshold (scores equal to the threshold are kept).
template <typename S>
std::vector<double> detector_clip_scores(const Tensor<S>& detector, double threshold) {
  if (detector.rank() != 2) throw Error("detector scores must be (T, C_o), got " + shape_str(detector.shape()));
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error("fusion threshold must lie in [0, 1]");
  const int T = detector.dim(0), C = detector.dim(1);
  std::vector<double> out(C, 0.0);
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      const double v = detector.at(t, c);
      if (!(v >= 0.0 && v <= 1.0)) throw Error("detector scores must lie in [0, 1]");
      out[c] += v;
    }
  for (auto& v : out) {
    v /= T;
    if (v < threshold) v = 0.0;
  }
  return out;
}

/// 0.5 * softmax(noun logits) + 0.5 * thresholded clip detector scores.
template <typename S>
std::vector<double> fuse_noun_scores(const Tensor<S>& noun_logits, const Tensor<S>& detector, double threshold) {
  const auto det = detector_clip_scores(detector, threshold);
  if (det.size() != noun_logits.size())
    throw Error("fusion: detector has " + std::to_string(det.size()) + " classes, model has " +
                std::to_string(noun_logits.size()));
  auto p = softmax(to_doubles(noun_logits));
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = 0.5 * p[i] + 0.5 * det[i];
  return p;
}

/// Indices of the k largest scores, ties broken by lower index.
inline std::vector<int> top_k(std::span<const double> scores, int k) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min<int>(k, static_cast<int>(idx.size()));
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  idx.resize(k);
  return idx;
}

inline int argmax(std::span<const double> scores) { return top_k(scores, 1).at(0); }

struct ActionPrediction {
  int verb = 0;
  int noun = 0;
  std::vector<int> verb_top5;
  std::vector<int> noun_top5;

  bool verb_correct(int gt, int k = 1) const { return contains(verb_top5, gt, k); }
  bool noun_correct(int gt, int k = 1) const { return contains(noun_top5, gt, k); }
  /// An action counts only when both components are within the top k.
  bool action_correct(int verb_gt, int noun_gt, int k = 1) const {
    return verb_correct(verb_gt, k) && noun_correct(noun_gt, k);
  }

 private:
  static bool contains(const std::vector<int>& v, int x, int k) {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), v.size());
    return std::find(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n), x) != v.begin() + static_cast<std::ptrdiff_t>(n);
  }
};

inline ActionPrediction action_prediction(std::span<const double> verb_scores, std::span<const double> noun_scores) {
  ActionPrediction a;
  a.verb_top5 = top_k(verb_scores, 5);
  a.noun_top5 = top_k(noun_scores, 5);
  a.verb = a.verb_top5.front();
  a.noun = a.noun_top5.front();
  return a;
}

template <typename S>
ActionPrediction action_prediction(const PredictionBundle<S>& b) {
  return action_prediction(to_doubles(b.verb_logits), to_doubles(b.noun_logits));
}

}  // namespace thorn
