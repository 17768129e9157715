#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "thorn/encoder.hpp"
#include "thorn/heads.hpp"
#include "thorn/orf.hpp"
#include "thorn/orr.hpp"
#include "thorn/tensor.hpp"

namespace thorn {

enum class Architecture { thorn, baseline };

inline std::string to_string(Architecture a) { return a == Architecture::baseline ? "baseline" : "thorn"; }

/// Everything needed to rebuild a model's parameter layout.
struct ModelConfig {
  Architecture arch = Architecture::thorn;
  NodeMode node_mode = NodeMode::spatio_temporal;
  bool verb_from_nodes = false;
  int num_classes = 10;
  int num_verbs = 6;
  int height = 56;
  int width = 56;
  int grid = 7;
  int encoder_width = 16;
  int d1 = 432;
  int d_g = 256;
  int d2 = 128;
  int d_e = 32;
  int heads = 3;
  int blocks = 5;
  int kernel = 9;
  double dropout = 0.3;
  double attention_scale = 1.0;
  bool block_norm = false;
  bool relu_presence = false;
  bool shared_classifier = false;
  bool shared_base = false;

  EncoderConfig encoder() const { return {height, width, grid, encoder_width, d1, d_g}; }
  OrfConfig orf() const {
    const int in = node_mode == NodeMode::temporal ? d_g : grid * grid * d1;
    return {in, num_classes, d2, dropout, relu_presence, shared_classifier};
  }
  OrrConfig orr() const { return {num_classes, d2, d_e, heads, kernel, blocks, shared_base, attention_scale, block_norm}; }
  HeadsConfig heads_config() const { return {num_classes, d2, num_verbs, verb_from_nodes}; }
};

/// Full pipeline: encoder -> object filter -> relation stack -> heads, or the
/// encoder-only baseline. Forward passes are const; backward passes
/// accumulate into the parameters' gradient buffers.
template <typename S>
class ActionModel {
 public:
  struct Cache {
    typename ReferenceEncoder<S>::Cache encoder;
    SceneFeature<S> scene;
    typename ObjectFilter<S>::Cache orf;
    typename ObjectFilter<S>::ClassifierCache classifier;
    typename RelationStack<S>::Cache orr;
    typename PredictionHeads<S>::Cache heads;
    Tensor<S> pooled;  // baseline only
  };

  struct Output {
    PredictionBundle<S> bundle;
    AdjacencyState<S> adjacency;
    ObjectNodeTensor<S> nodes;  // output of the relation stack
  };

  ActionModel() = default;

  static ActionModel create(const ModelConfig& cfg, std::uint64_t seed) {
    ActionModel m(cfg);
    m.encoder_ = ReferenceEncoder<S>::init(cfg.encoder(), seed);
    Rng rng = make_rng(seed, 0x7404);
    if (cfg.arch == Architecture::baseline) {
      m.baseline_.init(rng);
    } else {
      m.orf_.init(rng);
      m.orr_.init(rng);
      m.heads_.init(rng);
    }
    return m;
  }

  explicit ActionModel(const ModelConfig& cfg) : cfg_(cfg), encoder_(cfg.encoder()) {
    if (cfg.num_classes < 1 || cfg.num_verbs < 1) throw ConfigError("model: class counts must be positive");
    if (cfg.arch == Architecture::baseline) {
      baseline_ = PooledHeads<S>(cfg.d1, cfg.num_classes, cfg.num_verbs);
    } else {
      orf_ = ObjectFilter<S>(cfg.orf());
      orr_ = RelationStack<S>(cfg.orr());
      heads_ = PredictionHeads<S>(cfg.heads_config());
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ReferenceEncoder<S>& encoder() { return encoder_; }
  const ReferenceEncoder<S>& encoder() const { return encoder_; }
  ObjectFilter<S>& orf() { return orf_; }
  const ObjectFilter<S>& orf() const { return orf_; }
  RelationStack<S>& orr() { return orr_; }
  const RelationStack<S>& orr() const { return orr_; }
  PredictionHeads<S>& heads() { return heads_; }
  const PredictionHeads<S>& heads() const { return heads_; }

  Output forward(const ClipTensor<S>& clip, bool training, Rng* rng, Cache& cache) const {
    Output out;
    if (cfg_.arch == Architecture::baseline) {
      cache.scene = encoder_.forward(clip, NodeMode::spatio_temporal, cache.encoder);
      out.bundle = baseline_.predict(cache.scene.features, &cache.pooled);
      return out;
    }
    cache.scene = encoder_.forward(clip, cfg_.node_mode, cache.encoder);
    const auto nodes = orf_.filter(cache.scene, training, rng, cache.orf);
    out.bundle.object_logits = orf_.classify(nodes, &cache.classifier);
    out.nodes = orr_.forward(nodes, out.adjacency, cache.orr);
    const auto b = heads_.predict(out.nodes, out.adjacency, &cache.heads);
    out.bundle.verb_logits = b.verb_logits;
    out.bundle.noun_logits = b.noun_logits;
    return out;
  }

  Output predict(const ClipTensor<S>& clip) const {
    Cache cache;
    return forward(clip, false, nullptr, cache);
  }

  /// Backpropagates loss gradients through the whole pipeline. Returns the
  /// clip gradient when `need_input_grad` is set.
  Tensor<S> backward(const Cache& cache, const LossGrads<S>& g, bool need_input_grad = false) {
    SceneFeature<S> dscene{cache.scene.mode, {}};
    if (cfg_.arch == Architecture::baseline) {
      const auto& f = cache.scene.features;
      dscene.features = baseline_.backward(cache.pooled, f.size() / cfg_.d1, g.noun_logits, g.verb_logits)
                            .reshaped(f.shape());
      return encoder_.backward(cache.encoder, dscene, need_input_grad);
    }
    auto hg = heads_.backward(cache.heads, g.noun_logits, g.verb_logits);
    Tensor<S> dnodes = orr_.backward(cache.orr, hg.nodes, hg.adjacency.empty() ? nullptr : &hg.adjacency);
    if (!g.object_logits.empty()) {
      const Tensor<S> dn = orf_.backward_classify(cache.classifier, g.object_logits);
      for (std::size_t i = 0; i < dnodes.size(); ++i) dnodes[i] += dn[i];
    }
    dscene.features = orf_.backward_filter(cache.orf, dnodes, true).reshaped(cache.scene.features.shape());
    return encoder_.backward(cache.encoder, dscene, need_input_grad);
  }

  /// Forward + joint loss + backward for one clip; gradients are scaled by `weight`.
  LossBreakdown accumulate(const ClipTensor<S>& clip, int verb, int noun, const Tensor<S>& presence, bool training,
                           Rng* rng, S weight = S(1)) {
    Cache cache;
    const auto out = forward(clip, training, rng, cache);
    LossGrads<S> g;
    const auto loss = joint_loss(out.bundle, verb, noun, presence, &g);
    for (auto* t : {&g.verb_logits, &g.noun_logits, &g.object_logits})
      for (auto& v : t->storage()) v *= weight;
    backward(cache, g);
    return loss;
  }

  void visit(const ParamVisitor<S>& f) {
    encoder_.visit(f);
    if (cfg_.arch == Architecture::baseline) {
      baseline_.visit(f);
      return;
    }
    orf_.visit(f);
    orr_.visit(f);
    heads_.visit(f);
  }

  void visit(const ConstParamVisitor<S>& f) const {
    const_cast<ActionModel*>(this)->visit(ParamVisitor<S>([&](const std::string& n, Param<S>& p) { f(n, p); }));
  }

  void zero_grad() {
    visit(ParamVisitor<S>([](const std::string&, Param<S>& p) { p.zero_grad(); }));
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    visit(ConstParamVisitor<S>([&](const std::string&, const Param<S>& p) { n += p.size(); }));
    return n;
  }

 private:
  ModelConfig cfg_;
  ReferenceEncoder<S> encoder_;
  ObjectFilter<S> orf_;
  RelationStack<S> orr_;
  PredictionHeads<S> heads_;
  PooledHeads<S> baseline_;
};

}  // namespace thorn
