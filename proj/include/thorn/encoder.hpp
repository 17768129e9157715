#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "thorn/layers.hpp"
#include "thorn/tensor.hpp"

namespace thorn {

enum class NodeMode { spatio_temporal, temporal };

inline std::string to_string(NodeMode m) { return m == NodeMode::temporal ? "temporal" : "spatio_temporal"; }

/// RGB clip (T, H, W, 3) with values in [0, 1].
template <typename S>
struct ClipTensor {
  Tensor<S> data;

  int frames() const { return data.dim(0); }
  int height() const { return data.dim(1); }
  int width() const { return data.dim(2); }
};

/// Encoder output: the (T, H', W', D1) grid, or the spatially pooled (T, D_g) variant.
template <typename S>
struct SceneFeature {
  NodeMode mode = NodeMode::spatio_temporal;
  Tensor<S> features;

  int frames() const { return features.dim(0); }
  /// Per-frame flattened width: H'*W'*D1 or D_g.
  int row_size() const { return static_cast<int>(features.size() / features.dim(0)); }
};

struct EncoderConfig {
  int height = 56;
  int width = 56;
  int grid = 7;        // required H' = W'
  int base_width = 16; // channels of the first conv; later stages use 2x, 4x, 4x
  int d1 = 432;
  int d_g = 256;
};

/// Stand-in backbone: four 3x3x3 conv stages (spatial strides 2, 2, 2, 1; no
/// temporal striding), each conv -> per-clip instance norm -> ReLU, followed by
/// a pointwise expansion to D1. The temporal variant adds a pointwise D1 -> D_g
/// layer and averages over space.
template <typename S>
class ReferenceEncoder {
 public:
  static constexpr std::array<int, 4> kStrides{2, 2, 2, 1};

  struct Cache {
    std::array<Tensor<S>, 4> cols;
    std::array<typename InstanceNorm<S>::Cache, 4> norms;
    std::array<Tensor<S>, 4> acts;  // post-ReLU stage outputs
    std::array<Shape, 4> in_shapes;
    Tensor<S> grid;                 // post-ReLU expansion output
    Tensor<S> head;                 // post-ReLU temporal head output
  };

  ReferenceEncoder() = default;

  /// Deterministic construction for a fixed seed.
  static ReferenceEncoder init(const EncoderConfig& cfg, std::uint64_t seed) {
    ReferenceEncoder enc(cfg);
    Rng rng = make_rng(seed, 0xE1C0);
    for (auto& c : enc.convs_) c.init(rng);
    enc.expand_.init_relu(rng);
    enc.head_.init_relu(rng);
    return enc;
  }

  explicit ReferenceEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
    if (cfg.d1 < 8) throw ConfigError("encoder: d1 must be >= 8, got " + std::to_string(cfg.d1));
    if (cfg.d_g < 1) throw ConfigError("encoder: d_g must be positive");
    if (cfg.base_width < 1) throw ConfigError("encoder: base_width must be positive");
    if (cfg.height < 8 || cfg.width < 8) throw ConfigError("encoder: input must be at least 8x8");
    const auto [gh, gw] = output_extent(cfg.height, cfg.width);
    if (gh != cfg.grid || gw != cfg.grid)
      throw ConfigError("encoder: input " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                        " reduces to " + std::to_string(gh) + "x" + std::to_string(gw) + ", not " +
                        std::to_string(cfg.grid) + "x" + std::to_string(cfg.grid));
    const int b = cfg.base_width;
    const std::array<int, 5> ch{3, b, 2 * b, 4 * b, 4 * b};
    for (int i = 0; i < 4; ++i) {
      convs_[i] = Conv3d<S>(ch[i], ch[i + 1], kStrides[i]);
      norms_[i] = InstanceNorm<S>(ch[i + 1]);
    }
    expand_ = Linear<S>(ch[4], cfg.d1);
    head_ = Linear<S>(cfg.d1, cfg.d_g);
  }

  static std::array<int, 2> output_extent(int h, int w) {
    for (int s : kStrides) {
      h = Conv3d<S>::out_extent(h, s);
      w = Conv3d<S>::out_extent(w, s);
    }
    return {h, w};
  }

  const EncoderConfig& config() const { return cfg_; }

  int output_width(NodeMode mode) const {
    return mode == NodeMode::temporal ? cfg_.d_g : cfg_.grid * cfg_.grid * cfg_.d1;
  }

  void validate(const ClipTensor<S>& clip) const {
    const auto& d = clip.data;
    if (d.rank() != 4 || d.dim(3) != 3) throw Error("encode: clip must be (T, H, W, 3), got " + shape_str(d.shape()));
    if (d.dim(0) < 1) throw Error("encode: clip needs at least one frame");
    if (d.dim(1) != cfg_.height || d.dim(2) != cfg_.width)
      throw Error("encode: clip resolution " + std::to_string(d.dim(1)) + "x" + std::to_string(d.dim(2)) +
                  " incompatible with encoder input " + std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width));
    if (!d.all_finite()) throw Error("encode: clip contains non-finite values");
  }

  SceneFeature<S> forward(const ClipTensor<S>& clip, NodeMode mode, Cache& cache) const {
    validate(clip);
    // Pixels are shifted to [-0.5, 0.5] before the first convolution.
    Tensor<S> centred = clip.data;
    for (auto& v : centred.storage()) v -= S(0.5);
    const Tensor<S>* x = &centred;
    for (int i = 0; i < 4; ++i) {
      cache.in_shapes[i] = x->shape();
      cache.acts[i] = norms_[i].forward(convs_[i].forward(*x, cache.cols[i]), cache.norms[i]);
      relu_inplace(cache.acts[i]);
      x = &cache.acts[i];
    }
    const int T = clip.frames(), g = cfg_.grid;
    cache.grid = expand_.forward(*x).reshaped({T, g, g, cfg_.d1});
    relu_inplace(cache.grid);
    if (mode == NodeMode::spatio_temporal) return {mode, cache.grid};

    cache.head = head_.forward(cache.grid);
    relu_inplace(cache.head);
    Tensor<S> pooled({T, cfg_.d_g});
    auto H = as_matrix(cache.head, cfg_.d_g);
    for (int t = 0; t < T; ++t)
      as_matrix(pooled, cfg_.d_g).row(t) = H.middleRows(static_cast<Eigen::Index>(t) * g * g, g * g).colwise().mean();
    return {mode, std::move(pooled)};
  }

  SceneFeature<S> encode(const ClipTensor<S>& clip, NodeMode mode) const {
    Cache cache;
    return forward(clip, mode, cache);
  }

  /// Accumulates parameter gradients given d(loss)/d(features). Returns the
  /// clip gradient only when requested.
  Tensor<S> backward(const Cache& cache, const SceneFeature<S>& grad, bool need_input_grad = false) {
    const int T = cache.grid.dim(0), g = cfg_.grid;
    Tensor<S> dgrid;
    if (grad.mode == NodeMode::spatio_temporal) {
      dgrid = grad.features.reshaped({T * g * g, cfg_.d1});
    } else {
      Tensor<S> dhead({T * g * g, cfg_.d_g});
      auto dH = as_matrix(dhead, cfg_.d_g);
      auto dP = as_matrix(grad.features, cfg_.d_g);
      const S inv = S(1) / static_cast<S>(g * g);
      for (int t = 0; t < T; ++t)
        dH.middleRows(static_cast<Eigen::Index>(t) * g * g, g * g).rowwise() = dP.row(t) * inv;
      relu_backward_inplace(cache.head, dhead);
      dgrid = head_.backward(cache.grid, dhead, true);
    }
    relu_backward_inplace(cache.grid, dgrid);
    Tensor<S> d = expand_.backward(cache.acts[3], dgrid, true).reshaped(cache.acts[3].shape());
    for (int i = 3; i >= 0; --i) {
      relu_backward_inplace(cache.acts[i], d);
      d = norms_[i].backward(cache.norms[i], d);
      const bool need = i > 0 || need_input_grad;
      d = convs_[i].backward(cache.cols[i], cache.in_shapes[i], d, need);
    }
    return d;
  }

  void visit(const ParamVisitor<S>& f) {
    for (int i = 0; i < 4; ++i) {
      convs_[i].visit("encoder.conv" + std::to_string(i + 1), f);
      norms_[i].visit("encoder.norm" + std::to_string(i + 1), f);
    }
    expand_.visit("encoder.expand", f);
    head_.visit("encoder.temporal_head", f);
  }

 private:
  EncoderConfig cfg_;
  std::array<Conv3d<S>, 4> convs_;
  std::array<InstanceNorm<S>, 4> norms_;
  Linear<S> expand_;
  Linear<S> head_;
};

}  // namespace thorn
