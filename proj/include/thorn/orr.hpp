#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "thorn/orf.hpp"
#include "thorn/tensor.hpp"

namespace thorn {

struct OrrConfig {
  int num_classes = 10;
  int d2 = 128;
  int d_e = 32;
  int heads = 3;
  int kernel = 9;
  int blocks = 5;
  bool shared_base = false;     // one base adjacency for all heads of a block
  double attention_scale = 1.0; // extra multiplier on the normalised attention scores
  bool block_norm = false;      // blocks read a layer-normalised copy of their input
};

/// Per-video superimposed adjacencies A' = A + softmax(scores), (blocks, heads, C_o, C_o).
template <typename S>
struct AdjacencyState {
  Tensor<S> superimposed;

  int blocks() const { return superimposed.dim(0); }
  int heads() const { return superimposed.dim(1); }
  int classes() const { return superimposed.dim(2); }

  /// Last block's adjacency averaged over heads, (C_o, C_o).
  Tensor<S> last_block_mean() const {
    const int B = blocks(), H = heads(), C = classes();
    Tensor<S> out({C, C});
    const S* base = superimposed.data() + static_cast<std::size_t>(B - 1) * H * C * C;
    for (int h = 0; h < H; ++h)
      for (int i = 0; i < C * C; ++i) out[i] += base[static_cast<std::size_t>(h) * C * C + i];
    for (auto& v : out.storage()) v /= static_cast<S>(H);
    return out;
  }
};

template <typename S>
void softmax_rows(MatMap<S> m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const S mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

/// One object relation reasoning block: multi-head attention-superimposed
/// graph convolution, a per-class temporal convolution and a residual add.
template <typename S>
class GraphBlock {
 public:
  struct Cache {
    Tensor<S> input;   // (T, C, D), normalised when block_norm is set
    std::vector<S> inv_std;  // per (t, c) row, block_norm only
    Tensor<S> e1, e2;  // (heads, T*C, D_e)
    Tensor<S> attn;    // softmax part (heads, C, C)
    Tensor<S> adj;     // A' (heads, C, C)
    Tensor<S> z;       // G W3 (heads, T*C, D)
    Tensor<S> mixed;   // sum over heads of A' G W3, (T*C, D)
  };

  GraphBlock() = default;
  explicit GraphBlock(const OrrConfig& cfg) : cfg_(cfg) {
    if (cfg.num_classes < 1 || cfg.d2 < 1 || cfg.d_e < 1 || cfg.heads < 1)
      throw ConfigError("orr: classes, d2, d_e and heads must be positive");
    if (cfg.kernel < 1 || cfg.kernel % 2 == 0)
      throw ConfigError("orr: temporal kernel must be odd, got " + std::to_string(cfg.kernel));
    const int H = cfg.heads, C = cfg.num_classes, D = cfg.d2, E = cfg.d_e;
    base = Param<S>({cfg.shared_base ? 1 : H, C, C});
    w1 = Param<S>({H, D, E});
    w2 = Param<S>({H, D, E});
    w3 = Param<S>({H, D, D});
    tconv = Param<S>({cfg.kernel, D, D});
    tbias = Param<S>({D});
  }

  /// Base adjacency fully connected at 1/C_o; other weights fan-in uniform.
  void init(Rng& rng) {
    base.value.fill(S(1) / static_cast<S>(cfg_.num_classes));
    init_fan_in(w1.value, cfg_.d2, rng);
    init_fan_in(w2.value, cfg_.d2, rng);
    init_fan_in(w3.value, cfg_.d2, rng);
    init_fan_in(tconv.value, cfg_.kernel * cfg_.d2, rng);
    init_fan_in(tbias.value, cfg_.kernel * cfg_.d2, rng);
  }

  void zero() {
    for (auto* p : {&base, &w1, &w2, &w3, &tconv, &tbias}) p->value.set_zero();
  }

  const OrrConfig& config() const { return cfg_; }

  /// Scores are averaged over frames and divided by sqrt(D_e) before the softmax.
  S score_scale(int frames) const {
    return static_cast<S>(cfg_.attention_scale / (frames * std::sqrt(static_cast<double>(cfg_.d_e))));
  }

  void check_nodes(const Tensor<S>& g) const {
    if (g.rank() != 3 || g.dim(1) != cfg_.num_classes || g.dim(2) != cfg_.d2)
      throw Error("orr: expected nodes (T, " + std::to_string(cfg_.num_classes) + ", " + std::to_string(cfg_.d2) +
                  "), got " + shape_str(g.shape()));
    if (g.dim(0) < 1) throw Error("orr: need at least one frame");
  }

  /// A'[head] for the given nodes; optionally returns embeddings and the softmax part.
  Tensor<S> attention_adjacency(const Tensor<S>& g, int head, Tensor<S>* e1_out = nullptr, Tensor<S>* e2_out = nullptr,
                                Tensor<S>* attn_out = nullptr) const {
    check_nodes(g);
    const int T = g.dim(0), C = cfg_.num_classes, D = cfg_.d2, E = cfg_.d_e;
    auto G = as_matrix(g, D);
    const RowMatrix<S> e1 = G * as_matrix(w1.value.data() + slice(head, D * E), D, E);
    const RowMatrix<S> e2 = G * as_matrix(w2.value.data() + slice(head, D * E), D, E);
    RowMatrix<S> scores = RowMatrix<S>::Zero(C, C);
    for (int t = 0; t < T; ++t) scores.noalias() += e1.middleRows(t * C, C) * e2.middleRows(t * C, C).transpose();
    scores *= score_scale(T);
    Tensor<S> attn({C, C});
    as_matrix(attn, C) = scores;
    softmax_rows(as_matrix(attn, C));
    Tensor<S> adj({C, C});
    const S* a = base.value.data() + slice(base_index(head), C * C);
    for (int i = 0; i < C * C; ++i) adj[i] = a[i] + attn[i];
    if (e1_out) std::copy(e1.data(), e1.data() + e1.size(), e1_out->data() + slice(head, T * C * E));
    if (e2_out) std::copy(e2.data(), e2.data() + e2.size(), e2_out->data() + slice(head, T * C * E));
    if (attn_out) std::copy(attn.data(), attn.data() + attn.size(), attn_out->data() + slice(head, C * C));
    return adj;
  }

  /// out[t] = adjacency * nodes[t] * W3[head]; frames never mix.
  Tensor<S> graph_convolve(const Tensor<S>& g, const Tensor<S>& adjacency, int head) const {
    check_nodes(g);
    const int T = g.dim(0), C = cfg_.num_classes, D = cfg_.d2;
    require_shape(adjacency.shape(), {C, C}, "graph_convolve adjacency");
    Tensor<S> out(g.shape());
    const auto Adj = as_matrix(adjacency, C);
    const auto W3 = as_matrix(w3.value.data() + slice(head, D * D), D, D);
    auto G = as_matrix(g, D);
    auto O = as_matrix(out, D);
    for (int t = 0; t < T; ++t) O.middleRows(t * C, C).noalias() = Adj * (G.middleRows(t * C, C) * W3);
    return out;
  }

  /// Temporal conv over T with same-length zero padding, applied per class.
  Tensor<S> temporal_conv(const Tensor<S>& m) const {
    const int T = m.dim(0), C = cfg_.num_classes, D = cfg_.d2, k = cfg_.kernel, r = k / 2;
    Tensor<S> y(m.shape());
    auto Y = as_matrix(y, D);
    Y.rowwise() = ConstVecMap<S>(tbias.value.data(), D).transpose();
    auto M = as_matrix(m, D);
    for (int j = 0; j < k; ++j) {
      const int shift = j - r;  // y[t] += m[t + shift] K_j
      const int t0 = std::max(0, -shift), t1 = std::min(T, T - shift);
      if (t1 <= t0) continue;
      const auto K = as_matrix(tconv.value.data() + slice(j, D * D), D, D);
      Y.middleRows(t0 * C, (t1 - t0) * C).noalias() += M.middleRows((t0 + shift) * C, (t1 - t0) * C) * K;
    }
    return y;
  }

  /// Block output; A' for every head is left in cache.adj (heads, C, C).
  Tensor<S> forward(const Tensor<S>& g, Cache& cache) const {
    check_nodes(g);
    const int T = g.dim(0), C = cfg_.num_classes, D = cfg_.d2, E = cfg_.d_e, H = cfg_.heads;
    if (cfg_.block_norm)
      cache.input = layer_norm_rows(g, D, cache.inv_std);
    else
      cache.input = g;
    const Tensor<S>& x = cache.input;
    cache.e1 = Tensor<S>({H, T * C, E});
    cache.e2 = Tensor<S>({H, T * C, E});
    cache.attn = Tensor<S>({H, C, C});
    cache.adj = Tensor<S>({H, C, C});
    cache.z = Tensor<S>({H, T * C, D});
    cache.mixed = Tensor<S>({T, C, D});
    auto G = as_matrix(x, D);
    auto Mx = as_matrix(cache.mixed, D);
    for (int h = 0; h < H; ++h) {
      const Tensor<S> adj = attention_adjacency(x, h, &cache.e1, &cache.e2, &cache.attn);
      std::copy(adj.data(), adj.data() + adj.size(), cache.adj.data() + slice(h, C * C));
      auto Z = as_matrix(cache.z.data() + slice(h, T * C * D), T * C, D);
      Z.noalias() = G * as_matrix(w3.value.data() + slice(h, D * D), D, D);
      const auto Adj = as_matrix(adj, C);
      for (int t = 0; t < T; ++t) Mx.middleRows(t * C, C).noalias() += Adj * Z.middleRows(t * C, C);
    }
    Tensor<S> out = temporal_conv(cache.mixed);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += g[i];
    return out;
  }

  /// dadj: optional extra gradient on A' (heads, C, C) from downstream heads.
  Tensor<S> backward(const Cache& cache, const Tensor<S>& dout, const Tensor<S>* dadj) {
    const auto& g = cache.input;
    const int T = g.dim(0), C = cfg_.num_classes, D = cfg_.d2, E = cfg_.d_e, H = cfg_.heads, k = cfg_.kernel,
              r = k / 2;
    Tensor<S> dg(g.shape());  // w.r.t. the (possibly normalised) block input
    auto dY = as_matrix(dout, D);
    auto M = as_matrix(cache.mixed, D);
    VecMap<S>(tbias.grad.data(), D) += dY.colwise().sum().transpose();
    Tensor<S> dmixed(cache.mixed.shape());
    auto dM = as_matrix(dmixed, D);
    for (int j = 0; j < k; ++j) {
      const int shift = j - r;
      const int t0 = std::max(0, -shift), t1 = std::min(T, T - shift);
      if (t1 <= t0) continue;
      const auto rows_y = dY.middleRows(t0 * C, (t1 - t0) * C);
      as_matrix(tconv.grad.data() + slice(j, D * D), D, D).noalias() +=
          M.middleRows((t0 + shift) * C, (t1 - t0) * C).transpose() * rows_y;
      dM.middleRows((t0 + shift) * C, (t1 - t0) * C).noalias() +=
          rows_y * as_matrix(tconv.value.data() + slice(j, D * D), D, D).transpose();
    }

    auto G = as_matrix(g, D);
    auto dG = as_matrix(dg, D);
    for (int h = 0; h < H; ++h) {
      const auto Adj = as_matrix(cache.adj.data() + slice(h, C * C), C, C);
      const auto Z = as_matrix(cache.z.data() + slice(h, T * C * D), T * C, D);
      RowMatrix<S> dadj_h = RowMatrix<S>::Zero(C, C);
      if (dadj) dadj_h = as_matrix(dadj->data() + slice(h, C * C), C, C);
      RowMatrix<S> dZ(T * C, D);
      for (int t = 0; t < T; ++t) {
        dadj_h.noalias() += dM.middleRows(t * C, C) * Z.middleRows(t * C, C).transpose();
        dZ.middleRows(t * C, C).noalias() = Adj.transpose() * dM.middleRows(t * C, C);
      }
      const auto W3 = as_matrix(w3.value.data() + slice(h, D * D), D, D);
      as_matrix(w3.grad.data() + slice(h, D * D), D, D).noalias() += G.transpose() * dZ;
      dG.noalias() += dZ * W3.transpose();

      // A' = A + softmax(score_scale(T) * sum_t E1_t E2_t^T)
      as_matrix(base.grad.data() + slice(base_index(h), C * C), C, C) += dadj_h;
      const auto P = as_matrix(cache.attn.data() + slice(h, C * C), C, C);
      RowMatrix<S> dS(C, C);
      for (int i = 0; i < C; ++i) {
        const S dot = P.row(i).dot(dadj_h.row(i));
        dS.row(i) = P.row(i).array() * (dadj_h.row(i).array() - dot);
      }
      dS *= score_scale(T);
      const auto E1 = as_matrix(cache.e1.data() + slice(h, T * C * E), T * C, E);
      const auto E2 = as_matrix(cache.e2.data() + slice(h, T * C * E), T * C, E);
      RowMatrix<S> dE1(T * C, E), dE2(T * C, E);
      for (int t = 0; t < T; ++t) {
        dE1.middleRows(t * C, C).noalias() = dS * E2.middleRows(t * C, C);
        dE2.middleRows(t * C, C).noalias() = dS.transpose() * E1.middleRows(t * C, C);
      }
      as_matrix(w1.grad.data() + slice(h, D * E), D, E).noalias() += G.transpose() * dE1;
      as_matrix(w2.grad.data() + slice(h, D * E), D, E).noalias() += G.transpose() * dE2;
      dG.noalias() += dE1 * as_matrix(w1.value.data() + slice(h, D * E), D, E).transpose();
      dG.noalias() += dE2 * as_matrix(w2.value.data() + slice(h, D * E), D, E).transpose();
    }
    if (cfg_.block_norm) dg = layer_norm_rows_backward(g, cache.inv_std, dg, D);
    for (std::size_t i = 0; i < dg.size(); ++i) dg[i] += dout[i];  // residual
    return dg;
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& f) {
    f(prefix + ".base_adjacency", base);
    f(prefix + ".w1", w1);
    f(prefix + ".w2", w2);
    f(prefix + ".w3", w3);
    f(prefix + ".tconv.weight", tconv);
    f(prefix + ".tconv.bias", tbias);
  }

  Param<S> base;   // (heads or 1, C, C)
  Param<S> w1;     // (heads, D2, D_e)
  Param<S> w2;     // (heads, D2, D_e)
  Param<S> w3;     // (heads, D2, D2)
  Param<S> tconv;  // (k, D2, D2), tap j multiplies frame t + j - k/2
  Param<S> tbias;  // (D2)

 private:
  static std::size_t slice(int i, int n) { return static_cast<std::size_t>(i) * static_cast<std::size_t>(n); }
  int base_index(int head) const { return cfg_.shared_base ? 0 : head; }

  OrrConfig cfg_;
};

/// N stacked graph blocks; each block consumes the previous block's output.
template <typename S>
class RelationStack {
 public:
  using Cache = std::vector<typename GraphBlock<S>::Cache>;

  RelationStack() = default;
  explicit RelationStack(const OrrConfig& cfg) : cfg_(cfg) {
    if (cfg.blocks < 1) throw ConfigError("orr: need at least one block");
    blocks_.assign(cfg.blocks, GraphBlock<S>(cfg));
  }
  explicit RelationStack(std::vector<GraphBlock<S>> blocks) : blocks_(std::move(blocks)) {
    if (blocks_.empty()) throw Error("orr: empty block list");
    cfg_ = blocks_.front().config();
    cfg_.blocks = static_cast<int>(blocks_.size());
  }

  void init(Rng& rng) {
    for (auto& b : blocks_) b.init(rng);
  }
  void zero() {
    for (auto& b : blocks_) b.zero();
  }

  const OrrConfig& config() const { return cfg_; }

  std::vector<GraphBlock<S>>& blocks() { return blocks_; }
  const std::vector<GraphBlock<S>>& blocks() const { return blocks_; }

  ObjectNodeTensor<S> forward(const ObjectNodeTensor<S>& nodes, AdjacencyState<S>& adjacency, Cache& cache) const {
    const int B = static_cast<int>(blocks_.size()), H = cfg_.heads, C = cfg_.num_classes;
    adjacency.superimposed = Tensor<S>({B, H, C, C});
    cache.assign(B, {});
    Tensor<S> g = nodes.nodes;
    for (int b = 0; b < B; ++b) {
      g = blocks_[b].forward(g, cache[b]);
      std::copy(cache[b].adj.data(), cache[b].adj.data() + cache[b].adj.size(),
                adjacency.superimposed.data() + static_cast<std::size_t>(b) * H * C * C);
    }
    return {std::move(g)};
  }

  std::pair<ObjectNodeTensor<S>, AdjacencyState<S>> forward(const ObjectNodeTensor<S>& nodes) const {
    Cache cache;
    AdjacencyState<S> adj;
    auto out = forward(nodes, adj, cache);
    return {std::move(out), std::move(adj)};
  }

  /// dadj: optional gradient on the full AdjacencyState (blocks, heads, C, C).
  Tensor<S> backward(const Cache& cache, const Tensor<S>& dout, const Tensor<S>* dadj) {
    const int B = static_cast<int>(blocks_.size()), H = cfg_.heads, C = cfg_.num_classes;
    Tensor<S> d = dout;
    for (int b = B - 1; b >= 0; --b) {
      Tensor<S> slice;
      if (dadj) {
        slice = Tensor<S>({H, C, C});
        const S* src = dadj->data() + static_cast<std::size_t>(b) * H * C * C;
        std::copy(src, src + slice.size(), slice.data());
      }
      d = blocks_[b].backward(cache[b], d, dadj ? &slice : nullptr);
    }
    return d;
  }

  void visit(const ParamVisitor<S>& f) {
    for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].visit("orr.block" + std::to_string(b + 1), f);
  }

 private:
  OrrConfig cfg_;
  std::vector<GraphBlock<S>> blocks_;
};

}  // namespace thorn
