#pragma once

#include <string>

#include "thorn/tensor.hpp"

namespace thorn {

/// Affine map over the last axis: y = x W + b, W of shape (in, out).
template <typename S>
struct Linear {
  Param<S> weight;
  Param<S> bias;

  Linear() = default;
  Linear(int in, int out) : weight({in, out}), bias({out}) {}

  int in_features() const { return weight.value.dim(0); }
  int out_features() const { return weight.value.dim(1); }

  void init(Rng& rng) {
    init_fan_in(weight.value, in_features(), rng);
    init_fan_in(bias.value, in_features(), rng);
  }

  /// For layers followed by a ReLU.
  void init_relu(Rng& rng) {
    init_relu_fan_in(weight.value, in_features(), rng);
    bias.value.set_zero();
  }

  /// x viewed as (rows, in); returns (rows, out).
  Tensor<S> forward(const Tensor<S>& x) const {
    const int in = in_features(), out = out_features();
    if (x.size() % in != 0) throw Error("linear: input " + shape_str(x.shape()) + " incompatible with in=" + std::to_string(in));
    const auto rows = static_cast<int>(x.size() / in);
    Tensor<S> y({rows, out});
    auto Y = as_matrix(y, out);
    Y.noalias() = as_matrix(x, in) * as_matrix(weight.value, out);
    Y.rowwise() += ConstVecMap<S>(bias.value.data(), out).transpose();
    return y;
  }

  /// Accumulates parameter gradients; returns dx when requested.
  Tensor<S> backward(const Tensor<S>& x, const Tensor<S>& dy, bool need_input_grad) {
    const int in = in_features(), out = out_features();
    auto dY = as_matrix(dy, out);
    as_matrix(weight.grad, out).noalias() += as_matrix(x, in).transpose() * dY;
    VecMap<S>(bias.grad.data(), out) += dY.colwise().sum().transpose();
    if (!need_input_grad) return {};
    Tensor<S> dx({static_cast<int>(dy.size() / out), in});
    as_matrix(dx, in).noalias() = dY * as_matrix(weight.value, out).transpose();
    return dx;
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

/// Per-channel standardisation over every row of one sample, followed by a
/// learned scale and shift. Rows are positions, columns channels.
template <typename S>
struct InstanceNorm {
  static constexpr double kEps = 1e-5;

  Param<S> gamma;
  Param<S> beta;

  struct Cache {
    Tensor<S> xhat;
    std::vector<S> inv_std;
  };

  InstanceNorm() = default;
  explicit InstanceNorm(int channels) : gamma({channels}), beta({channels}) { gamma.value.fill(S(1)); }

  int channels() const { return gamma.value.dim(0); }

  Tensor<S> forward(const Tensor<S>& x, Cache& cache) const {
    const int C = channels();
    auto X = as_matrix(x, C);
    const auto n = static_cast<S>(X.rows());
    cache.xhat = Tensor<S>(x.shape());
    cache.inv_std.assign(C, S(0));
    auto Xh = as_matrix(cache.xhat, C);
    Tensor<S> y(x.shape());
    auto Y = as_matrix(y, C);
    for (int c = 0; c < C; ++c) {
      const S mean = X.col(c).sum() / n;
      const S var = (X.col(c).array() - mean).square().sum() / n;
      const S inv = S(1) / std::sqrt(var + static_cast<S>(kEps));
      cache.inv_std[c] = inv;
      Xh.col(c) = (X.col(c).array() - mean) * inv;
      Y.col(c) = Xh.col(c) * gamma.value[c];
      Y.col(c).array() += beta.value[c];
    }
    return y;
  }

  Tensor<S> backward(const Cache& cache, const Tensor<S>& dy) {
    const int C = channels();
    auto dY = as_matrix(dy, C);
    auto Xh = as_matrix(cache.xhat, C);
    const auto n = static_cast<S>(dY.rows());
    Tensor<S> dx(dy.shape());
    auto dX = as_matrix(dx, C);
    for (int c = 0; c < C; ++c) {
      const S sum_dy = dY.col(c).sum();
      const S sum_dy_xh = dY.col(c).dot(Xh.col(c));
      gamma.grad[c] += sum_dy_xh;
      beta.grad[c] += sum_dy;
      const S k = gamma.value[c] * cache.inv_std[c];
      dX.col(c) = k * (dY.col(c).array() - sum_dy / n - Xh.col(c).array() * (sum_dy_xh / n));
    }
    return dx;
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

/// Standardises every row of width `cols` to zero mean and unit variance (no
/// learned scale). `inv_std` receives one entry per row.
template <typename S>
Tensor<S> layer_norm_rows(const Tensor<S>& x, int cols, std::vector<S>& inv_std) {
  constexpr double kEps = 1e-5;
  auto X = as_matrix(x, cols);
  Tensor<S> y(x.shape());
  auto Y = as_matrix(y, cols);
  inv_std.assign(X.rows(), S(0));
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const S mean = X.row(r).mean();
    const S var = (X.row(r).array() - mean).square().mean();
    inv_std[r] = S(1) / std::sqrt(var + static_cast<S>(kEps));
    Y.row(r) = (X.row(r).array() - mean) * inv_std[r];
  }
  return y;
}

/// Gradient of layer_norm_rows given its output `y`.
template <typename S>
Tensor<S> layer_norm_rows_backward(const Tensor<S>& y, const std::vector<S>& inv_std, const Tensor<S>& dy, int cols) {
  auto Y = as_matrix(y, cols);
  auto dY = as_matrix(dy, cols);
  Tensor<S> dx(y.shape());
  auto dX = as_matrix(dx, cols);
  for (Eigen::Index r = 0; r < Y.rows(); ++r) {
    const S mdy = dY.row(r).mean();
    const S mdyx = dY.row(r).dot(Y.row(r)) / static_cast<S>(cols);
    dX.row(r) = inv_std[r] * (dY.row(r).array() - mdy - Y.row(r).array() * mdyx);
  }
  return dx;
}

/// In-place ReLU; returns the rectified tensor.
template <typename S>
void relu_inplace(Tensor<S>& t) {
  for (auto& v : t.storage()) v = relu(v);
}

/// Zeroes gradient entries where the forward output was clipped.
template <typename S>
void relu_backward_inplace(const Tensor<S>& out, Tensor<S>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(out[i] > S(0))) grad[i] = S(0);
}

/// 3x3x3 convolution over (T, H, W, C) with zero padding 1, temporal stride 1
/// and spatial stride `stride`. Implemented as im2col followed by one GEMM.
template <typename S>
struct Conv3d {
  static constexpr int kTaps = 27;

  Param<S> weight;  // (27 * cin, cout); no bias, a normalisation always follows
  int cin = 0;
  int cout = 0;
  int stride = 1;

  Conv3d() = default;
  Conv3d(int in_ch, int out_ch, int stride_hw)
      : weight({kTaps * in_ch, out_ch}), cin(in_ch), cout(out_ch), stride(stride_hw) {}

  static int out_extent(int n, int stride) { return (n - 1) / stride + 1; }

  void init(Rng& rng) {
    init_relu_fan_in(weight.value, kTaps * cin, rng);
  }

  Tensor<S> im2col(const Tensor<S>& x) const {
    const int T = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int Ho = out_extent(H, stride), Wo = out_extent(W, stride);
    Tensor<S> col({T * Ho * Wo, kTaps * cin});
    S* dst = col.data();
    for (int t = 0; t < T; ++t)
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo)
          for (int kt = 0; kt < 3; ++kt)
            for (int kh = 0; kh < 3; ++kh)
              for (int kw = 0; kw < 3; ++kw, dst += cin) {
                const int ti = t + kt - 1, hi = ho * stride + kh - 1, wi = wo * stride + kw - 1;
                if (ti < 0 || ti >= T || hi < 0 || hi >= H || wi < 0 || wi >= W) {
                  std::fill(dst, dst + cin, S(0));
                } else {
                  const S* src = x.data() + ((static_cast<std::size_t>(ti) * H + hi) * W + wi) * cin;
                  std::copy(src, src + cin, dst);
                }
              }
    return col;
  }

  void col2im(const Tensor<S>& dcol, Tensor<S>& dx) const {
    const int T = dx.dim(0), H = dx.dim(1), W = dx.dim(2);
    const int Ho = out_extent(H, stride), Wo = out_extent(W, stride);
    const S* src = dcol.data();
    for (int t = 0; t < T; ++t)
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo)
          for (int kt = 0; kt < 3; ++kt)
            for (int kh = 0; kh < 3; ++kh)
              for (int kw = 0; kw < 3; ++kw, src += cin) {
                const int ti = t + kt - 1, hi = ho * stride + kh - 1, wi = wo * stride + kw - 1;
                if (ti < 0 || ti >= T || hi < 0 || hi >= H || wi < 0 || wi >= W) continue;
                S* d = dx.data() + ((static_cast<std::size_t>(ti) * H + hi) * W + wi) * cin;
                for (int c = 0; c < cin; ++c) d[c] += src[c];
              }
  }

  /// Returns the pre-activation output (T, Ho, Wo, cout); `col` receives the patch matrix.
  Tensor<S> forward(const Tensor<S>& x, Tensor<S>& col) const {
    if (x.rank() != 4 || x.dim(3) != cin)
      throw Error("conv3d: expected (T, H, W, " + std::to_string(cin) + "), got " + shape_str(x.shape()));
    col = im2col(x);
    const int Ho = out_extent(x.dim(1), stride), Wo = out_extent(x.dim(2), stride);
    Tensor<S> y({x.dim(0), Ho, Wo, cout});
    auto Y = as_matrix(y, cout);
    Y.noalias() = as_matrix(col, kTaps * cin) * as_matrix(weight.value, cout);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& col, const Shape& in_shape, const Tensor<S>& dy, bool need_input_grad) {
    auto dY = as_matrix(dy, cout);
    auto C = as_matrix(col, kTaps * cin);
    as_matrix(weight.grad, cout).noalias() += C.transpose() * dY;
    if (!need_input_grad) return {};
    Tensor<S> dcol(col.shape());
    as_matrix(dcol, kTaps * cin).noalias() = dY * as_matrix(weight.value, cout).transpose();
    Tensor<S> dx(in_shape);
    col2im(dcol, dx);
    return dx;
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& f) {
    f(prefix + ".weight", weight);
  }
};

}  // namespace thorn
