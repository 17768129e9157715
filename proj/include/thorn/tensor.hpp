#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <new>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace thorn {

/// Raised for malformed inputs, shape mismatches and violated preconditions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for invalid configuration (the CLI maps this to exit status 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ')';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

/// Allocates on 64-byte boundaries. Eigen picks its vectorised code path by
/// pointer alignment, so a fixed alignment keeps float results reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename S>
using Buffer = std::vector<S, AlignedAllocator<S>>;

/// Dense row-major tensor with owned storage.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;
  explicit Tensor(Shape shape, S fill = S(0)) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, Buffer<S> data) : shape_(std::move(shape)), data_(std::move(data)) { check_size(); }
  Tensor(Shape shape, const std::vector<S>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_size();
  }

  const Shape& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::span<S> values() { return data_; }
  std::span<const S> values() const { return data_; }
  Buffer<S>& storage() { return data_; }
  const Buffer<S>& storage() const { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  S& at(int i, int j) { return data_[idx(i, j)]; }
  const S& at(int i, int j) const { return data_[idx(i, j)]; }
  S& at(int i, int j, int k) { return data_[idx(i, j, k)]; }
  const S& at(int i, int j, int k) const { return data_[idx(i, j, k)]; }
  S& at(int i, int j, int k, int l) { return data_[idx(i, j, k, l)]; }
  const S& at(int i, int j, int k, int l) const { return data_[idx(i, j, k, l)]; }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(S(0)); }

  /// Same storage viewed under a different shape with equal element count.
  Tensor reshaped(Shape s) const& {
    if (shape_numel(s) != data_.size())
      throw Error("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }
  Tensor reshaped(Shape s) && {
    if (shape_numel(s) != data_.size())
      throw Error("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), std::move(data_));
  }

  template <typename T>
  Tensor<T> cast() const {
    Buffer<T> out(data_.begin(), data_.end());
    return Tensor<T>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](S v) { return std::isfinite(static_cast<double>(v)); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  void check_size() const {
    if (data_.size() != shape_numel(shape_))
      throw Error("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                  shape_str(shape_));
  }
  std::size_t idx(int i, int j) const { return static_cast<std::size_t>(i) * shape_[1] + j; }
  std::size_t idx(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t idx(int i, int j, int k, int l) const {
    return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }

  Shape shape_;
  Buffer<S> data_;
};

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMatrix<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMatrix<S>>;
template <typename S>
using VecMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

template <typename S>
MatMap<S> as_matrix(S* p, Eigen::Index rows, Eigen::Index cols) {
  return MatMap<S>(p, rows, cols);
}
template <typename S>
ConstMatMap<S> as_matrix(const S* p, Eigen::Index rows, Eigen::Index cols) {
  return ConstMatMap<S>(p, rows, cols);
}

/// Tensor viewed as a matrix with the leading axes collapsed into rows.
template <typename S>
MatMap<S> as_matrix(Tensor<S>& t, Eigen::Index cols) {
  return MatMap<S>(t.data(), static_cast<Eigen::Index>(t.size()) / cols, cols);
}
template <typename S>
ConstMatMap<S> as_matrix(const Tensor<S>& t, Eigen::Index cols) {
  return ConstMatMap<S>(t.data(), static_cast<Eigen::Index>(t.size()) / cols, cols);
}

inline void require_shape(const Shape& got, const Shape& want, const std::string& what) {
  if (got != want) throw Error(what + ": expected shape " + shape_str(want) + ", got " + shape_str(got));
}

/// Learnable tensor plus its accumulated gradient.
template <typename S>
struct Param {
  Tensor<S> value;
  Tensor<S> grad;

  Param() = default;
  explicit Param(Shape shape) : value(shape), grad(shape) {}

  const Shape& shape() const { return value.shape(); }
  std::size_t size() const { return value.size(); }
  void zero_grad() { grad.set_zero(); }
};

using Rng = std::mt19937_64;

/// Independent stream derived from a base seed and a stream index.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x7468u};
  return Rng(seq);
}

/// Uniform in [0, 1) from the top 53 bits; identical across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Box-Muller normal; stateless so streams stay reproducible.
inline double normal(Rng& rng) {
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline int uniform_int(Rng& rng, int lo, int hi_inclusive) {
  const auto span = static_cast<std::uint64_t>(hi_inclusive - lo + 1);
  return lo + static_cast<int>(rng() % span);
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

/// Fills with U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename S>
void init_fan_in(Tensor<S>& t, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  for (auto& v : t.storage()) v = static_cast<S>(uniform(rng, -bound, bound));
}

/// U(-sqrt(6/fan_in), sqrt(6/fan_in)): variance 2/fan_in keeps activation
/// scale roughly constant through ReLU layers.
template <typename S>
void init_relu_fan_in(Tensor<S>& t, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max(fan_in, 1)));
  for (auto& v : t.storage()) v = static_cast<S>(uniform(rng, -bound, bound));
}

template <typename S>
S relu(S x) {
  return x > S(0) ? x : S(0);
}

/// Name/parameter visitor used for checkpoints and optimizers.
template <typename S>
using ParamVisitor = std::function<void(const std::string&, Param<S>&)>;
template <typename S>
using ConstParamVisitor = std::function<void(const std::string&, const Param<S>&)>;

}  // namespace thorn
