#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace spdconv {

/// Shape of a rank-4 tensor in (batch, channels, rows, cols) order.
/// All data in this project lives in this one canonical row-major layout.
struct TensorShape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const TensorShape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

/// Dense rank-4 tensor with an optional same-shape gradient buffer.
///
/// Copies are shallow: they alias the same value and gradient storage, which
/// is what lets backward closures on a Tape accumulate into the gradients of
/// the tensors the caller still holds. Use clone() for a deep copy.
template <typename Scalar>
class Tensor {
 public:
  Tensor() : Tensor(TensorShape{1, 1, 1, 1}) {}

  explicit Tensor(TensorShape shape, Scalar fill = Scalar(0)) : shape_(shape) {
    if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
      throw std::invalid_argument("tensor dimensions must be >= 1, got " +
                                  shape.str());
    }
    data_ = std::make_shared<std::vector<Scalar>>(shape.numel(), fill);
  }

  static Tensor zeros(TensorShape shape) { return Tensor(shape, Scalar(0)); }
  static Tensor ones(TensorShape shape) { return Tensor(shape, Scalar(1)); }

  static Tensor from_values(TensorShape shape, std::vector<Scalar> values) {
    Tensor t(shape);
    if (values.size() != shape.numel()) {
      throw std::invalid_argument(
          "value count " + std::to_string(values.size()) +
          " does not match shape " + shape.str());
    }
    *t.data_ = std::move(values);
    return t;
  }

  const TensorShape& shape() const { return shape_; }
  std::size_t numel() const { return shape_.numel(); }

  std::vector<Scalar>& values() { return *data_; }
  const std::vector<Scalar>& values() const { return *data_; }
  Scalar* data() { return data_->data(); }
  const Scalar* data() const { return data_->data(); }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w + w;
  }
  Scalar& at(int n, int c, int h, int w) { return (*data_)[index(n, c, h, w)]; }
  Scalar at(int n, int c, int h, int w) const {
    return (*data_)[index(n, c, h, w)];
  }

  bool requires_grad() const { return grad_ != nullptr; }

  /// Enabling allocates a zeroed gradient buffer; disabling drops it.
  void set_requires_grad(bool enabled) {
    if (enabled && !grad_) {
      grad_ = std::make_shared<std::vector<Scalar>>(numel(), Scalar(0));
    } else if (!enabled) {
      grad_.reset();
    }
  }

  std::vector<Scalar>& grad() {
    ensure_grad_present();
    return *grad_;
  }
  const std::vector<Scalar>& grad() const {
    ensure_grad_present();
    return *grad_;
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), Scalar(0));
  }

  /// Deep copy of values; gradient state is not carried over.
  Tensor clone() const {
    Tensor t(shape_);
    *t.data_ = *data_;
    return t;
  }

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

 private:
  void ensure_grad_present() const {
    if (!grad_) {
      throw std::logic_error("tensor has no gradient buffer (requires_grad is off)");
    }
  }

  TensorShape shape_;
  std::shared_ptr<std::vector<Scalar>> data_;
  std::shared_ptr<std::vector<Scalar>> grad_;
};

/// PCG32: tiny, portable, and identical on every platform, unlike the
/// standard library distributions. All randomness in the project flows
/// through this so that fixed seeds mean bit-identical runs.
class Pcg32 {
 public:
  explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    std::uint32_t xorshifted =
        static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  /// Uniform in [0, 1) with 32 bits of resolution.
  double uniform() { return next_u32() * 0x1p-32; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound) via rejection sampling (unbiased).
  std::uint32_t bounded(std::uint32_t bound) {
    std::uint32_t threshold = (-bound) % bound;
    for (;;) {
      std::uint32_t r = next_u32();
      if (r >= threshold) return r % bound;
    }
  }

  /// Box-Muller; consumes two uniforms per call, no cached spare.
  double normal() {
    double u1 = uniform();
    while (u1 <= 1e-12) u1 = uniform();
    double u2 = uniform();
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
};

template <typename Scalar>
void fill_uniform(Tensor<Scalar>& t, Pcg32& rng, double lo, double hi) {
  for (auto& v : t.values()) v = static_cast<Scalar>(rng.uniform(lo, hi));
}

/// Kaiming-uniform fan-in init: U(-b, b) with b = sqrt(6 / fan_in).
template <typename Scalar>
void fill_kaiming_uniform(Tensor<Scalar>& t, Pcg32& rng, int fan_in) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  fill_uniform(t, rng, -bound, bound);
}

}  // namespace spdconv
