#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "spdconv/autodiff.hpp"
#include "spdconv/tensor.hpp"

namespace spdconv {

template <typename Scalar>
using MatrixRM =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Parameters of a 2-d convolution (cross-correlation convention, no kernel
/// flip). stride = 1 is the non-strided case; weight is (c_out, c_in, kh, kw),
/// bias is per-output-channel, stored (1, c_out, 1, 1).
template <typename Scalar>
struct ConvParams {
  Tensor<Scalar> weight;
  std::optional<Tensor<Scalar>> bias;
  int stride = 1;
  int padding = 0;
};

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

/// Gathers the padded receptive fields of one sample into a (c_in*kh*kw) x
/// (oh*ow) patch matrix, so the convolution becomes one GEMM per sample.
template <typename Scalar>
void im2col(const Tensor<Scalar>& x, int n, int kh, int kw, int stride,
            int pad, int oh, int ow, Scalar* col) {
  const auto& s = x.shape();
  const Scalar* src = x.data() + x.index(n, 0, 0, 0);
  std::size_t row = 0;
  for (int ci = 0; ci < s.c; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj, ++row) {
        Scalar* dst = col + row * (static_cast<std::size_t>(oh) * ow);
        for (int oi = 0; oi < oh; ++oi) {
          int ii = oi * stride + ki - pad;
          for (int oj = 0; oj < ow; ++oj) {
            int jj = oj * stride + kj - pad;
            bool inside = ii >= 0 && ii < s.h && jj >= 0 && jj < s.w;
            dst[oi * ow + oj] =
                inside ? src[(static_cast<std::size_t>(ci) * s.h + ii) * s.w + jj]
                       : Scalar(0);
          }
        }
      }
    }
  }
}

/// Scatter-add of a patch-matrix gradient back onto the input gradient.
template <typename Scalar>
void col2im_add(const Scalar* col, int c_in, int kh, int kw, int stride,
                int pad, int oh, int ow, int ih, int iw, Scalar* dx) {
  std::size_t row = 0;
  for (int ci = 0; ci < c_in; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj, ++row) {
        const Scalar* src = col + row * (static_cast<std::size_t>(oh) * ow);
        for (int oi = 0; oi < oh; ++oi) {
          int ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= ih) continue;
          for (int oj = 0; oj < ow; ++oj) {
            int jj = oj * stride + kj - pad;
            if (jj < 0 || jj >= iw) continue;
            dx[(static_cast<std::size_t>(ci) * ih + ii) * iw + jj] +=
                src[oi * ow + oj];
          }
        }
      }
    }
  }
}

template <typename Scalar>
bool any_requires_grad(const ConvParams<Scalar>& p, const Tensor<Scalar>& x) {
  return x.requires_grad() || p.weight.requires_grad() ||
         (p.bias && p.bias->requires_grad());
}

}  // namespace detail

/// 2-d convolution, production path: im2col + one Eigen GEMM per sample.
/// Must agree with the naive six-loop reference to 1e-6 relative.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const ConvParams<Scalar>& p,
                      Tape<Scalar>* tape = nullptr) {
  const auto& xs = x.shape();
  const auto& ws = p.weight.shape();
  const int c_out = ws.n, c_in = ws.c, kh = ws.h, kw = ws.w;
  if (p.stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (p.padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  if (xs.c != c_in) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(xs.c) +
                                " channels but weight expects " +
                                std::to_string(c_in));
  }
  if (xs.h + 2 * p.padding < kh || xs.w + 2 * p.padding < kw) {
    throw std::invalid_argument(
        "conv2d: padded input " + std::to_string(xs.h + 2 * p.padding) + "x" +
        std::to_string(xs.w + 2 * p.padding) + " smaller than kernel " +
        std::to_string(kh) + "x" + std::to_string(kw));
  }
  if (p.bias && p.bias->numel() != static_cast<std::size_t>(c_out)) {
    throw std::invalid_argument("conv2d: bias length " +
                                std::to_string(p.bias->numel()) +
                                " does not match c_out " +
                                std::to_string(c_out));
  }
  const int oh = conv_out_dim(xs.h, kh, p.stride, p.padding);
  const int ow = conv_out_dim(xs.w, kw, p.stride, p.padding);
  Tensor<Scalar> out(TensorShape{xs.n, c_out, oh, ow});

  const std::size_t patch = static_cast<std::size_t>(c_in) * kh * kw;
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  auto col_cache = std::make_shared<std::vector<Scalar>>(xs.n * patch * cols);

  Eigen::Map<const MatrixRM<Scalar>> wmat(p.weight.data(), c_out, patch);
  for (int n = 0; n < xs.n; ++n) {
    Scalar* col = col_cache->data() + n * patch * cols;
    detail::im2col(x, n, kh, kw, p.stride, p.padding, oh, ow, col);
    Eigen::Map<const MatrixRM<Scalar>> cmat(col, patch, cols);
    Eigen::Map<MatrixRM<Scalar>> omat(out.data() + out.index(n, 0, 0, 0),
                                      c_out, cols);
    omat.noalias() = wmat * cmat;
  }
  if (p.bias) {
    const Scalar* b = p.bias->data();
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < c_out; ++c) {
        Scalar* o = out.data() + out.index(n, c, 0, 0);
        for (std::size_t i = 0; i < cols; ++i) o[i] += b[c];
      }
  }

  if (tape && detail::any_requires_grad(p, x)) {
    out.set_requires_grad(true);
    Tensor<Scalar> xc = x;
    ConvParams<Scalar> pc = p;
    Tensor<Scalar> oc = out;
    tape->record("conv2d", [xc, pc, oc, col_cache, oh, ow]() mutable {
      const auto& xs = xc.shape();
      const auto& ws = pc.weight.shape();
      const int c_out = ws.n, c_in = ws.c, kh = ws.h, kw = ws.w;
      const std::size_t patch = static_cast<std::size_t>(c_in) * kh * kw;
      const std::size_t cols = static_cast<std::size_t>(oh) * ow;
      Eigen::Map<const MatrixRM<Scalar>> wmat(pc.weight.data(), c_out, patch);
      std::vector<Scalar> dcol(patch * cols);
      for (int n = 0; n < xs.n; ++n) {
        Eigen::Map<const MatrixRM<Scalar>> dymat(
            oc.grad().data() + oc.index(n, 0, 0, 0), c_out, cols);
        const Scalar* col = col_cache->data() + n * patch * cols;
        Eigen::Map<const MatrixRM<Scalar>> cmat(col, patch, cols);
        if (pc.weight.requires_grad()) {
          Eigen::Map<MatrixRM<Scalar>> dwmat(pc.weight.grad().data(), c_out,
                                             patch);
          dwmat.noalias() += dymat * cmat.transpose();
        }
        if (xc.requires_grad()) {
          Eigen::Map<MatrixRM<Scalar>> dcmat(dcol.data(), patch, cols);
          dcmat.noalias() = wmat.transpose() * dymat;
          detail::col2im_add(dcol.data(), c_in, kh, kw, pc.stride, pc.padding,
                             oh, ow, xs.h, xs.w,
                             xc.grad().data() + xc.index(n, 0, 0, 0));
        }
        if (pc.bias && pc.bias->requires_grad()) {
          auto& db = pc.bias->grad();
          for (int c = 0; c < c_out; ++c) db[c] += dymat.row(c).sum();
        }
      }
    });
  }
  return out;
}

/// Max pooling with window k and the given stride; no padding, so the output
/// follows the conv shape formula with padding 0. Ties go to the first
/// element in scan order, which also receives the gradient.
template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& x, int k, int stride,
                          Tape<Scalar>* tape = nullptr) {
  const auto& s = x.shape();
  if (k < 1 || stride < 1) {
    throw std::invalid_argument("max_pool2d: window and stride must be >= 1");
  }
  if (s.h < k || s.w < k) {
    throw std::invalid_argument("max_pool2d: window " + std::to_string(k) +
                                " larger than input " + std::to_string(s.h) +
                                "x" + std::to_string(s.w));
  }
  const int oh = conv_out_dim(s.h, k, stride, 0);
  const int ow = conv_out_dim(s.w, k, stride, 0);
  Tensor<Scalar> out(TensorShape{s.n, s.c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());

  std::size_t oidx = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int oi = 0; oi < oh; ++oi)
        for (int oj = 0; oj < ow; ++oj, ++oidx) {
          std::size_t best_idx = x.index(n, c, oi * stride, oj * stride);
          Scalar best = x.values()[best_idx];
          for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
              std::size_t idx =
                  x.index(n, c, oi * stride + ki, oj * stride + kj);
              if (x.values()[idx] > best) {
                best = x.values()[idx];
                best_idx = idx;
              }
            }
          out.values()[oidx] = best;
          (*argmax)[oidx] = best_idx;
        }

  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<Scalar> xc = x;
    Tensor<Scalar> oc = out;
    tape->record("max_pool2d", [xc, oc, argmax]() mutable {
      for (std::size_t i = 0; i < oc.numel(); ++i) {
        xc.grad()[(*argmax)[i]] += oc.grad()[i];
      }
    });
  }
  return out;
}

/// Per-channel affine batch normalization state. gamma/beta are learnable;
/// running statistics are buffers updated only in training mode, with
/// running <- (1 - momentum) * running + momentum * batch_stat.
template <typename Scalar>
struct BatchNormState {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;
  Scalar epsilon = Scalar(1e-5);
  Scalar momentum = Scalar(0.1);

  static BatchNormState make(int channels, Scalar epsilon = Scalar(1e-5),
                             Scalar momentum = Scalar(0.1)) {
    TensorShape s{1, channels, 1, 1};
    BatchNormState st{Tensor<Scalar>::ones(s), Tensor<Scalar>::zeros(s),
                      Tensor<Scalar>::zeros(s), Tensor<Scalar>::ones(s),
                      epsilon, momentum};
    return st;
  }
  int channels() const { return gamma.shape().c; }
};

template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& x, BatchNormState<Scalar>& st,
                          bool training, Tape<Scalar>* tape = nullptr) {
  const auto& s = x.shape();
  if (st.channels() != s.c) {
    throw std::invalid_argument("batch_norm: state has " +
                                std::to_string(st.channels()) +
                                " channels, input has " + std::to_string(s.c));
  }
  const std::size_t m = static_cast<std::size_t>(s.n) * s.h * s.w;
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;

  std::vector<Scalar> mean(s.c, Scalar(0)), invstd(s.c, Scalar(0));
  if (training) {
    std::vector<Scalar> var(s.c, Scalar(0));
    for (int c = 0; c < s.c; ++c) {
      Scalar sum = 0;
      for (int n = 0; n < s.n; ++n) {
        const Scalar* p = x.data() + x.index(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean[c] = sum / static_cast<Scalar>(m);
      Scalar sq = 0;
      for (int n = 0; n < s.n; ++n) {
        const Scalar* p = x.data() + x.index(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) {
          Scalar d = p[i] - mean[c];
          sq += d * d;
        }
      }
      var[c] = sq / static_cast<Scalar>(m);
      invstd[c] = Scalar(1) / std::sqrt(var[c] + st.epsilon);
      st.running_mean.values()[c] =
          (Scalar(1) - st.momentum) * st.running_mean.values()[c] +
          st.momentum * mean[c];
      st.running_var.values()[c] =
          (Scalar(1) - st.momentum) * st.running_var.values()[c] +
          st.momentum * var[c];
    }
  } else {
    for (int c = 0; c < s.c; ++c) {
      mean[c] = st.running_mean.values()[c];
      invstd[c] = Scalar(1) / std::sqrt(st.running_var.values()[c] + st.epsilon);
    }
  }

  Tensor<Scalar> out(s);
  auto xhat = std::make_shared<std::vector<Scalar>>(x.numel());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const Scalar* p = x.data() + x.index(n, c, 0, 0);
      Scalar* o = out.data() + out.index(n, c, 0, 0);
      Scalar* xh = xhat->data() + x.index(n, c, 0, 0);
      const Scalar g = st.gamma.values()[c], b = st.beta.values()[c];
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - mean[c]) * invstd[c];
        o[i] = g * xh[i] + b;
      }
    }

  bool needs_grad = x.requires_grad() || st.gamma.requires_grad() ||
                    st.beta.requires_grad();
  if (tape && needs_grad) {
    out.set_requires_grad(true);
    Tensor<Scalar> xc = x;
    Tensor<Scalar> oc = out;
    Tensor<Scalar> gamma = st.gamma, beta = st.beta;
    auto inv = std::make_shared<std::vector<Scalar>>(invstd);
    tape->record("batch_norm", [xc, oc, gamma, beta, xhat, inv,
                                training]() mutable {
      const auto& s = xc.shape();
      const std::size_t m = static_cast<std::size_t>(s.n) * s.h * s.w;
      const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
      for (int c = 0; c < s.c; ++c) {
        Scalar sum_dy = 0, sum_dy_xhat = 0;
        for (int n = 0; n < s.n; ++n) {
          const Scalar* dy = oc.grad().data() + oc.index(n, c, 0, 0);
          const Scalar* xh = xhat->data() + xc.index(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) {
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * xh[i];
          }
        }
        if (gamma.requires_grad()) gamma.grad()[c] += sum_dy_xhat;
        if (beta.requires_grad()) beta.grad()[c] += sum_dy;
        if (!xc.requires_grad()) continue;
        const Scalar g = gamma.values()[c];
        const Scalar is = (*inv)[c];
        for (int n = 0; n < s.n; ++n) {
          const Scalar* dy = oc.grad().data() + oc.index(n, c, 0, 0);
          const Scalar* xh = xhat->data() + xc.index(n, c, 0, 0);
          Scalar* dx = xc.grad().data() + xc.index(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) {
            if (training) {
              // dx = gamma*invstd*(dy - mean(dy) - xhat*mean(dy*xhat))
              dx[i] += g * is *
                       (dy[i] - sum_dy / static_cast<Scalar>(m) -
                        xh[i] * sum_dy_xhat / static_cast<Scalar>(m));
            } else {
              dx[i] += g * is * dy[i];
            }
          }
        }
      }
    });
  }
  return out;
}

enum class Activation { relu, silu };

template <typename Scalar>
Tensor<Scalar> activation(const Tensor<Scalar>& x, Activation kind,
                          Tape<Scalar>* tape = nullptr) {
  Tensor<Scalar> out(x.shape());
  const std::size_t n = x.numel();
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < n; ++i)
      out.values()[i] = x.values()[i] > Scalar(0) ? x.values()[i] : Scalar(0);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      Scalar v = x.values()[i];
      out.values()[i] = v / (Scalar(1) + std::exp(-v));
    }
  }
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<Scalar> xc = x;
    Tensor<Scalar> oc = out;
    tape->record("activation", [xc, oc, kind]() mutable {
      const std::size_t n = xc.numel();
      for (std::size_t i = 0; i < n; ++i) {
        Scalar v = xc.values()[i];
        Scalar d;
        if (kind == Activation::relu) {
          d = v > Scalar(0) ? Scalar(1) : Scalar(0);
        } else {
          Scalar sig = Scalar(1) / (Scalar(1) + std::exp(-v));
          d = sig * (Scalar(1) + v * (Scalar(1) - sig));
        }
        xc.grad()[i] += d * oc.grad()[i];
      }
    });
  }
  return out;
}

/// Fully connected layer on the flattened (n, c*h*w) view of the input.
/// weight is (out_features, in_features), bias (1, out_features, 1, 1).
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>* bias,
                      Tape<Scalar>* tape = nullptr) {
  const auto& xs = x.shape();
  const int features = xs.c * xs.h * xs.w;
  const int out_features = weight.shape().n;
  const int in_features = weight.shape().c * weight.shape().h * weight.shape().w;
  if (in_features != features) {
    throw std::invalid_argument("linear: input has " + std::to_string(features) +
                                " features but weight expects " +
                                std::to_string(in_features));
  }
  if (bias && bias->numel() != static_cast<std::size_t>(out_features)) {
    throw std::invalid_argument("linear: bias length mismatch");
  }
  Tensor<Scalar> out(TensorShape{xs.n, out_features, 1, 1});
  Eigen::Map<const MatrixRM<Scalar>> xm(x.data(), xs.n, features);
  Eigen::Map<const MatrixRM<Scalar>> wm(weight.data(), out_features, features);
  Eigen::Map<MatrixRM<Scalar>> om(out.data(), xs.n, out_features);
  om.noalias() = xm * wm.transpose();
  if (bias) {
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < out_features; ++c)
        out.values()[n * out_features + c] += bias->values()[c];
  }

  bool needs = x.requires_grad() || weight.requires_grad() ||
               (bias && bias->requires_grad());
  if (tape && needs) {
    out.set_requires_grad(true);
    Tensor<Scalar> xc = x, wc = weight, oc = out;
    std::optional<Tensor<Scalar>> bc;
    if (bias) bc = *bias;
    tape->record("linear", [xc, wc, bc, oc, features, out_features]() mutable {
      const int n = xc.shape().n;
      Eigen::Map<const MatrixRM<Scalar>> dym(oc.grad().data(), n, out_features);
      if (wc.requires_grad()) {
        Eigen::Map<const MatrixRM<Scalar>> xm(xc.data(), n, features);
        Eigen::Map<MatrixRM<Scalar>> dwm(wc.grad().data(), out_features,
                                         features);
        dwm.noalias() += dym.transpose() * xm;
      }
      if (xc.requires_grad()) {
        Eigen::Map<const MatrixRM<Scalar>> wm(wc.data(), out_features,
                                              features);
        Eigen::Map<MatrixRM<Scalar>> dxm(xc.grad().data(), n, features);
        dxm.noalias() += dym * wm;
      }
      if (bc && bc->requires_grad()) {
        for (int i = 0; i < n; ++i)
          for (int c = 0; c < out_features; ++c)
            bc->grad()[c] += oc.grad()[i * out_features + c];
      }
    });
  }
  return out;
}

/// Spatial mean per channel; output shape (n, c, 1, 1).
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x,
                               Tape<Scalar>* tape = nullptr) {
  const auto& s = x.shape();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  Tensor<Scalar> out(TensorShape{s.n, s.c, 1, 1});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const Scalar* p = x.data() + x.index(n, c, 0, 0);
      Scalar sum = 0;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      out.at(n, c, 0, 0) = sum / static_cast<Scalar>(plane);
    }
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<Scalar> xc = x, oc = out;
    tape->record("global_avg_pool", [xc, oc]() mutable {
      const auto& s = xc.shape();
      const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          Scalar g = oc.grad()[oc.index(n, c, 0, 0)] /
                     static_cast<Scalar>(plane);
          Scalar* dx = xc.grad().data() + xc.index(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) dx[i] += g;
        }
    });
  }
  return out;
}

/// Row-wise softmax over the channel dimension of an (n, c, 1, 1) tensor,
/// stabilized by max subtraction.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Tape<Scalar>* tape = nullptr) {
  const auto& s = x.shape();
  if (s.h != 1 || s.w != 1) {
    throw std::invalid_argument("softmax expects (n, c, 1, 1), got " + s.str());
  }
  Tensor<Scalar> out(s);
  for (int n = 0; n < s.n; ++n) {
    const Scalar* p = x.data() + x.index(n, 0, 0, 0);
    Scalar* o = out.data() + out.index(n, 0, 0, 0);
    Scalar mx = p[0];
    for (int c = 1; c < s.c; ++c) mx = std::max(mx, p[c]);
    Scalar sum = 0;
    for (int c = 0; c < s.c; ++c) {
      o[c] = std::exp(p[c] - mx);
      sum += o[c];
    }
    for (int c = 0; c < s.c; ++c) o[c] /= sum;
  }
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<Scalar> xc = x, oc = out;
    tape->record("softmax", [xc, oc]() mutable {
      const auto& s = xc.shape();
      for (int n = 0; n < s.n; ++n) {
        const Scalar* sm = oc.data() + oc.index(n, 0, 0, 0);
        const Scalar* dy = oc.grad().data() + oc.index(n, 0, 0, 0);
        Scalar* dx = xc.grad().data() + xc.index(n, 0, 0, 0);
        Scalar dot = 0;
        for (int c = 0; c < s.c; ++c) dot += dy[c] * sm[c];
        for (int c = 0; c < s.c; ++c) dx[c] += sm[c] * (dy[c] - dot);
      }
    });
  }
  return out;
}

/// Elementwise sum of two same-shape tensors (residual connections).
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                   Tape<Scalar>* tape = nullptr) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument("add: shape mismatch " + a.shape().str() +
                                " vs " + b.shape().str());
  }
  Tensor<Scalar> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.values()[i] = a.values()[i] + b.values()[i];
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    Tensor<Scalar> ac = a, bc = b, oc = out;
    tape->record("add", [ac, bc, oc]() mutable {
      for (std::size_t i = 0; i < oc.numel(); ++i) {
        if (ac.requires_grad()) ac.grad()[i] += oc.grad()[i];
        if (bc.requires_grad()) bc.grad()[i] += oc.grad()[i];
      }
    });
  }
  return out;
}

/// Channel concatenation; spatial dims and batch must agree.
template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts,
                      Tape<Scalar>* tape = nullptr) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const auto& s0 = parts.front().shape();
  int total_c = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw std::invalid_argument("concat: incompatible shapes " + s0.str() +
                                  " vs " + s.str());
    }
    total_c += s.c;
  }
  Tensor<Scalar> out(TensorShape{s0.n, total_c, s0.h, s0.w});
  const std::size_t plane = static_cast<std::size_t>(s0.h) * s0.w;
  for (int n = 0; n < s0.n; ++n) {
    int co = 0;
    for (const auto& p : parts) {
      for (int c = 0; c < p.shape().c; ++c, ++co) {
        const Scalar* src = p.data() + p.index(n, c, 0, 0);
        Scalar* dst = out.data() + out.index(n, co, 0, 0);
        std::copy(src, src + plane, dst);
      }
    }
  }
  bool needs = false;
  for (const auto& p : parts) needs = needs || p.requires_grad();
  if (tape && needs) {
    out.set_requires_grad(true);
    std::vector<Tensor<Scalar>> pc = parts;
    Tensor<Scalar> oc = out;
    tape->record("concat", [pc, oc]() mutable {
      const auto& s0 = pc.front().shape();
      const std::size_t plane = static_cast<std::size_t>(s0.h) * s0.w;
      for (int n = 0; n < s0.n; ++n) {
        int co = 0;
        for (auto& p : pc) {
          for (int c = 0; c < p.shape().c; ++c, ++co) {
            if (!p.requires_grad()) continue;
            const Scalar* g = oc.grad().data() + oc.index(n, co, 0, 0);
            Scalar* dst = p.grad().data() + p.index(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) dst[i] += g[i];
          }
        }
      }
    });
  }
  return out;
}

/// Inner product with a fixed coefficient tensor, as a scalar (1,1,1,1)
/// tensor. Test scaffolding for building scalar losses out of any op.
template <typename Scalar>
Tensor<Scalar> weighted_sum(const Tensor<Scalar>& x,
                            const Tensor<Scalar>& coeffs,
                            Tape<Scalar>* tape = nullptr) {
  if (!(x.shape() == coeffs.shape())) {
    throw std::invalid_argument("weighted_sum: shape mismatch");
  }
  Tensor<Scalar> out(TensorShape{1, 1, 1, 1});
  Scalar sum = 0;
  for (std::size_t i = 0; i < x.numel(); ++i)
    sum += x.values()[i] * coeffs.values()[i];
  out.values()[0] = sum;
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<Scalar> xc = x, cc = coeffs, oc = out;
    tape->record("weighted_sum", [xc, cc, oc]() mutable {
      Scalar g = oc.grad()[0];
      for (std::size_t i = 0; i < xc.numel(); ++i)
        xc.grad()[i] += g * cc.values()[i];
    });
  }
  return out;
}

}  // namespace spdconv
