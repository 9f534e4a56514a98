#pragma once

// Independent reference implementations used as test oracles. Deliberately
// written as plain nested loops with no Eigen and no shared code with the
// library paths they check.

#include <vector>

#include "spdconv/tensor.hpp"

namespace oracle {

using spdconv::Tensor;
using spdconv::TensorShape;

/// Direct convolution, six nested loops, cross-correlation convention.
template <typename S>
Tensor<S> naive_conv2d(const Tensor<S>& x, const Tensor<S>& w,
                       const std::vector<S>* bias, int stride, int pad) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const int oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  Tensor<S> out(TensorShape{xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int co = 0; co < ws.n; ++co)
      for (int oi = 0; oi < oh; ++oi)
        for (int oj = 0; oj < ow; ++oj) {
          S acc = bias ? (*bias)[co] : S(0);
          for (int ci = 0; ci < xs.c; ++ci)
            for (int ki = 0; ki < ws.h; ++ki)
              for (int kj = 0; kj < ws.w; ++kj) {
                int ii = oi * stride + ki - pad;
                int jj = oj * stride + kj - pad;
                if (ii < 0 || ii >= xs.h || jj < 0 || jj >= xs.w) continue;
                acc += x.at(n, ci, ii, jj) * w.at(co, ci, ki, kj);
              }
          out.at(n, co, oi, oj) = acc;
        }
  return out;
}

/// Brute-force window max.
template <typename S>
Tensor<S> naive_max_pool2d(const Tensor<S>& x, int k, int stride) {
  const auto& s = x.shape();
  const int oh = (s.h - k) / stride + 1;
  const int ow = (s.w - k) / stride + 1;
  Tensor<S> out(TensorShape{s.n, s.c, oh, ow});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int oi = 0; oi < oh; ++oi)
        for (int oj = 0; oj < ow; ++oj) {
          S best = x.at(n, c, oi * stride, oj * stride);
          for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj)
              best = std::max(best,
                              x.at(n, c, oi * stride + ki, oj * stride + kj));
          out.at(n, c, oi, oj) = best;
        }
  return out;
}

/// (x - mu) / sqrt(var + eps) * gamma + beta with batch statistics computed
/// directly from the definition.
template <typename S>
Tensor<S> naive_batch_norm_train(const Tensor<S>& x, const std::vector<S>& gamma,
                                 const std::vector<S>& beta, S eps) {
  const auto& s = x.shape();
  Tensor<S> out(s);
  const double m = double(s.n) * s.h * s.w;
  for (int c = 0; c < s.c; ++c) {
    double mu = 0;
    for (int n = 0; n < s.n; ++n)
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) mu += x.at(n, c, i, j);
    mu /= m;
    double var = 0;
    for (int n = 0; n < s.n; ++n)
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) {
          double d = x.at(n, c, i, j) - mu;
          var += d * d;
        }
    var /= m;
    for (int n = 0; n < s.n; ++n)
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j)
          out.at(n, c, i, j) =
              S((x.at(n, c, i, j) - mu) / std::sqrt(var + double(eps)) *
                    double(gamma[c]) + double(beta[c]));
  }
  return out;
}

/// Row-by-row matrix multiply for the linear layer: out = x * w^T + b.
template <typename S>
Tensor<S> naive_linear(const Tensor<S>& x, const Tensor<S>& w,
                       const std::vector<S>* bias) {
  const auto& xs = x.shape();
  const int features = xs.c * xs.h * xs.w;
  const int out_features = w.shape().n;
  Tensor<S> out(TensorShape{xs.n, out_features, 1, 1});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < out_features; ++o) {
      S acc = bias ? (*bias)[o] : S(0);
      for (int f = 0; f < features; ++f)
        acc += x.values()[n * features + f] * w.values()[o * features + f];
      out.at(n, o, 0, 0) = acc;
    }
  return out;
}

template <typename S>
Tensor<S> naive_global_avg_pool(const Tensor<S>& x) {
  const auto& s = x.shape();
  Tensor<S> out(TensorShape{s.n, s.c, 1, 1});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      double sum = 0;
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) sum += x.at(n, c, i, j);
      out.at(n, c, 0, 0) = S(sum / (double(s.h) * s.w));
    }
  return out;
}

/// Counts how many convolution windows cover each input position for a
/// k x k / stride / pad convolution over an h x w input.
inline std::vector<std::vector<int>> window_coverage(int h, int w, int k,
                                                     int stride, int pad) {
  std::vector<std::vector<int>> cover(h, std::vector<int>(w, 0));
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  for (int oi = 0; oi < oh; ++oi)
    for (int oj = 0; oj < ow; ++oj)
      for (int ki = 0; ki < k; ++ki)
        for (int kj = 0; kj < k; ++kj) {
          int ii = oi * stride + ki - pad;
          int jj = oj * stride + kj - pad;
          if (ii >= 0 && ii < h && jj >= 0 && jj < w) cover[ii][jj]++;
        }
  return cover;
}

template <typename S>
double max_rel_diff(const Tensor<S>& a, const Tensor<S>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double va = a.values()[i], vb = b.values()[i];
    double denom = std::max({std::abs(va), std::abs(vb), 1.0});
    worst = std::max(worst, std::abs(va - vb) / denom);
  }
  return worst;
}

template <typename S>
void fill_random(Tensor<S>& t, spdconv::Pcg32& rng, double lo = -1.0,
                 double hi = 1.0) {
  for (auto& v : t.values()) v = S(rng.uniform(lo, hi));
}

}  // namespace oracle
