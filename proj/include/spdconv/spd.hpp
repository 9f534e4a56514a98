#pragma once

#include <optional>

#include "spdconv/ops.hpp"

namespace spdconv {

/// How space_to_depth treats spatial dims not divisible by the scale:
/// strict errors out; zero_pad right/bottom-pads to the next multiple.
enum class SpdPad { strict, zero_pad };

struct SpdSpec {
  int scale = 2;
  SpdPad pad = SpdPad::strict;
};

namespace detail {

inline void check_spd_scale(int scale) {
  if (scale < 1) {
    throw std::invalid_argument("space_to_depth: scale must be >= 1, got " +
                                std::to_string(scale));
  }
}

}  // namespace detail

/// Space-to-depth: rearranges each scale x scale spatial neighbourhood into
/// scale^2 channel blocks. Output channel (y*scale + x)*c_in + c holds the
/// sub-map taken at row offset x and column offset y, i.e. the sub-maps are
/// ordered f(0,0), f(1,0), ..., f(scale-1,0), f(0,1), ..., with the row
/// offset varying fastest and each block keeping the original channel order.
/// A pure permutation of the input elements: lossless by construction.
template <typename Scalar>
Tensor<Scalar> space_to_depth(const Tensor<Scalar>& x, int scale,
                              Tape<Scalar>* tape = nullptr,
                              SpdPad pad = SpdPad::strict) {
  detail::check_spd_scale(scale);
  const auto& s = x.shape();
  if (pad == SpdPad::strict) {
    if (s.h % scale != 0) {
      throw std::invalid_argument("space_to_depth: height " +
                                  std::to_string(s.h) +
                                  " not divisible by scale " +
                                  std::to_string(scale));
    }
    if (s.w % scale != 0) {
      throw std::invalid_argument("space_to_depth: width " +
                                  std::to_string(s.w) +
                                  " not divisible by scale " +
                                  std::to_string(scale));
    }
  }
  const int oh = (s.h + scale - 1) / scale;
  const int ow = (s.w + scale - 1) / scale;
  Tensor<Scalar> out(TensorShape{s.n, scale * scale * s.c, oh, ow});
  for (int n = 0; n < s.n; ++n)
    for (int yo = 0; yo < scale; ++yo)
      for (int xo = 0; xo < scale; ++xo)
        for (int c = 0; c < s.c; ++c) {
          const int oc = (yo * scale + xo) * s.c + c;
          for (int i = 0; i < oh; ++i) {
            const int ii = i * scale + xo;
            for (int j = 0; j < ow; ++j) {
              const int jj = j * scale + yo;
              out.at(n, oc, i, j) = (ii < s.h && jj < s.w)
                                        ? x.at(n, c, ii, jj)
                                        : Scalar(0);
            }
          }
        }

  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<Scalar> xc = x, oc = out;
    tape->record("space_to_depth", [xc, oc, scale]() mutable {
      const auto& s = xc.shape();
      const auto& os = oc.shape();
      for (int n = 0; n < s.n; ++n)
        for (int yo = 0; yo < scale; ++yo)
          for (int xo = 0; xo < scale; ++xo)
            for (int c = 0; c < s.c; ++c) {
              const int ocn = (yo * scale + xo) * s.c + c;
              for (int i = 0; i < os.h; ++i) {
                const int ii = i * scale + xo;
                if (ii >= s.h) continue;
                for (int j = 0; j < os.w; ++j) {
                  const int jj = j * scale + yo;
                  if (jj >= s.w) continue;
                  xc.grad()[xc.index(n, c, ii, jj)] +=
                      oc.grad()[oc.index(n, ocn, i, j)];
                }
              }
            }
    });
  }
  return out;
}

/// Exact inverse of space_to_depth (strict mode): bit-for-bit round trips.
template <typename Scalar>
Tensor<Scalar> depth_to_space(const Tensor<Scalar>& x, int scale,
                              Tape<Scalar>* tape = nullptr) {
  detail::check_spd_scale(scale);
  const auto& s = x.shape();
  if (s.c % (scale * scale) != 0) {
    throw std::invalid_argument("depth_to_space: channel count " +
                                std::to_string(s.c) + " not divisible by " +
                                std::to_string(scale * scale));
  }
  const int c_out = s.c / (scale * scale);
  Tensor<Scalar> out(TensorShape{s.n, c_out, s.h * scale, s.w * scale});
  for (int n = 0; n < s.n; ++n)
    for (int yo = 0; yo < scale; ++yo)
      for (int xo = 0; xo < scale; ++xo)
        for (int c = 0; c < c_out; ++c) {
          const int ic = (yo * scale + xo) * c_out + c;
          for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j)
              out.at(n, c, i * scale + xo, j * scale + yo) = x.at(n, ic, i, j);
        }

  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<Scalar> xc = x, oc = out;
    tape->record("depth_to_space", [xc, oc, scale]() mutable {
      const auto& s = xc.shape();
      const int c_out = s.c / (scale * scale);
      for (int n = 0; n < s.n; ++n)
        for (int yo = 0; yo < scale; ++yo)
          for (int xo = 0; xo < scale; ++xo)
            for (int c = 0; c < c_out; ++c) {
              const int ic = (yo * scale + xo) * c_out + c;
              for (int i = 0; i < s.h; ++i)
                for (int j = 0; j < s.w; ++j)
                  xc.grad()[xc.index(n, ic, i, j)] +=
                      oc.grad()[oc.index(n, c, i * scale + xo, j * scale + yo)];
            }
    });
  }
  return out;
}

/// SPD followed by a non-strided convolution, optionally with batch norm and
/// an activation: X(S,S,C1) -> X'(S/scale, S/scale, scale^2*C1) ->
/// X''(S/scale, S/scale, C2).
template <typename Scalar>
struct SpdConvBlock {
  SpdSpec spd;
  ConvParams<Scalar> conv;
  std::optional<BatchNormState<Scalar>> norm;
  std::optional<Activation> act;

  /// Validates the block contract: the conv never strides, its input
  /// channel count is scale^2 * C1, and it reduces channels (C2 < scale^2*C1).
  static SpdConvBlock make(SpdSpec spd, ConvParams<Scalar> conv,
                           std::optional<BatchNormState<Scalar>> norm = {},
                           std::optional<Activation> act = {}) {
    if (conv.stride != 1) {
      throw std::invalid_argument(
          "SpdConvBlock: conv stride must be 1, got " +
          std::to_string(conv.stride));
    }
    const int c_in = conv.weight.shape().c;
    const int c_out = conv.weight.shape().n;
    if (c_in % (spd.scale * spd.scale) != 0) {
      throw std::invalid_argument(
          "SpdConvBlock: conv input channels must be scale^2 * C1");
    }
    if (c_out >= c_in) {
      throw std::invalid_argument(
          "SpdConvBlock: C2 (" + std::to_string(c_out) +
          ") must be smaller than scale^2 * C1 (" + std::to_string(c_in) + ")");
    }
    return SpdConvBlock{spd, std::move(conv), std::move(norm), act};
  }
};

template <typename Scalar>
Tensor<Scalar> spd_conv_forward(const Tensor<Scalar>& x,
                                SpdConvBlock<Scalar>& block,
                                bool training = false,
                                Tape<Scalar>* tape = nullptr) {
  Tensor<Scalar> y = space_to_depth(x, block.spd.scale, tape, block.spd.pad);
  y = conv2d(y, block.conv, tape);
  if (block.norm) y = batch_norm(y, *block.norm, training, tape);
  if (block.act) y = activation(y, *block.act, tape);
  return y;
}

}  // namespace spdconv
