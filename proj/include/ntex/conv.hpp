#pragma once

// 2D convolution and its adjoint on single images laid out channel-major
// (CxHxW). Both lower to a GEMM over an im2col buffer.

#include <Eigen/Core>

#include "ntex/tensor.hpp"

namespace ntex {

struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t rows() const { return channels * kernel * kernel; }
  std::size_t cols() const { return out_height() * out_width(); }
};

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// cols[(c*K + ky)*K + kx][oy*OW + ox] = image[c][oy*s - p + ky][ox*s - p + kx]
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          T* out = row + oy * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(out, out + ow, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters (accumulates) columns back into the image.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* image) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.width;
          const T* src = row + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv_args(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                     std::size_t stride, const char* op, std::size_t in_axis, std::size_t out_axis) {
  require_rank(input, 3, op, "input");
  require_rank(weight, 4, op, "weight");
  require_rank(bias, 1, op, "bias");
  if (stride == 0) throw DimensionError(std::string(op) + ": stride must be positive");
  if (weight.dim(2) != weight.dim(3)) {
    throw DimensionError(std::string(op) + ": kernel axes 2 and 3 differ (" +
                         shape_string(weight.shape()) + ")");
  }
  if (input.dim(0) != weight.dim(in_axis)) {
    throw DimensionError(std::string(op) + ": input channel axis 0 has " +
                         std::to_string(input.dim(0)) + " channels but weight axis " +
                         std::to_string(in_axis) + " expects " + std::to_string(weight.dim(in_axis)));
  }
  if (bias.dim(0) != weight.dim(out_axis)) {
    throw DimensionError(std::string(op) + ": bias axis 0 has " + std::to_string(bias.dim(0)) +
                         " entries but weight axis " + std::to_string(out_axis) + " has " +
                         std::to_string(weight.dim(out_axis)));
  }
}

}  // namespace detail

/// Cross-correlation of a CxHxW image with an OxCxKxK filter bank.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  detail::check_conv_args(input, weight, bias, stride, "conv2d", 1, 0);
  const ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), weight.dim(2), stride, padding};
  if (g.height + 2 * padding < g.kernel) {
    throw DimensionError("conv2d: axis 1 (height " + std::to_string(g.height) +
                         ") smaller than kernel " + std::to_string(g.kernel));
  }
  if (g.width + 2 * padding < g.kernel) {
    throw DimensionError("conv2d: axis 2 (width " + std::to_string(g.width) +
                         ") smaller than kernel " + std::to_string(g.kernel));
  }
  const std::size_t out_ch = weight.dim(0);
  const std::size_t n = g.cols();

  auto cols = std::make_shared<Buffer<T>>(g.rows() * n);
  detail::im2col(input.data().data(), g, cols->data());

  Buffer<T> out(out_ch * n);
  detail::MatrixMap<T> out_m(out.data(), out_ch, n);
  detail::ConstMatrixMap<T> w_m(weight.data().data(), out_ch, g.rows());
  detail::ConstMatrixMap<T> cols_m(cols->data(), g.rows(), n);
  if (g.kernel == 1) {
    // Per-pixel accumulation order independent of the pixel's position.
    const T* x = cols->data();
    const T* wd = weight.data().data();
    std::fill(out.begin(), out.end(), T(0));
    for (std::size_t o = 0; o < out_ch; ++o) {
      T* acc = out.data() + o * n;
      for (std::size_t c = 0; c < g.rows(); ++c) {
        const T wc = wd[o * g.rows() + c];
        const T* xc = x + c * n;
        for (std::size_t p = 0; p < n; ++p) acc[p] += wc * xc[p];
      }
    }
  } else {
    out_m.noalias() = w_m * cols_m;
  }
  auto b = bias.data();
  for (std::size_t o = 0; o < out_ch; ++o) out_m.row(o).array() += b[o];

  return detail::record<T>(
      "conv2d", Shape{out_ch, g.out_height(), g.out_width()}, std::move(out), {input, weight, bias},
      [input, weight, bias, cols, g, out_ch, n](std::span<const T> grad) mutable {
        detail::ConstMatrixMap<T> g_m(grad.data(), out_ch, n);
        if (weight.requires_grad()) {
          detail::MatrixMap<T> gw(weight.mutable_grad().data(), out_ch, g.rows());
          gw.noalias() += g_m * detail::ConstMatrixMap<T>(cols->data(), g.rows(), n).transpose();
        }
        if (bias.requires_grad()) {
          auto gb = bias.mutable_grad();
          for (std::size_t o = 0; o < out_ch; ++o) gb[o] += g_m.row(o).sum();
        }
        if (input.requires_grad()) {
          Buffer<T> dcols(g.rows() * n);
          detail::MatrixMap<T>(dcols.data(), g.rows(), n).noalias() =
              detail::ConstMatrixMap<T>(weight.data().data(), out_ch, g.rows()).transpose() * g_m;
          detail::col2im(dcols.data(), g, input.mutable_grad().data());
        }
      });
}

/// Adjoint of conv2d: input CinxHxW, weight CinxCoutxKxK (the conv2d filter
/// bank mapping Cout to Cin channels), output Cout x ((H-1)s-2p+K) x ((W-1)s-2p+K).
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           std::size_t stride, std::size_t padding) {
  detail::check_conv_args(input, weight, bias, stride, "conv_transpose2d", 0, 1);
  const std::size_t in_ch = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t k = weight.dim(2), out_ch = weight.dim(1);
  if ((h - 1) * stride + k <= 2 * padding) {
    throw DimensionError("conv_transpose2d: axis 1 output height would be non-positive");
  }
  if ((w - 1) * stride + k <= 2 * padding) {
    throw DimensionError("conv_transpose2d: axis 2 output width would be non-positive");
  }
  const std::size_t oh = (h - 1) * stride + k - 2 * padding;
  const std::size_t ow = (w - 1) * stride + k - 2 * padding;
  // The conv2d whose data-gradient this is maps the output grid back onto HxW.
  const ConvGeometry g{out_ch, oh, ow, k, stride, padding};
  if (g.out_height() != h || g.out_width() != w) {
    throw DimensionError("conv_transpose2d: stride/padding inconsistent with input size");
  }
  const std::size_t n = h * w;

  Buffer<T> cols(g.rows() * n);
  detail::ConstMatrixMap<T> w_m(weight.data().data(), in_ch, g.rows());
  detail::ConstMatrixMap<T> x_m(input.data().data(), in_ch, n);
  detail::MatrixMap<T>(cols.data(), g.rows(), n).noalias() = w_m.transpose() * x_m;
  Buffer<T> out(out_ch * oh * ow, T(0));
  detail::col2im(cols.data(), g, out.data());
  auto b = bias.data();
  for (std::size_t o = 0; o < out_ch; ++o) {
    for (std::size_t i = 0; i < oh * ow; ++i) out[o * oh * ow + i] += b[o];
  }

  return detail::record<T>(
      "conv_transpose2d", Shape{out_ch, oh, ow}, std::move(out), {input, weight, bias},
      [input, weight, bias, g, in_ch, out_ch, n](std::span<const T> grad) mutable {
        const std::size_t plane = g.height * g.width;
        if (bias.requires_grad()) {
          auto gb = bias.mutable_grad();
          for (std::size_t o = 0; o < out_ch; ++o) {
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += grad[o * plane + i];
            gb[o] += acc;
          }
        }
        if (!input.requires_grad() && !weight.requires_grad()) return;
        Buffer<T> dcols(g.rows() * n);
        detail::im2col(grad.data(), g, dcols.data());
        detail::ConstMatrixMap<T> dcols_m(dcols.data(), g.rows(), n);
        if (input.requires_grad()) {
          detail::MatrixMap<T>(input.mutable_grad().data(), in_ch, n).noalias() +=
              detail::ConstMatrixMap<T>(weight.data().data(), in_ch, g.rows()) * dcols_m;
        }
        if (weight.requires_grad()) {
          detail::MatrixMap<T>(weight.mutable_grad().data(), in_ch, g.rows()).noalias() +=
              detail::ConstMatrixMap<T>(input.data().data(), in_ch, n) * dcols_m.transpose();
        }
      });
}

}  // namespace ntex
