#pragma once

#include <cmath>

#include "ntex/tensor.hpp"

namespace ntex {

inline constexpr double kInstanceNormEps = 1e-5;

/// Per-channel normalization of a CxHxW image with population variance,
/// followed by the affine map gamma * xhat + beta.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                        T eps = T(kInstanceNormEps)) {
  detail::require_rank(input, 3, "instance_norm", "input");
  const std::size_t channels = input.dim(0);
  const std::size_t plane = input.dim(1) * input.dim(2);
  if (plane < 2) {
    throw DomainError("instance_norm: degenerate statistics, need H*W >= 2 but got " +
                      std::to_string(plane));
  }
  if (gamma.numel() != channels) throw DimensionError("instance_norm: gamma axis 0 must equal channel count");
  if (beta.numel() != channels) throw DimensionError("instance_norm: beta axis 0 must equal channel count");

  auto x = input.data();
  auto gm = gamma.data(), bt = beta.data();
  auto normalized = std::make_shared<Buffer<T>>(input.numel());
  auto inv_std = std::make_shared<Buffer<T>>(channels);
  Buffer<T> out(input.numel());
  const T count = static_cast<T>(plane);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* xc = x.data() + c * plane;
    T mean = T(0);
    for (std::size_t i = 0; i < plane; ++i) mean += xc[i];
    mean /= count;
    T var = T(0);
    for (std::size_t i = 0; i < plane; ++i) var += (xc[i] - mean) * (xc[i] - mean);
    var /= count;
    // Zero variance with eps = 0: xhat is identically zero.
    const T inv = (var + eps) > T(0) ? T(1) / std::sqrt(var + eps) : T(0);
    (*inv_std)[c] = inv;
    for (std::size_t i = 0; i < plane; ++i) {
      const T xh = (xc[i] - mean) * inv;
      (*normalized)[c * plane + i] = xh;
      out[c * plane + i] = gm[c] * xh + bt[c];
    }
  }

  return detail::record<T>(
      "instance_norm", input.shape(), std::move(out), {input, gamma, beta},
      [input, gamma, beta, normalized, inv_std, channels, plane](std::span<const T> g) mutable {
        const auto& xh = *normalized;
        auto gm = gamma.data();
        const T count = static_cast<T>(plane);
        for (std::size_t c = 0; c < channels; ++c) {
          T sum_g = T(0), sum_gx = T(0);
          for (std::size_t i = 0; i < plane; ++i) {
            sum_g += g[c * plane + i];
            sum_gx += g[c * plane + i] * xh[c * plane + i];
          }
          if (gamma.requires_grad()) gamma.mutable_grad()[c] += sum_gx;
          if (beta.requires_grad()) beta.mutable_grad()[c] += sum_g;
          if (input.requires_grad()) {
            auto gi = input.mutable_grad();
            const T k = gm[c] * (*inv_std)[c] / count;
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t j = c * plane + i;
              gi[j] += k * (count * g[j] - sum_g - xh[j] * sum_gx);
            }
          }
        }
      });
}

}  // namespace ntex
