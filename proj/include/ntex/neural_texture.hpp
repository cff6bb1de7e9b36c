#pragma once

// Hierarchical neural textures: K feature maps of halving resolution whose
// bilinear samples are summed per pixel, plus the spherical-harmonics view
// modulation and the level-weighted l2 penalty.

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "ntex/rasterizer.hpp"
#include "ntex/tensor.hpp"

namespace ntex {

inline constexpr std::size_t kMeanColorChannels = 3;
inline constexpr std::size_t kShBasisCount = 9;
inline constexpr std::size_t kShFirstChannel = 3;  // channels 3..11 are view-modulated

template <typename T>
struct NeuralTexturePyramid {
  std::vector<Tensor<T>> levels;  // level 0 coarsest, back() finest

  /// Levels of side finest / 2^(K-1-l), texels uniform in [-init_range, init_range].
  static NeuralTexturePyramid make(std::size_t channels, std::size_t finest_resolution,
                                   std::size_t level_count, std::uint64_t seed, double init_range = 0.1) {
    if (channels == 0) throw ConfigError("neural texture needs at least one channel");
    if (level_count == 0) throw ConfigError("neural texture needs at least one level");
    if (finest_resolution % (std::size_t{1} << (level_count - 1)) != 0 ||
        (finest_resolution >> (level_count - 1)) < 2) {
      throw ConfigError("finest resolution " + std::to_string(finest_resolution) +
                        " cannot be halved into " + std::to_string(level_count) +
                        " levels of side >= 2");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-init_range, init_range);
    NeuralTexturePyramid p;
    for (std::size_t l = 0; l < level_count; ++l) {
      const std::size_t r = finest_resolution >> (level_count - 1 - l);
      Buffer<T> data(channels * r * r);
      for (auto& v : data) v = static_cast<T>(dist(rng));
      p.levels.push_back(Tensor<T>::from(Shape{channels, r, r}, std::move(data), true));
    }
    return p;
  }

  std::size_t level_count() const { return levels.size(); }
  std::size_t channels() const { return levels.front().dim(0); }
  std::size_t finest_resolution() const { return levels.back().dim(1); }

  void validate() const {
    if (levels.empty()) throw ConfigError("pyramid has no levels");
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const auto& lv = levels[l];
      if (lv.rank() != 3 || lv.dim(1) != lv.dim(2)) throw ConfigError("pyramid level is not C x R x R");
      if (lv.dim(0) != channels()) throw ConfigError("pyramid levels disagree on channel count");
      if (lv.dim(1) < 2) throw ConfigError("pyramid level resolution below 2");
      if (l > 0 && lv.dim(1) != 2 * levels[l - 1].dim(1)) {
        throw ConfigError("pyramid resolutions must halve exactly between levels");
      }
    }
  }
};

/// Texel-center addressing: uv (0,0) is the center of texel (0,0) and uv (1,1)
/// the center of texel (R-1,R-1). u indexes columns, v rows.
struct BilinearTap {
  std::size_t x0 = 0, y0 = 0;
  double fx = 0.0, fy = 0.0;

  std::array<double, 4> weights() const {
    return {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  }
};

inline BilinearTap bilinear_tap(double u, double v, std::size_t resolution) {
  if (!(u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0)) {
    throw DomainError("texture coordinate (" + std::to_string(u) + ", " + std::to_string(v) +
                      ") outside [0,1]^2");
  }
  const double scale = static_cast<double>(resolution - 1);
  const double x = u * scale, y = v * scale;
  BilinearTap tap;
  tap.x0 = std::min(static_cast<std::size_t>(x), resolution - 2);
  tap.y0 = std::min(static_cast<std::size_t>(y), resolution - 2);
  tap.fx = x - static_cast<double>(tap.x0);
  tap.fy = y - static_cast<double>(tap.y0);
  return tap;
}

/// Differentiable lookup of P uv pairs (Px2) in a CxRxR level; returns CxP.
/// Gradients flow to the texels and to the uv coordinates.
template <typename T>
Tensor<T> sample_bilinear(const Tensor<T>& level, const Tensor<T>& uv) {
  detail::require_rank(level, 3, "sample_bilinear", "level");
  detail::require_rank(uv, 2, "sample_bilinear", "uv");
  if (uv.dim(1) != 2) throw DimensionError("sample_bilinear: uv axis 1 must have size 2");
  if (level.dim(1) != level.dim(2) || level.dim(1) < 2) {
    throw DimensionError("sample_bilinear: level must be C x R x R with R >= 2");
  }
  const std::size_t channels = level.dim(0), res = level.dim(1), points = uv.dim(0);
  const std::size_t plane = res * res;
  std::vector<BilinearTap> taps(points);
  for (std::size_t p = 0; p < points; ++p) {
    taps[p] = bilinear_tap(static_cast<double>(uv.data()[2 * p]), static_cast<double>(uv.data()[2 * p + 1]), res);
  }
  auto tex = level.data();
  Buffer<T> out(channels * points);
  for (std::size_t p = 0; p < points; ++p) {
    const auto& tp = taps[p];
    const auto w = tp.weights();
    const std::size_t base = tp.y0 * res + tp.x0;
    for (std::size_t c = 0; c < channels; ++c) {
      const T* t = tex.data() + c * plane + base;
      out[c * points + p] = static_cast<T>(w[0] * t[0] + w[1] * t[1] + w[2] * t[res] + w[3] * t[res + 1]);
    }
  }
  auto shared_taps = std::make_shared<std::vector<BilinearTap>>(std::move(taps));
  return detail::record<T>(
      "sample_bilinear", Shape{channels, points}, std::move(out), {level, uv},
      [level, uv, shared_taps, channels, res, points, plane](std::span<const T> g) mutable {
        const auto& taps = *shared_taps;
        const double scale = static_cast<double>(res - 1);
        auto tex = level.data();
        for (std::size_t p = 0; p < points; ++p) {
          const auto& tp = taps[p];
          const auto w = tp.weights();
          const std::size_t base = tp.y0 * res + tp.x0;
          double du = 0.0, dv = 0.0;
          for (std::size_t c = 0; c < channels; ++c) {
            const T gc = g[c * points + p];
            if (level.requires_grad()) {
              T* gt = level.mutable_grad().data() + c * plane + base;
              gt[0] += static_cast<T>(w[0] * gc);
              gt[1] += static_cast<T>(w[1] * gc);
              gt[res] += static_cast<T>(w[2] * gc);
              gt[res + 1] += static_cast<T>(w[3] * gc);
            }
            const T* t = tex.data() + c * plane + base;
            du += gc * ((1 - tp.fy) * (t[1] - t[0]) + tp.fy * (t[res + 1] - t[res]));
            dv += gc * ((1 - tp.fx) * (t[res] - t[0]) + tp.fx * (t[res + 1] - t[1]));
          }
          if (uv.requires_grad()) {
            auto guv = uv.mutable_grad();
            guv[2 * p] += static_cast<T>(du * scale);
            guv[2 * p + 1] += static_cast<T>(dv * scale);
          }
        }
      });
}

/// Non-differentiable lookup of a single uv; returns the C-vector.
template <typename T>
Buffer<T> sample_bilinear_at(const Tensor<T>& level, double u, double v) {
  const auto tap = bilinear_tap(u, v, level.dim(1));
  const std::size_t res = level.dim(1), plane = res * res;
  const auto w = tap.weights();
  Buffer<T> out(level.dim(0));
  for (std::size_t c = 0; c < out.size(); ++c) {
    const T* t = level.data().data() + c * plane + tap.y0 * res + tap.x0;
    out[c] = static_cast<T>(w[0] * t[0] + w[1] * t[1] + w[2] * t[res] + w[3] * t[res + 1]);
  }
  return out;
}

/// Screen-space feature map (C x H x W): the sum over all levels of bilinear
/// samples at each covered pixel's uv. `objects` restricts sampling to pixels
/// with those object ids (empty = every covered pixel). Other pixels are zero.
template <typename T>
Tensor<T> sample_pyramid(const NeuralTexturePyramid<T>& pyramid, const GBuffer& gbuffer,
                         std::span<const std::uint16_t> objects = {}) {
  pyramid.validate();
  const std::size_t channels = pyramid.channels();
  const std::size_t pixels = gbuffer.pixel_count();
  auto index = std::make_shared<std::vector<std::size_t>>();
  for (std::size_t i = 0; i < pixels; ++i) {
    if (!gbuffer.mask(i)) continue;
    if (!objects.empty() && std::find(objects.begin(), objects.end(), gbuffer.object_id[i]) == objects.end()) {
      continue;
    }
    index->push_back(i);
  }
  // taps[l * n + k] for covered pixel k at level l
  auto taps = std::make_shared<std::vector<BilinearTap>>();
  taps->reserve(pyramid.level_count() * index->size());
  for (const auto& level : pyramid.levels) {
    for (std::size_t i : *index) {
      taps->push_back(bilinear_tap(gbuffer.uv[2 * i], gbuffer.uv[2 * i + 1], level.dim(1)));
    }
  }

  Buffer<T> out(channels * pixels, T(0));
  const std::size_t n = index->size();
  for (std::size_t l = 0; l < pyramid.level_count(); ++l) {
    const auto& level = pyramid.levels[l];
    const std::size_t res = level.dim(1), plane = res * res;
    auto tex = level.data();
    for (std::size_t k = 0; k < n; ++k) {
      const auto& tp = (*taps)[l * n + k];
      const auto w = tp.weights();
      const std::size_t base = tp.y0 * res + tp.x0;
      const std::size_t px = (*index)[k];
      for (std::size_t c = 0; c < channels; ++c) {
        const T* t = tex.data() + c * plane + base;
        out[c * pixels + px] += static_cast<T>(w[0] * t[0] + w[1] * t[1] + w[2] * t[res] + w[3] * t[res + 1]);
      }
    }
  }

  auto levels = pyramid.levels;
  return detail::record<T>(
      "sample_pyramid", Shape{channels, static_cast<std::size_t>(gbuffer.height), static_cast<std::size_t>(gbuffer.width)},
      std::move(out), levels, [levels, taps, index, channels, pixels](std::span<const T> g) mutable {
        const std::size_t n = index->size();
        for (std::size_t l = 0; l < levels.size(); ++l) {
          auto& level = levels[l];
          if (!level.requires_grad()) continue;
          const std::size_t res = level.dim(1), plane = res * res;
          auto gt = level.mutable_grad();
          for (std::size_t k = 0; k < n; ++k) {
            const auto& tp = (*taps)[l * n + k];
            const auto w = tp.weights();
            const std::size_t base = tp.y0 * res + tp.x0;
            const std::size_t px = (*index)[k];
            for (std::size_t c = 0; c < channels; ++c) {
              const double gc = g[c * pixels + px];
              T* d = gt.data() + c * plane + base;
              d[0] += static_cast<T>(w[0] * gc);
              d[1] += static_cast<T>(w[1] * gc);
              d[res] += static_cast<T>(w[2] * gc);
              d[res + 1] += static_cast<T>(w[3] * gc);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Spherical harmonics, bands 0..2, real basis.

namespace sh {
inline constexpr double kBand0 = 0.28209479177387814;
inline constexpr double kBand1 = 0.48860251190291992;
inline constexpr double kBand2Cross = 1.0925484305920792;
inline constexpr double kBand2Zonal = 0.31539156525252005;
inline constexpr double kBand2Diff = 0.54627421529603959;
}  // namespace sh

inline std::array<double, kShBasisCount> eval_sh_basis(const Vec3& dir) {
  const double len = dir.norm();
  if (!(std::abs(len - 1.0) <= 1e-2)) {
    throw DomainError("eval_sh_basis: direction has length " + std::to_string(len));
  }
  const Vec3 d = dir / len;
  const double x = d.x(), y = d.y(), z = d.z();
  return {sh::kBand0,
          sh::kBand1 * y,
          sh::kBand1 * z,
          sh::kBand1 * x,
          sh::kBand2Cross * x * y,
          sh::kBand2Cross * y * z,
          sh::kBand2Zonal * (3.0 * z * z - 1.0),
          sh::kBand2Cross * x * z,
          sh::kBand2Diff * (x * x - y * y)};
}

/// 9 x H x W basis maps from per-pixel view directions; zero at background.
template <typename T>
Buffer<T> sh_basis_maps(const GBuffer& gbuffer) {
  const std::size_t pixels = gbuffer.pixel_count();
  Buffer<T> maps(kShBasisCount * pixels, T(0));
  for (std::size_t i = 0; i < pixels; ++i) {
    if (!gbuffer.mask(i)) continue;
    const Vec3 dir(gbuffer.view_dir[3 * i], gbuffer.view_dir[3 * i + 1], gbuffer.view_dir[3 * i + 2]);
    const auto basis = eval_sh_basis(dir);
    for (std::size_t b = 0; b < kShBasisCount; ++b) maps[b * pixels + i] = static_cast<T>(basis[b]);
  }
  return maps;
}

/// Multiplies channels 3..11 by the 9 basis maps; all other channels pass through.
template <typename T>
Tensor<T> modulate_sh(const Tensor<T>& features, std::span<const T> basis_maps) {
  detail::require_rank(features, 3, "modulate_sh", "features");
  if (features.dim(0) < kShFirstChannel + kShBasisCount) {
    throw ConfigError("modulate_sh: need at least 12 feature channels, got " + std::to_string(features.dim(0)));
  }
  const std::size_t plane = features.dim(1) * features.dim(2);
  if (basis_maps.size() != kShBasisCount * plane) {
    throw DimensionError("modulate_sh: basis maps do not match feature map size");
  }
  Buffer<T> factors(features.numel(), T(1));
  std::copy(basis_maps.begin(), basis_maps.end(), factors.begin() + kShFirstChannel * plane);
  return mul_constant(features, std::move(factors));
}

template <typename T>
Tensor<T> modulate_sh(const Tensor<T>& features, const GBuffer& gbuffer) {
  if (features.rank() == 3 &&
      (features.dim(1) != static_cast<std::size_t>(gbuffer.height) ||
       features.dim(2) != static_cast<std::size_t>(gbuffer.width))) {
    throw DimensionError("modulate_sh: feature map and G-buffer sizes differ");
  }
  const auto maps = sh_basis_maps<T>(gbuffer);
  return modulate_sh(features, std::span<const T>(maps));
}

/// sum_l (lambda_base * l) * ||level_l||^2; the coarsest level is unregularized.
template <typename T>
Tensor<T> pyramid_l2_penalty(const NeuralTexturePyramid<T>& pyramid, double lambda_base) {
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (std::size_t l = 1; l < pyramid.level_count(); ++l) {
    const T weight = static_cast<T>(lambda_base * static_cast<double>(l));
    if (weight == T(0)) continue;
    total = add(total, scale(sum_squares(pyramid.levels[l]), weight));
  }
  return total;
}

}  // namespace ntex
