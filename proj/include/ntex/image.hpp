#pragma once

// Planar RGB images in [0,1] and binary PPM (P6) I/O.

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ntex/errors.hpp"
#include "ntex/tensor.hpp"

namespace ntex {

struct Image {
  int width = 0, height = 0;
  std::vector<float> rgb;  // 3 x H x W, channel-major

  static Image black(int width, int height) {
    return Image{width, height, std::vector<float>(3 * static_cast<std::size_t>(width) * height, 0.0f)};
  }

  std::size_t plane() const { return static_cast<std::size_t>(width) * height; }
  float& at(int c, std::size_t pixel) { return rgb[c * plane() + pixel]; }
  float at(int c, std::size_t pixel) const { return rgb[c * plane() + pixel]; }

  /// Rounds every value to the nearest of the 256 levels a PPM can store.
  void quantize() {
    for (auto& v : rgb) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// [0,1] image to a 3xHxW tensor in [-1,1].
template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
  Buffer<T> data(img.rgb.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(2.0 * img.rgb[i] - 1.0);
  return Tensor<T>::from(Shape{3, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)},
                         std::move(data));
}

/// 3xHxW tensor in [-1,1] to a [0,1] image.
template <typename T>
Image tensor_to_image(const Tensor<T>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw DimensionError("tensor_to_image: expected 3 x H x W");
  Image img{static_cast<int>(t.dim(2)), static_cast<int>(t.dim(1)), std::vector<float>(t.numel())};
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    img.rgb[i] = std::clamp(static_cast<float>((static_cast<double>(d[i]) + 1.0) * 0.5), 0.0f, 1.0f);
  }
  return img;
}

inline void write_ppm(const Image& img, std::ostream& out) {
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> bytes(3 * img.plane());
  for (std::size_t p = 0; p < img.plane(); ++p) {
    for (int c = 0; c < 3; ++c) {
      bytes[3 * p + c] = static_cast<unsigned char>(std::lround(std::clamp(img.at(c, p), 0.0f, 1.0f) * 255.0f));
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed to write PPM");
}

inline Image read_ppm(std::istream& in) {
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t += ch;
    }
    return t;
  };
  if (token() != "P6") throw FormatError("not a binary PPM (P6)");
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(token());
    height = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw FormatError("malformed PPM header");
  }
  if (width <= 0 || height <= 0 || maxval != 255) throw FormatError("unsupported PPM dimensions or depth");
  Image img = Image::black(width, height);
  std::vector<unsigned char> bytes(3 * img.plane());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw FormatError("truncated PPM body");
  for (std::size_t p = 0; p < img.plane(); ++p) {
    for (int c = 0; c < 3; ++c) img.at(c, p) = static_cast<float>(bytes[3 * p + c]) / 255.0f;
  }
  return img;
}

}  // namespace ntex
