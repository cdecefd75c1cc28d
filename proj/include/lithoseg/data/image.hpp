#pragma once

#include <cmath>

#include "lithoseg/core/tensor.hpp"
#include "lithoseg/data/png_io.hpp"

namespace lithoseg {

// Frames are float tensors (1,C,H,W) in [0,1]; masks are int tensors
// (1,1,H,W) with labels 0=background, 1=stone, 2=laser.
using ImageF = Tensor<float>;
using MaskI = Tensor<int32_t>;

inline constexpr int kNumClasses = 3;

inline ImageF image_from_raw(const RawImage& raw) {
  ImageF img(1, raw.channels, raw.height, raw.width);
  for (int c = 0; c < raw.channels; ++c) {
    float* plane = img.plane_ptr(0, c);
    for (int i = 0; i < raw.width * raw.height; ++i)
      plane[i] = float(raw.data[size_t(i) * raw.channels + c]) / 255.0f;
  }
  return img;
}

inline RawImage raw_from_image(const ImageF& img) {
  RawImage raw;
  raw.width = int(img.w);
  raw.height = int(img.h);
  raw.channels = int(img.c);
  raw.data.resize(size_t(img.size()));
  for (Eigen::Index c = 0; c < img.c; ++c) {
    const float* plane = img.plane_ptr(0, c);
    for (Eigen::Index i = 0; i < img.plane(); ++i) {
      float v = std::min(std::max(plane[i], 0.0f), 1.0f);
      raw.data[size_t(i) * img.c + c] = uint8_t(std::lround(v * 255.0f));
    }
  }
  return raw;
}

// Masks are stored as single-channel 8-bit PNGs holding the raw label values;
// anything outside {0,1,2} is a data error.
inline MaskI mask_from_raw(const RawImage& raw, const std::string& context) {
  if (raw.channels != 1)
    throw std::invalid_argument(context + ": mask must be single-channel, got " +
                                std::to_string(raw.channels));
  MaskI m(1, 1, raw.height, raw.width);
  for (size_t i = 0; i < raw.data.size(); ++i) {
    if (raw.data[i] >= kNumClasses)
      throw std::invalid_argument(context + ": mask value " + std::to_string(int(raw.data[i])) +
                                  " outside {0,1,2}");
    m.data[Eigen::Index(i)] = raw.data[i];
  }
  return m;
}

inline RawImage raw_from_mask(const MaskI& m) {
  RawImage raw;
  raw.width = int(m.w);
  raw.height = int(m.h);
  raw.channels = 1;
  raw.data.resize(size_t(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) raw.data[size_t(i)] = uint8_t(m.data[i]);
  return raw;
}

// ITU-R BT.601 luma weights.
inline ImageF to_grayscale(const ImageF& rgb) {
  check(rgb.c == 3, "to_grayscale: expected 3 channels, got " + std::to_string(rgb.c));
  ImageF g(1, 1, rgb.h, rgb.w);
  const float* r = rgb.plane_ptr(0, 0);
  const float* gg = rgb.plane_ptr(0, 1);
  const float* b = rgb.plane_ptr(0, 2);
  for (Eigen::Index i = 0; i < rgb.plane(); ++i)
    g.data[i] = 0.299f * r[i] + 0.587f * gg[i] + 0.114f * b[i];
  return g;
}

}  // namespace lithoseg
