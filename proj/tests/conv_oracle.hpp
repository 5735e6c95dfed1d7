#pragma once

// Direct-loop conv encoder forward pass, independent of the im2col code in
// the library. Used to check conv outputs and to find rectifier kinks inside
// a finite-difference stencil.

#include <cstdint>
#include <span>
#include <vector>

#include "routenav/net.hpp"

namespace oracle {

struct ConvPass {
  std::vector<double> pre1, pre2, pre_fc;  // pre-rectifier activations
  std::vector<double> features;           // rectified fc output
};

inline ConvPass naive_conv(const routenav::ConvEncoderParams& p, std::span<const std::uint8_t> image) {
  using namespace routenav;
  ConvPass out;
  std::vector<double> a1(static_cast<std::size_t>(kConv1Filters * kConv1Out * kConv1Out));
  for (int f = 0; f < kConv1Filters; ++f) {
    for (int oy = 0; oy < kConv1Out; ++oy) {
      for (int ox = 0; ox < kConv1Out; ++ox) {
        double s = p.b1[f];
        for (int ky = 0; ky < kConv1Kernel; ++ky) {
          for (int kx = 0; kx < kConv1Kernel; ++kx) {
            for (int c = 0; c < kImageChannels; ++c) {
              const int y = oy * kConv1Stride + ky, x = ox * kConv1Stride + kx;
              const double px = image[static_cast<std::size_t>((y * kImageSide + x) * kImageChannels + c)] / 255.0;
              s += p.w1(f, (ky * kConv1Kernel + kx) * kImageChannels + c) * px;
            }
          }
        }
        out.pre1.push_back(s);
        a1[static_cast<std::size_t>((oy * kConv1Out + ox) * kConv1Filters + f)] = s > 0 ? s : 0.0;
      }
    }
  }
  // Flattened conv2 output in column-major (filter fastest, then position).
  std::vector<double> a2(static_cast<std::size_t>(kConvFlat));
  for (int oy = 0; oy < kConv2Out; ++oy) {
    for (int ox = 0; ox < kConv2Out; ++ox) {
      for (int f = 0; f < kConv2Filters; ++f) {
        double s = p.b2[f];
        for (int ky = 0; ky < kConv2Kernel; ++ky) {
          for (int kx = 0; kx < kConv2Kernel; ++kx) {
            for (int c = 0; c < kConv1Filters; ++c) {
              const int pos = (oy * kConv2Stride + ky) * kConv1Out + (ox * kConv2Stride + kx);
              s += p.w2(f, (ky * kConv2Kernel + kx) * kConv1Filters + c) *
                   a1[static_cast<std::size_t>(pos * kConv1Filters + c)];
            }
          }
        }
        out.pre2.push_back(s);
        a2[static_cast<std::size_t>((oy * kConv2Out + ox) * kConv2Filters + f)] = s > 0 ? s : 0.0;
      }
    }
  }
  for (Eigen::Index r = 0; r < p.fc_w.rows(); ++r) {
    double s = p.fc_b[r];
    for (int k = 0; k < kConvFlat; ++k) s += p.fc_w(r, k) * a2[static_cast<std::size_t>(k)];
    out.pre_fc.push_back(s);
    out.features.push_back(s > 0 ? s : 0.0);
  }
  return out;
}

// Sign pattern of every rectifier input.
inline std::vector<bool> relu_pattern(const routenav::ConvEncoderParams& p, std::span<const std::uint8_t> image) {
  const ConvPass pass = naive_conv(p, image);
  std::vector<bool> signs;
  for (const auto* v : {&pass.pre1, &pass.pre2, &pass.pre_fc}) {
    for (double x : *v) signs.push_back(x > 0);
  }
  return signs;
}

}  // namespace oracle
