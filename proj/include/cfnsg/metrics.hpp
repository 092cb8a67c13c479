#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cfnsg/image.hpp"

namespace cfnsg {

// Identical images report the 99 dB sentinel (zero MSE).
inline constexpr double kPsnrSentinel = 99.0;

inline double psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("psnr: image dimension mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse == 0.0) return kPsnrSentinel;
  return std::min(kPsnrSentinel, 10.0 * std::log10(1.0 / mse));
}

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
// C2 = 0.03^2 on [0,1] data, channel-averaged, windows restricted to where
// the full kernel fits.
inline double ssim(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("ssim: image dimension mismatch");
  constexpr int kHalf = 5;
  constexpr int kWin = 2 * kHalf + 1;
  if (a.width < kWin || a.height < kWin)
    throw std::invalid_argument("ssim: image smaller than 11x11 window");

  static const std::vector<double> kernel = [] {
    std::vector<double> k(kWin * kWin);
    double sum = 0.0;
    for (int dy = -kHalf; dy <= kHalf; ++dy)
      for (int dx = -kHalf; dx <= kHalf; ++dx) {
        const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
        k[(dy + kHalf) * kWin + (dx + kHalf)] = w;
        sum += w;
      }
    for (double& w : k) w /= sum;
    return k;
  }();

  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  double total = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = kHalf; y < a.height - kHalf; ++y)
      for (int x = kHalf; x < a.width - kHalf; ++x) {
        double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
        for (int dy = -kHalf; dy <= kHalf; ++dy)
          for (int dx = -kHalf; dx <= kHalf; ++dx) {
            const double w = kernel[(dy + kHalf) * kWin + (dx + kHalf)];
            const double va = a.px(x + dx, y + dy)[c];
            const double vb = b.px(x + dx, y + dy)[c];
            mu_a += w * va;
            mu_b += w * vb;
            aa += w * va * va;
            bb += w * vb * vb;
            ab += w * va * vb;
          }
        const double var_a = aa - mu_a * mu_a;
        const double var_b = bb - mu_b * mu_b;
        const double cov = ab - mu_a * mu_b;
        total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                 ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

}  // namespace cfnsg
