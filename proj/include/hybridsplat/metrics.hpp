#pragma once

// Image quality metrics on a 0-255 scale. Images hold values in [0, 1].

#include "hybridsplat/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace hybridsplat {

inline constexpr double kPsnrCap = 100.0;

namespace detail {

inline void check_metric_inputs(const Image& a, const Image& b, const PixelMask& mask, const char* what) {
  require_same_shape(a, b, what);
  if (a.pixel_count() == 0) throw Error(ErrorKind::Dimension, std::string(what) + ": empty image");
  if (!mask.empty()) {
    if (mask.width != a.width || mask.height != a.height || mask.flags.size() != a.pixel_count()) {
      throw Error(ErrorKind::Dimension, std::string(what) + ": mask size differs from the images");
    }
    if (std::none_of(mask.flags.begin(), mask.flags.end(), [](std::uint8_t f) { return f != 0; })) {
      throw Error(ErrorKind::InvalidArgument, std::string(what) + ": mask selects no pixels");
    }
  }
}

}  // namespace detail

inline double metric_mae(const Image& a, const Image& b, const PixelMask& mask = {}) {
  detail::check_metric_inputs(a, b, mask, "mae");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < a.pixel_count(); ++p) {
    if (!mask.selected(p)) continue;
    for (int c = 0; c < a.channels; ++c) {
      sum += std::abs(255.0 * a.data[p * a.channels + c] - 255.0 * b.data[p * b.channels + c]);
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

inline double mse_255(const Image& a, const Image& b, const PixelMask& mask = {}) {
  detail::check_metric_inputs(a, b, mask, "mse");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < a.pixel_count(); ++p) {
    if (!mask.selected(p)) continue;
    for (int c = 0; c < a.channels; ++c) {
      const double d = 255.0 * a.data[p * a.channels + c] - 255.0 * b.data[p * b.channels + c];
      sum += d * d;
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

/// 20 log10(255 / RMSE), capped at 100 dB (identical images hit the cap).
inline double psnr_from_mse_255(double mse) {
  if (!(mse > 0.0)) return kPsnrCap;
  return std::min(kPsnrCap, 20.0 * std::log10(255.0 / std::sqrt(mse)));
}

inline double metric_psnr(const Image& a, const Image& b, const PixelMask& mask = {}) {
  return psnr_from_mse_255(mse_255(a, b, mask));
}

/// Mean SSIM over all 11x11 windows that fit inside the image (Gaussian
/// weights, sigma 1.5), averaged over channels. With a mask, only windows
/// centred on selected pixels count.
inline double metric_ssim(const Image& a, const Image& b, const PixelMask& mask = {}) {
  detail::check_metric_inputs(a, b, mask, "ssim");
  constexpr int kWin = 11, kHalf = 5;
  constexpr double kSigma = 1.5;
  constexpr double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  if (a.width < kWin || a.height < kWin) {
    throw Error(ErrorKind::Dimension, "ssim: images must be at least 11x11");
  }

  std::array<double, kWin> kernel{};
  double ksum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    kernel[i] = std::exp(-0.5 * (i - kHalf) * (i - kHalf) / (kSigma * kSigma));
    ksum += kernel[i];
  }
  for (double& k : kernel) k /= ksum;

  const int w = a.width, h = a.height;
  const int ow = w - kWin + 1, oh = h - kWin + 1;
  // Separable "valid" filtering: horizontal pass into (ow x h), then vertical into (ow x oh).
  auto filter = [&](const std::vector<double>& src) {
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h), dst(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int k = 0; k < kWin; ++k) s += kernel[k] * src[static_cast<std::size_t>(y) * w + x + k];
        tmp[static_cast<std::size_t>(y) * ow + x] = s;
      }
    }
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int k = 0; k < kWin; ++k) s += kernel[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
        dst[static_cast<std::size_t>(y) * ow + x] = s;
      }
    }
    return dst;
  };

  double total = 0.0;
  std::size_t windows = 0;
  const std::size_t n = a.pixel_count();
  std::vector<double> xa(n), xb(n), xaa(n), xbb(n), xab(n);
  for (int c = 0; c < a.channels; ++c) {
    for (std::size_t p = 0; p < n; ++p) {
      xa[p] = 255.0 * a.data[p * a.channels + c];
      xb[p] = 255.0 * b.data[p * b.channels + c];
      xaa[p] = xa[p] * xa[p];
      xbb[p] = xb[p] * xb[p];
      xab[p] = xa[p] * xb[p];
    }
    const auto mu_a = filter(xa), mu_b = filter(xb), e_aa = filter(xaa), e_bb = filter(xbb), e_ab = filter(xab);
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        if (!mask.selected(static_cast<std::size_t>(y + kHalf) * w + x + kHalf)) continue;
        const std::size_t i = static_cast<std::size_t>(y) * ow + x;
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++windows;
      }
    }
  }
  if (windows == 0) throw Error(ErrorKind::InvalidArgument, "ssim: mask selects no complete window");
  return total / static_cast<double>(windows);
}

}  // namespace hybridsplat
