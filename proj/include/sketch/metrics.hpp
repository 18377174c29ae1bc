// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <limits>
#include <string>
#include <vector>

#include "sketch/encoder.hpp"
#include "sketch/image.hpp"

namespace sketch {

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
};

/// Mean SSIM over every valid window position (no padding).
double ssim(const GrayImage& a, const GrayImage& b, const SsimParams& params = {});
/// Normalized 1-D Gaussian taps.
std::vector<double> gaussian_taps(std::size_t window, double sigma);
/// 10 log10(255^2 / MSE); kPsnrIdentical when the images match.
double psnr(const GrayImage& a, const GrayImage& b);
/// LPIPS-style distance on the encoder's image blocks: each patch feature is
/// scaled to unit length across channels, then squared differences are
/// summed over channels and averaged over patches and blocks.
double perceptual_distance(const GrayImage& a, const GrayImage& b, const EncoderModel& model);

enum class ReferenceKind { ground_truth, previous_iteration };
std::string to_string(ReferenceKind kind);
ReferenceKind parse_reference_kind(const std::string& s);

struct MetricReport {
  ReferenceKind reference = ReferenceKind::previous_iteration;
  std::vector<double> ssim;
  std::vector<double> psnr;
  std::vector<double> clip_score;
  std::vector<double> perceptual_distance;

  std::size_t size() const { return ssim.size(); }
  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

/// Header line then one tab-separated line per iteration. Infinite PSNR is
/// written as "inf".
std::string serialize_report(const MetricReport& report);
/// Throws FormatError on malformed input.
MetricReport parse_report(const std::string& text);

}  // namespace sketch
