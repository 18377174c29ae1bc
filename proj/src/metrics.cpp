// SPDX-License-Identifier: Apache-2.0
#include "sketch/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "sketch/error.hpp"
#include "sketch/kernels.hpp"

namespace sketch {

namespace {

void require_same_size(const GrayImage& a, const GrayImage& b, const char* what) {
  if (a.width != b.width || a.height != b.height)
    throw DimensionError(std::string(what) + ": image sizes differ (" + std::to_string(a.width) +
                         "x" + std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                         std::to_string(b.height) + ")");
}

std::vector<double> to_double(const GrayImage& img) {
  return {img.pixels.begin(), img.pixels.end()};
}

}  // namespace

std::vector<double> gaussian_taps(std::size_t window, double sigma) {
  if (window == 0 || window % 2 == 0) throw ValidationError("gaussian window must be odd");
  if (!(sigma > 0.0)) throw ValidationError("gaussian sigma must be positive");
  std::vector<double> taps(window);
  const double c = static_cast<double>(window / 2);
  double sum = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    const double d = static_cast<double>(i) - c;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += taps[i];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

double ssim(const GrayImage& a, const GrayImage& b, const SsimParams& params) {
  require_same_size(a, b, "ssim");
  const auto w = a.width, h = a.height, t = params.window;
  if (w < t || h < t)
    throw DimensionError("ssim needs images of at least " + std::to_string(t) + "x" +
                         std::to_string(t) + ", got " + std::to_string(w) + "x" +
                         std::to_string(h));
  const auto taps = gaussian_taps(t, params.sigma);
  const auto xa = to_double(a), xb = to_double(b);
  std::vector<double> aa(xa.size()), bb(xa.size()), ab(xa.size());
  for (std::size_t i = 0; i < xa.size(); ++i) {
    aa[i] = xa[i] * xa[i];
    bb[i] = xb[i] * xb[i];
    ab[i] = xa[i] * xb[i];
  }
  const auto oh = h - t + 1, ow = w - t + 1;
  std::vector<double> mu_a(oh * ow), mu_b(oh * ow), e_aa(oh * ow), e_bb(oh * ow), e_ab(oh * ow);
  kernels::separable_filter_valid(xa, h, w, taps, mu_a);
  kernels::separable_filter_valid(xb, h, w, taps, mu_b);
  kernels::separable_filter_valid(aa, h, w, taps, e_aa);
  kernels::separable_filter_valid(bb, h, w, taps, e_bb);
  kernels::separable_filter_valid(ab, h, w, taps, e_ab);

  const double c1 = std::pow(params.k1 * params.dynamic_range, 2);
  const double c2 = std::pow(params.k2 * params.dynamic_range, 2);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

double psnr(const GrayImage& a, const GrayImage& b) {
  require_same_size(a, b, "psnr");
  if (a.size() == 0) throw ValidationError("psnr of empty images");
  double sse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    sse += d * d;
  }
  if (sse == 0.0) return kPsnrIdentical;
  const double mse = sse / static_cast<double>(a.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double perceptual_distance(const GrayImage& a, const GrayImage& b, const EncoderModel& model) {
  require_same_size(a, b, "perceptual_distance");
  const auto fa = model.image_block_outputs(a);
  const auto fb = model.image_block_outputs(b);
  constexpr double kEps = 1e-10;
  double total = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const auto& x = fa[l];
    const auto& y = fb[l];
    double layer = 0.0;
    for (std::size_t p = 0; p < x.rows(); ++p) {
      double nx = 0.0, ny = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        nx += static_cast<double>(x(p, c)) * x(p, c);
        ny += static_cast<double>(y(p, c)) * y(p, c);
      }
      nx = std::sqrt(nx) + kEps;
      ny = std::sqrt(ny) + kEps;
      double d2 = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        const double d = x(p, c) / nx - y(p, c) / ny;
        d2 += d * d;
      }
      layer += d2;
    }
    total += layer / static_cast<double>(x.rows());
  }
  return fa.empty() ? 0.0 : total / static_cast<double>(fa.size());
}

std::string to_string(ReferenceKind kind) {
  return kind == ReferenceKind::ground_truth ? "ground_truth" : "previous_iteration";
}

ReferenceKind parse_reference_kind(const std::string& s) {
  if (s == "ground_truth") return ReferenceKind::ground_truth;
  if (s == "previous_iteration") return ReferenceKind::previous_iteration;
  throw FormatError("unknown reference kind '" + s + "'");
}

namespace {

constexpr const char* kColumns = "iteration\tssim\tpsnr\tclip_score\tperceptual_distance";

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, std::size_t line) {
  if (s == "inf") return kPsnrIdentical;
  if (s == "-inf") return -kPsnrIdentical;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("report line " + std::to_string(line) + ": bad number '" + s + "'");
  }
}

}  // namespace

std::string serialize_report(const MetricReport& r) {
  const auto n = r.size();
  if (r.psnr.size() != n || r.clip_score.size() != n || r.perceptual_distance.size() != n)
    throw DimensionError("metric report series have different lengths");
  std::string out = "# reference=" + to_string(r.reference) + "\t" + kColumns + "\n";
  for (std::size_t i = 0; i < n; ++i) {
    out += std::to_string(i + 1) + "\t" + format_double(r.ssim[i]) + "\t" +
           format_double(r.psnr[i]) + "\t" + format_double(r.clip_score[i]) + "\t" +
           format_double(r.perceptual_distance[i]) + "\n";
  }
  return out;
}

MetricReport parse_report(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty metric report");
  const std::string prefix = "# reference=";
  const auto tab = line.find('\t');
  if (line.rfind(prefix, 0) != 0 || tab == std::string::npos || line.substr(tab + 1) != kColumns)
    throw FormatError("metric report header is malformed");
  MetricReport r;
  r.reference = parse_reference_kind(line.substr(prefix.size(), tab - prefix.size()));
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream fields(line);
    for (std::string cell; std::getline(fields, cell, '\t');) f.push_back(cell);
    if (f.size() != 5)
      throw FormatError("report line " + std::to_string(lineno) + ": expected 5 fields");
    if (f[0] != std::to_string(r.size() + 1))
      throw FormatError("report line " + std::to_string(lineno) + ": iterations out of order");
    r.ssim.push_back(parse_double(f[1], lineno));
    r.psnr.push_back(parse_double(f[2], lineno));
    r.clip_score.push_back(parse_double(f[3], lineno));
    r.perceptual_distance.push_back(parse_double(f[4], lineno));
  }
  return r;
}

}  // namespace sketch
