// SPDX-License-Identifier: Apache-2.0
#include "sketch/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "sketch/error.hpp"
#include "sketch/tensor.hpp"

namespace sketch {

// --------------------------------------------------------------- templates

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
  std::size_t pos = 0;
  while ((pos = text_.find('{', pos)) != std::string::npos) {
    const auto end = text_.find('}', pos);
    if (end == std::string::npos) throw TemplateError("unterminated slot in template: " + text_);
    auto name = text_.substr(pos + 1, end - pos - 1);
    if (name.empty()) throw TemplateError("empty slot name in template: " + text_);
    if (std::find(slots_.begin(), slots_.end(), name) == slots_.end()) slots_.push_back(name);
    pos = end + 1;
  }
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& values) const {
  std::vector<std::string> missing;
  for (const auto& s : slots_)
    if (!values.contains(s)) missing.push_back(s);
  if (!missing.empty()) {
    std::string msg = "template is missing slot value(s):";
    for (const auto& m : missing) msg += " {" + m + "}";
    throw TemplateError(msg);
  }
  std::string out;
  std::size_t pos = 0;
  while (pos < text_.size()) {
    const auto open = text_.find('{', pos);
    if (open == std::string::npos) {
      out += text_.substr(pos);
      break;
    }
    const auto close = text_.find('}', open);
    out += text_.substr(pos, open - pos);
    out += values.at(text_.substr(open + 1, close - open - 1));
    pos = close + 1;
  }
  return out;
}

std::string render_prompt(const PromptTemplate& tmpl,
                          const std::map<std::string, std::string>& slots) {
  return tmpl.render(slots);
}

// ---------------------------------------------------------------- manifest

namespace {

std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<SketchPair> load_manifest(const std::filesystem::path& path, std::size_t image_size) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec))
    throw IngestionError({"cannot open manifest " + path.string()});
  std::ifstream in(path);
  if (!in) throw IngestionError({"cannot open manifest " + path.string()});
  const auto base = path.parent_path();
  std::vector<SketchPair> pairs;
  std::vector<std::string> issues;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line.front() == '#') continue;
    const auto where = "line " + std::to_string(line_no);
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      issues.push_back(where + " ('" + trim(line.substr(0, t1)) +
                       "'): expected 3 tab-separated fields (id, image_path, description)");
      continue;
    }
    SketchPair p;
    p.id = trim(line.substr(0, t1));
    const auto image_path = trim(line.substr(t1 + 1, t2 - t1 - 1));
    p.description = trim(line.substr(t2 + 1));
    if (p.id.empty()) {
      issues.push_back(where + ": empty id");
      continue;
    }
    if (!seen.insert(p.id).second) {
      issues.push_back(where + ": duplicate id '" + p.id + "'");
      continue;
    }
    if (p.description.empty()) {
      issues.push_back(where + ": record '" + p.id + "' has an empty description");
      continue;
    }
    std::filesystem::path img = image_path;
    if (img.is_relative()) img = base / img;
    try {
      p.image = resize_nearest(read_pgm(img), image_size, image_size);
    } catch (const Error& e) {
      issues.push_back(where + ": record '" + p.id + "': " + e.what());
      continue;
    }
    pairs.push_back(std::move(p));
  }
  if (!issues.empty()) throw IngestionError(std::move(issues));
  return pairs;
}

std::filesystem::path write_manifest(const std::filesystem::path& dir,
                                     const std::vector<SketchPair>& pairs,
                                     const std::string& manifest_name) {
  std::filesystem::create_directories(dir / "images");
  const auto manifest = dir / manifest_name;
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write manifest " + manifest.string());
  out << "# id\timage_path\tdescription\n";
  for (const auto& p : pairs) {
    const auto rel = std::filesystem::path("images") / (p.id + ".pgm");
    write_pgm(dir / rel, p.image);
    out << p.id << '\t' << rel.generic_string() << '\t' << p.description << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + manifest.string());
  return manifest;
}

// ------------------------------------------------------------------- split

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n,
                                                                            double ratio,
                                                                            std::uint64_t seed) {
  if (n < 2) throw ValidationError("split needs at least 2 pairs, got " + std::to_string(n));
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("split ratio must lie in (0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  return {std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train)),
          std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end())};
}

Split split(const std::vector<SketchPair>& pairs, double ratio, std::uint64_t seed) {
  const auto [tr, va] = split_indices(pairs.size(), ratio, seed);
  Split s;
  for (auto i : tr) s.train.push_back(pairs[i]);
  for (auto i : va) s.validation.push_back(pairs[i]);
  return s;
}

// ----------------------------------------------------------------- fixture

namespace {

constexpr const char* kDemographics[] = {
    "a male in his 40s", "a female in her 20s", "an elderly male", "a young female",
    "a male in his 30s", "a female in her 50s", "a teenage male",  "an elderly female",
};

constexpr const char* kMarkPositions[kFixtureVariants] = {
    "left brow", "forehead", "right brow", "left cheek",
    "right cheek", "left jaw", "chin", "right jaw",
};

constexpr double kMarkCenters[kFixtureVariants][2] = {
    {0.22, 0.22}, {0.5, 0.22}, {0.78, 0.22}, {0.22, 0.5},
    {0.78, 0.5},  {0.22, 0.78}, {0.5, 0.78}, {0.78, 0.78},
};

constexpr const char* kMarkTones[4] = {"black", "dark", "light", "white"};
constexpr double kMarkLevels[4] = {15.0, 70.0, 190.0, 245.0};

std::string orientation_name(double degrees) {
  const long d = std::lround(degrees);
  switch (d) {
    case 0: return "vertical";
    case 45: return "diagonal";
    case 90: return "horizontal";
    case 135: return "antidiagonal";
    default: return std::to_string(d) + " degree";
  }
}

std::string demographic(std::size_t cluster) {
  constexpr std::size_t n = std::size(kDemographics);
  if (cluster < n) return kDemographics[cluster];
  return std::string(kDemographics[cluster % n]) + " of group " + std::to_string(cluster);
}

SketchPair make_pair(std::size_t cluster, std::size_t num_clusters, std::size_t variant,
                     std::size_t size, const std::string& id, Rng& rng) {
  const double degrees = 180.0 * static_cast<double>(cluster) / static_cast<double>(num_clusters);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cycles = 4.0 + static_cast<double>(cluster % 3);
  const double phase = 0.7 * static_cast<double>(cluster);
  std::uniform_real_distribution<double> noise(-3.0, 3.0);
  std::uniform_real_distribution<double> jitter(-0.03, 0.03);
  const double mx = kMarkCenters[variant][0] + jitter(rng);
  const double my = kMarkCenters[variant][1] + jitter(rng);
  const bool large = variant >= 4;
  const double radius = large ? 0.2 : 0.11;
  const double tone = kMarkLevels[variant % 4];

  GrayImage img(size, size);
  const double s = static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double u = x / s, v = y / s;
      const double t = u * std::cos(theta) + v * std::sin(theta);
      double value = 128.0 + 70.0 * std::cos(2.0 * std::numbers::pi * cycles * t + phase);
      const double dist = std::hypot(u - mx, v - my);
      if (dist < radius) value = tone;
      value += noise(rng);
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
    }

  const PromptTemplate tmpl;
  SketchPair p;
  p.id = id;
  p.cluster = static_cast<int>(cluster);
  p.image = std::move(img);
  p.description = tmpl.render(
      {{"demographic", demographic(cluster)},
       {"physical attributes", orientation_name(degrees) + " hatching and a " + (large ? "large " : "small ") +
                                   kMarkTones[variant % 4] + " mark at the " +
                                   kMarkPositions[variant]}});
  return p;
}

}  // namespace

std::vector<SketchPair> synth_fixture(std::size_t num_clusters, std::size_t pairs_per_cluster,
                                      std::uint64_t seed, std::size_t image_size) {
  if (num_clusters < 2) throw ValidationError("fixture needs at least 2 clusters");
  Rng rng(seed);
  std::vector<SketchPair> pairs;
  for (std::size_t c = 0; c < num_clusters; ++c)
    for (std::size_t i = 0; i < pairs_per_cluster; ++i)
      pairs.push_back(make_pair(c, num_clusters, i % kFixtureVariants, image_size,
                                "c" + std::to_string(c) + "_" + std::to_string(i), rng));
  return pairs;
}

std::vector<SketchPair> synth_fixture_sized(std::size_t num_clusters, std::size_t count,
                                            std::uint64_t seed, std::size_t image_size) {
  if (num_clusters < 2) throw ValidationError("fixture needs at least 2 clusters");
  Rng rng(seed);
  std::vector<SketchPair> pairs;
  for (std::size_t k = 0; k < count; ++k) {
    const auto c = k % num_clusters, i = k / num_clusters;
    pairs.push_back(make_pair(c, num_clusters, i % kFixtureVariants, image_size,
                              "c" + std::to_string(c) + "_" + std::to_string(i), rng));
  }
  return pairs;
}

double pixel_correlation(const GrayImage& a, const GrayImage& b) {
  if (a.width != b.width || a.height != b.height)
    throw DimensionError("pixel_correlation: image sizes differ");
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a.pixels[i];
    mb += b.pixels[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a.pixels[i] - ma, db = b.pixels[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace sketch
