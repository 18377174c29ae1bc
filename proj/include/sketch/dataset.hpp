// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sketch/image.hpp"

namespace sketch {

struct SketchPair {
  std::string id;
  GrayImage image;
  std::string description;
  /// Fixture motif group; -1 for ingested data.
  int cluster = -1;

  friend bool operator==(const SketchPair&, const SketchPair&) = default;
};

/// Template with `{slot name}` placeholders.
class PromptTemplate {
 public:
  static constexpr const char* kDefault =
      "The suspect is described as {demographic} with {physical attributes}.";

  explicit PromptTemplate(std::string text = kDefault);

  const std::string& text() const { return text_; }
  const std::vector<std::string>& slots() const { return slots_; }

  /// Throws TemplateError listing every slot missing from `values`.
  std::string render(const std::map<std::string, std::string>& values) const;

 private:
  std::string text_;
  std::vector<std::string> slots_;
};

std::string render_prompt(const PromptTemplate& tmpl,
                          const std::map<std::string, std::string>& slots);

/// One record per line: id <TAB> image_path <TAB> description. Blank lines
/// and lines starting with '#' are skipped; relative image paths resolve
/// against the manifest's directory. Images are resized (nearest) to
/// `image_size` square. Throws IngestionError itemizing every bad record.
std::vector<SketchPair> load_manifest(const std::filesystem::path& path,
                                      std::size_t image_size = 64);

/// Writes images as PGM next to the manifest and returns the manifest path.
std::filesystem::path write_manifest(const std::filesystem::path& dir,
                                     const std::vector<SketchPair>& pairs,
                                     const std::string& manifest_name = "manifest.tsv");

struct Split {
  std::vector<SketchPair> train;
  std::vector<SketchPair> validation;
};

/// Seeded shuffle; train gets floor(ratio * N).
Split split(const std::vector<SketchPair>& pairs, double ratio, std::uint64_t seed);
/// Index form of split, for callers that keep their own storage.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double ratio, std::uint64_t seed);

/// Procedural stand-in for real sketches. Each cluster owns a hatching
/// orientation and frequency plus a demographic phrase; within a cluster
/// items differ by the tone, size and position of a mark, all named in the
/// description.
std::vector<SketchPair> synth_fixture(std::size_t num_clusters, std::size_t pairs_per_cluster,
                                      std::uint64_t seed, std::size_t image_size = 64);

/// Same generator, `count` pairs assigned round-robin to clusters.
std::vector<SketchPair> synth_fixture_sized(std::size_t num_clusters, std::size_t count,
                                            std::uint64_t seed, std::size_t image_size = 64);

/// Number of distinct marks the generator uses per cluster.
inline constexpr std::size_t kFixtureVariants = 8;

/// Pearson correlation of two same-size images' pixels.
double pixel_correlation(const GrayImage& a, const GrayImage& b);

}  // namespace sketch
