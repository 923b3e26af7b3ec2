#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pnode/tensor.hpp"

namespace pnode {

/// Integer class label per pixel; 0 is background.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, int fill = 0) : height(h), width(w), labels(h * w, fill) {}

  int at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::size_t count(int label) const;
  bool contains(int label) const { return count(label) > 0; }
  /// Sorted distinct non-background labels.
  std::vector<int> classes() const;

  /// 0/1 tensor [H, W] of pixels equal to `label`.
  Tensor indicator(int label) const;
  Tensor to_tensor() const;
  static LabelMap from_tensor(const Tensor& t);

  bool operator==(const LabelMap&) const = default;
};

struct LabeledImage {
  Tensor image;  // [1, C, H, W], values in [0, 1]
  LabelMap mask;
};

/// One N-way K-shot task. support[i] holds the K shots for class_set[i]; all
/// masks carry only labels from class_set (everything else is background).
struct Episode {
  std::vector<int> class_set;
  std::vector<std::vector<LabeledImage>> support;
  std::vector<LabeledImage> query;

  std::size_t ways() const { return class_set.size(); }
  std::size_t shots() const { return support.empty() ? 0 : support.front().size(); }
  /// Throws ValidationError describing the first broken invariant.
  void validate() const;
};

enum class ShapeFamily { ellipse, rounded_rectangle, crescent };
std::string to_string(ShapeFamily f);

struct ClassAppearance {
  int class_id = 1;
  ShapeFamily family = ShapeFamily::ellipse;
  double intensity_lo = 0.6;
  double intensity_hi = 0.7;
};

/// Appearance statistics of one synthetic imaging domain.
struct ShapeDomain {
  std::string domain_id = "source";
  std::vector<ClassAppearance> classes;
  double background_lo = 0.25;
  double background_hi = 0.35;
  double noise_level = 0.03;
  double texture_frequency = 3.0;
  std::size_t height = 64;
  std::size_t width = 64;

  const ClassAppearance& appearance(int class_id) const;

  /// Three classes: 1 (liver-like ellipse), 2 (spleen-like crescent),
  /// 3 (base-only rounded rectangle).
  static ShapeDomain source();
  /// Source with intensities re-ranged by v -> a v + (1 - a) / 2 where
  /// a = 1 - 1.8 strength, noise scaled by 1 + strength, texture frequency by
  /// 1 + strength / 2, and the ellipse and rounded-rectangle families swapped.
  /// strength = 1 inverts polarity at gain 0.8 and doubles the noise.
  static ShapeDomain shifted(double strength = 1.0);
  static ShapeDomain by_name(const std::string& name, double strength = 1.0);
};

struct Sample {
  Tensor image;  // [1, 1, H, W]
  LabelMap mask;
};

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  /// Number of images containing each class.
  std::map<int, std::size_t> class_counts() const;
};

/// Draws `n_images` images, each with one to three distinct classes from
/// `classes` placed at random poses.
Dataset generate_samples(const ShapeDomain& domain, std::size_t n_images, const std::vector<int>& classes,
                         std::uint64_t seed);

/// Writes images/ and masks/ as NDT1 files plus manifest.tsv
/// (image_path TAB mask_path TAB class_ids-csv), paths relative to `out_dir`.
void generate_dataset(const ShapeDomain& domain, std::size_t n_images, const std::vector<int>& classes,
                      std::uint64_t seed, const std::filesystem::path& out_dir);

void save_dataset(const Dataset& data, const std::filesystem::path& out_dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// A read-only window onto a dataset: the image indices it may draw from and
/// the classes its episodes may target.
struct DatasetView {
  std::shared_ptr<const Dataset> data;
  std::vector<std::size_t> indices;
  std::vector<int> classes;

  /// Indices within `indices` whose mask contains `class_id`.
  std::vector<std::size_t> images_with(int class_id) const;
};

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  // remainder is test
};

struct SplitOptions {
  SplitFractions fractions;
  std::size_t test_images_per_class = 500;
  std::uint64_t seed = 0;
};

struct TrainTestSplit {
  DatasetView train;
  DatasetView val;
  DatasetView test;
};

/// Partitions images by index into train/val/test, then restricts the train
/// view to images containing no novel class and the test view to at most
/// `test_images_per_class` random images per novel class.
TrainTestSplit split_train_test(std::shared_ptr<const Dataset> data, const std::vector<int>& base_classes,
                                const std::vector<int>& novel_classes, const SplitOptions& options = {});

/// A view over every image of `data`, targeting `classes` (cross-domain test pools).
DatasetView full_view(std::shared_ptr<const Dataset> data, const std::vector<int>& classes);

/// Samples an N-way K-shot episode with `n_query` query images from classes
/// drawn out of `view.classes`. Images are drawn without replacement; draws
/// whose mask lacks the class are retried up to 100 times.
Episode sample_episode(const DatasetView& view, std::size_t n_way, std::size_t k_shot, std::size_t n_query,
                       std::uint64_t seed);

}  // namespace pnode
