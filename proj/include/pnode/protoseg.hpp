#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pnode/episodes.hpp"
#include "pnode/ode.hpp"
#include "pnode/tensor.hpp"

namespace pnode {

class Config;

struct SegModelConfig {
  std::size_t in_channels = 1;
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  std::size_t feature_dim = 16;  // d
  std::size_t ode_hidden = 8;
  Activation ode_activation = Activation::tanh;
  OdeConfig ode;
  bool use_ode = true;
  double cosine_scale = 20.0;

  std::size_t feature_height() const { return image_height / 4; }
  std::size_t feature_width() const { return image_width / 4; }
  void validate() const;
};

/// Prototypical segmentation network: conv encoder f_theta, optional
/// Neural-ODE refinement, cosine scoring against masked-average prototypes.
struct SegModel {
  SegModelConfig config;
  std::array<ConvLayer, 3> encoder;
  DynamicsNet dyn;

  static SegModel create(const SegModelConfig& config, std::uint64_t seed);

  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;
  std::vector<std::pair<std::string, Tensor*>> named_parameters();

  /// Copy whose parameters are leaves on `tape`.
  SegModel on_tape(Tape& tape) const;

  std::size_t parameter_count() const;
  /// Order-dependent hash of every parameter bit pattern.
  std::uint64_t parameter_checksum() const;
};

struct Prototype {
  int class_id = 0;
  Tensor vector;  // [d]
};

struct Prediction {
  Tensor prob_map;  // [n_classes + 1, H, W]; channel 0 is background
  LabelMap hard_mask;  // class ids, argmax with ties to the lower channel
};

/// Z(0) = f_theta(image) for image [B, Cin, H, W]; returns [B, d, H/4, W/4].
Tensor encode(const SegModel& model, const Tensor& image);

/// Z(T): encode followed by the ODE block when model.config.use_ode.
Tensor extract_features(const SegModel& model, const Tensor& image);

/// Mean over shots of the per-shot masked spatial average of features
/// [K, d, H, W] where masks[k] == class_id. Shots without the class are
/// skipped; throws if no shot has it.
Prototype masked_average_pool(const Tensor& features, const std::vector<LabelMap>& masks, int class_id);

/// Mean feature over every pixel (all shots pooled) not labeled with a
/// foreground class; class_id 0.
Prototype background_prototype(const Tensor& features, const std::vector<LabelMap>& masks,
                               const std::vector<int>& foreground);

/// Background prototype followed by one prototype per episode class.
std::vector<Prototype> support_prototypes(const SegModel& model, const Episode& episode);

/// Scores query features [1, d, h, w] against the prototypes (background
/// first), softmax over classes, resized to out_size.
Prediction predict_query(const SegModel& model, const std::vector<Prototype>& prototypes,
                         const Tensor& query_features, std::pair<std::size_t, std::size_t> out_size);

/// One-vs-rest BCE of each foreground channel against its binary ground
/// truth, averaged over classes.
Tensor prediction_loss(const Prediction& prediction, const std::vector<int>& class_set, const LabelMap& truth);

struct EpisodeOutput {
  Tensor loss;
  std::vector<Prediction> predictions;  // one per query image
};

/// Full forward pass for `episode` given precomputed prototypes.
EpisodeOutput query_forward(const SegModel& model, const std::vector<Prototype>& prototypes,
                            const Episode& episode);

EpisodeOutput episode_forward(const SegModel& model, const Episode& episode);
Tensor episode_loss(const SegModel& model, const Episode& episode);

void save_checkpoint(const std::filesystem::path& path, const SegModel& model);
SegModel load_checkpoint(const std::filesystem::path& path);

std::string config_echo(const SegModelConfig& config);
/// Reads the model.* and ode.* keys, defaulting absent ones.
SegModelConfig model_config_from(const Config& config);

}  // namespace pnode
