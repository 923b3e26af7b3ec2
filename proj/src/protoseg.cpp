#include "pnode/protoseg.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <map>

#include "pnode/config.hpp"
#include "pnode/ops.hpp"
#include "pnode/random.hpp"
#include "pnode/serialize.hpp"

namespace pnode {

void SegModelConfig::validate() const {
  if (in_channels == 0 || feature_dim == 0 || ode_hidden == 0) {
    throw ValidationError("model config: channel counts must be >= 1");
  }
  if (image_height % 4 || image_width % 4 || image_height == 0 || image_width == 0) {
    throw ValidationError("model config: image extents must be positive multiples of 4");
  }
  if (!(cosine_scale > 0.0)) throw ValidationError("model config: cosine_scale must be > 0");
  ode.validate();
}

SegModel SegModel::create(const SegModelConfig& config, std::uint64_t seed) {
  config.validate();
  SegModel m;
  m.config = config;
  Rng enc_rng(derive_seed(seed, 1));
  const std::size_t d = config.feature_dim;
  m.encoder[0] = {he_normal_kernel(d, config.in_channels, 3, enc_rng), Tensor::zeros({d})};
  m.encoder[1] = {he_normal_kernel(d, d, 3, enc_rng), Tensor::zeros({d})};
  m.encoder[2] = {he_normal_kernel(d, d, 3, enc_rng), Tensor::zeros({d})};
  Rng dyn_rng(derive_seed(seed, 2));
  m.dyn = DynamicsNet::random(d, config.ode_hidden, config.ode_activation, dyn_rng);
  return m;
}

std::vector<std::pair<std::string, const Tensor*>> SegModel::named_parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    out.emplace_back("encoder." + std::to_string(i) + ".kernel", &encoder[i].kernel);
    out.emplace_back("encoder." + std::to_string(i) + ".bias", &encoder[i].bias);
  }
  for (std::size_t i = 0; i < dyn.layers.size(); ++i) {
    out.emplace_back("dyn." + std::to_string(i) + ".kernel", &dyn.layers[i].kernel);
    out.emplace_back("dyn." + std::to_string(i) + ".bias", &dyn.layers[i].bias);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> SegModel::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, p] : std::as_const(*this).named_parameters()) {
    out.emplace_back(name, const_cast<Tensor*>(p));
  }
  return out;
}

SegModel SegModel::on_tape(Tape& tape) const {
  SegModel bound = *this;
  for (auto& [name, p] : bound.named_parameters()) *p = tape.variable(*p);
  return bound;
}

std::size_t SegModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : named_parameters()) n += p->numel();
  return n;
}

std::uint64_t SegModel::parameter_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, p] : named_parameters()) {
    for (double v : p->data()) {
      h ^= std::bit_cast<std::uint64_t>(v);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

Tensor encode(const SegModel& model, const Tensor& image) {
  const auto& cfg = model.config;
  if (image.rank() != 4 || image.dim(1) != cfg.in_channels || image.dim(2) != cfg.image_height ||
      image.dim(3) != cfg.image_width) {
    throw ShapeError("encode: expected image [B," + std::to_string(cfg.in_channels) + "," +
                     std::to_string(cfg.image_height) + "," + std::to_string(cfg.image_width) + "], got " +
                     shape_string(image.shape()));
  }
  Tensor x = image;
  for (std::size_t i = 0; i < model.encoder.size(); ++i) {
    const auto& layer = model.encoder[i];
    x = relu(conv2d(x, layer.kernel, layer.bias, layer.padding()));
    if (i + 1 < model.encoder.size()) x = avg_pool2(x);
  }
  return x;
}

Tensor extract_features(const SegModel& model, const Tensor& image) {
  Tensor z0 = encode(model, image);
  if (!model.config.use_ode) return z0;
  return ode_forward(z0, model.dyn, model.config.ode);
}

namespace {

void check_masks(const Tensor& features, const std::vector<LabelMap>& masks, const char* op) {
  if (features.rank() != 4) throw ShapeError(std::string(op) + ": features must be [K,d,H,W]");
  if (masks.size() != features.dim(0)) {
    throw ShapeError(std::string(op) + ": " + std::to_string(masks.size()) + " masks for " +
                     std::to_string(features.dim(0)) + " feature maps");
  }
  for (const auto& m : masks) {
    if (m.height != features.dim(2) || m.width != features.dim(3)) {
      throw ShapeError(std::string(op) + ": mask " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                       " does not match feature resolution " + shape_string(features.shape()));
    }
  }
}

}  // namespace

Prototype masked_average_pool(const Tensor& features, const std::vector<LabelMap>& masks, int class_id) {
  check_masks(features, masks, "masked_average_pool");
  const std::size_t hw = features.dim(2) * features.dim(3);
  std::size_t shots_with_class = 0;
  for (const auto& m : masks)
    if (m.contains(class_id)) ++shots_with_class;
  if (shots_with_class == 0) {
    throw ValidationError("masked_average_pool: empty foreground for class " + std::to_string(class_id));
  }
  std::vector<double> weights(masks.size() * hw, 0.0);
  for (std::size_t k = 0; k < masks.size(); ++k) {
    const std::size_t count = masks[k].count(class_id);
    if (count == 0) continue;
    const double w = 1.0 / (static_cast<double>(count) * static_cast<double>(shots_with_class));
    for (std::size_t p = 0; p < hw; ++p)
      if (masks[k].labels[p] == class_id) weights[k * hw + p] = w;
  }
  Tensor wt({masks.size(), features.dim(2), features.dim(3)}, std::move(weights));
  return Prototype{class_id, spatial_weighted_sum(features, wt)};
}

Prototype background_prototype(const Tensor& features, const std::vector<LabelMap>& masks,
                               const std::vector<int>& foreground) {
  check_masks(features, masks, "background_prototype");
  const std::size_t hw = features.dim(2) * features.dim(3);
  auto is_fg = [&](int l) { return std::find(foreground.begin(), foreground.end(), l) != foreground.end(); };
  std::size_t total = 0;
  for (const auto& m : masks)
    for (int l : m.labels)
      if (!is_fg(l)) ++total;
  if (total == 0) throw ValidationError("background_prototype: no background pixels in any shot");
  const double w = 1.0 / static_cast<double>(total);
  std::vector<double> weights(masks.size() * hw, 0.0);
  for (std::size_t k = 0; k < masks.size(); ++k)
    for (std::size_t p = 0; p < hw; ++p)
      if (!is_fg(masks[k].labels[p])) weights[k * hw + p] = w;
  Tensor wt({masks.size(), features.dim(2), features.dim(3)}, std::move(weights));
  return Prototype{0, spatial_weighted_sum(features, wt)};
}

std::vector<Prototype> support_prototypes(const SegModel& model, const Episode& episode) {
  episode.validate();
  const std::size_t h = model.config.image_height, w = model.config.image_width;
  std::vector<Tensor> upsampled;
  std::vector<LabelMap> all_masks;
  std::vector<Prototype> prototypes(1);
  for (std::size_t i = 0; i < episode.ways(); ++i) {
    std::vector<Tensor> images;
    std::vector<LabelMap> masks;
    for (const auto& shot : episode.support[i]) {
      images.push_back(shot.image);
      masks.push_back(shot.mask);
    }
    const Tensor batch = images.size() == 1 ? images.front() : concat(images, 0);
    const Tensor feats = bilinear_resize(extract_features(model, batch), h, w);
    prototypes.push_back(masked_average_pool(feats, masks, episode.class_set[i]));
    upsampled.push_back(feats);
    all_masks.insert(all_masks.end(), masks.begin(), masks.end());
  }
  const Tensor everything = upsampled.size() == 1 ? upsampled.front() : concat(upsampled, 0);
  prototypes[0] = background_prototype(everything, all_masks, episode.class_set);
  return prototypes;
}

Prediction predict_query(const SegModel& model, const std::vector<Prototype>& prototypes,
                         const Tensor& query_features, std::pair<std::size_t, std::size_t> out_size) {
  if (prototypes.empty() || prototypes.front().class_id != 0) {
    throw ValidationError("predict_query: prototype list must start with the background prototype");
  }
  if (query_features.rank() != 4 || query_features.dim(0) != 1) {
    throw ShapeError("predict_query: query features must be [1,d,h,w], got " +
                     shape_string(query_features.shape()));
  }
  const std::size_t d = query_features.dim(1), h = query_features.dim(2), w = query_features.dim(3);
  for (const auto& p : prototypes) {
    if (p.vector.rank() != 1 || p.vector.dim(0) != d) {
      throw ShapeError("predict_query: prototype of class " + std::to_string(p.class_id) + " has shape " +
                       shape_string(p.vector.shape()) + ", features have d = " + std::to_string(d));
    }
  }
  const Tensor pixels = transpose(reshape(query_features, {d, h * w}));
  std::vector<Tensor> rows;
  for (const auto& p : prototypes) rows.push_back(reshape(cosine_similarity(pixels, p.vector), {1, h * w}));
  const std::size_t n = prototypes.size();
  const Tensor logits = scale(concat(rows, 0), model.config.cosine_scale);
  const Tensor probs = reshape(softmax(logits, 0), {1, n, h, w});
  const auto [out_h, out_w] = out_size;
  const Tensor prob_map = reshape(bilinear_resize(probs, out_h, out_w), {n, out_h, out_w});

  LabelMap hard(out_h, out_w);
  const auto pv = prob_map.data();
  const std::size_t hw = out_h * out_w;
  for (std::size_t p = 0; p < hw; ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c)
      if (pv[c * hw + p] > pv[best * hw + p]) best = c;
    hard.labels[p] = prototypes[best].class_id;
  }
  return Prediction{prob_map, std::move(hard)};
}

Tensor prediction_loss(const Prediction& prediction, const std::vector<int>& class_set, const LabelMap& truth) {
  const std::size_t h = truth.height, w = truth.width;
  if (prediction.prob_map.dim(0) != class_set.size() + 1 || prediction.prob_map.dim(1) != h ||
      prediction.prob_map.dim(2) != w) {
    throw ShapeError("prediction_loss: probability map " + shape_string(prediction.prob_map.shape()) +
                     " does not match " + std::to_string(class_set.size()) + " classes at " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  Tensor total;
  for (std::size_t i = 0; i < class_set.size(); ++i) {
    const Tensor fg = reshape(slice(prediction.prob_map, 0, i + 1, i + 2), {h, w});
    const Tensor l = bce_loss(fg, truth.indicator(class_set[i]));
    total = i == 0 ? l : add(total, l);
  }
  return class_set.size() == 1 ? total : scale(total, 1.0 / static_cast<double>(class_set.size()));
}

EpisodeOutput query_forward(const SegModel& model, const std::vector<Prototype>& prototypes,
                            const Episode& episode) {
  EpisodeOutput out;
  const std::pair<std::size_t, std::size_t> size{model.config.image_height, model.config.image_width};
  for (std::size_t q = 0; q < episode.query.size(); ++q) {
    const auto& query = episode.query[q];
    Prediction pred = predict_query(model, prototypes, extract_features(model, query.image), size);
    const Tensor l = prediction_loss(pred, episode.class_set, query.mask);
    out.loss = q == 0 ? l : add(out.loss, l);
    out.predictions.push_back(std::move(pred));
  }
  if (episode.query.size() > 1) out.loss = scale(out.loss, 1.0 / static_cast<double>(episode.query.size()));
  return out;
}

EpisodeOutput episode_forward(const SegModel& model, const Episode& episode) {
  return query_forward(model, support_prototypes(model, episode), episode);
}

Tensor episode_loss(const SegModel& model, const Episode& episode) { return episode_forward(model, episode).loss; }

namespace {

constexpr char kCheckpointMagic[6] = {'P', 'N', 'O', 'D', 'E', '1'};

}  // namespace

SegModelConfig model_config_from(const Config& c) {
  SegModelConfig m;
  m.in_channels = c.get_size("model.in_channels", m.in_channels);
  m.image_height = c.get_size("model.image_height", m.image_height);
  m.image_width = c.get_size("model.image_width", m.image_width);
  m.feature_dim = c.get_size("model.feature_dim", m.feature_dim);
  m.ode_hidden = c.get_size("model.ode_hidden", m.ode_hidden);
  m.ode_activation = parse_activation(c.get_string("model.ode_activation", to_string(m.ode_activation)));
  m.use_ode = c.get_bool("model.use_ode", m.use_ode);
  m.cosine_scale = c.get_double("model.cosine_scale", m.cosine_scale);
  m.ode.terminal_time = c.get_double("ode.terminal_time", m.ode.terminal_time);
  m.ode.n_steps = c.get_size("ode.steps", m.ode.n_steps);
  m.ode.scheme = parse_scheme(c.get_string("ode.scheme", to_string(m.ode.scheme)));
  return m;
}

std::string config_echo(const SegModelConfig& m) {
  Config c;
  c.set("model.in_channels", std::to_string(m.in_channels));
  c.set("model.image_height", std::to_string(m.image_height));
  c.set("model.image_width", std::to_string(m.image_width));
  c.set("model.feature_dim", std::to_string(m.feature_dim));
  c.set("model.ode_hidden", std::to_string(m.ode_hidden));
  c.set("model.ode_activation", to_string(m.ode_activation));
  c.set("model.use_ode", m.use_ode ? "true" : "false");
  c.set("model.cosine_scale", format_double(m.cosine_scale));
  c.set("ode.terminal_time", format_double(m.ode.terminal_time));
  c.set("ode.steps", std::to_string(m.ode.n_steps));
  c.set("ode.scheme", to_string(m.ode.scheme));
  return c.echo();
}

void save_checkpoint(const std::filesystem::path& path, const SegModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint " + path.string() + " for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::string echo = config_echo(model.config);
  write_u32(out, static_cast<std::uint32_t>(echo.size()));
  out.write(echo.data(), static_cast<std::streamsize>(echo.size()));
  const auto params = model.named_parameters();
  write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_ndt1(out, *tensor);
  }
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

SegModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + sizeof(magic), kCheckpointMagic)) {
    throw IoError(path.string() + ": not a PNODE1 checkpoint");
  }
  auto read_string = [&](std::size_t limit) {
    const std::uint32_t len = read_u32(in);
    if (len > limit) throw IoError(path.string() + ": corrupt string length");
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw IoError(path.string() + ": truncated");
    return s;
  };
  const Config echo = Config::parse(read_string(1 << 20), path.string());
  const SegModelConfig config = model_config_from(echo);
  std::map<std::string, Tensor> tensors;
  const std::uint32_t count = read_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_string(4096);
    tensors[name] = read_ndt1(in);
  }
  SegModel model = SegModel::create(config, 0);
  for (auto& [name, p] : model.named_parameters()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError(path.string() + ": missing tensor '" + name + "'");
    if (it->second.shape() != p->shape()) {
      throw IoError(path.string() + ": tensor '" + name + "' has shape " + shape_string(it->second.shape()) +
                    ", expected " + shape_string(p->shape()));
    }
    *p = it->second;
  }
  model.dyn.validate();
  return model;
}

}  // namespace pnode
