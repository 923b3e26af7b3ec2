#include "pnode/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <numbers>
#include <set>
#include <sstream>

#include "pnode/random.hpp"
#include "pnode/serialize.hpp"

namespace pnode {

std::size_t LabelMap::count(int label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

std::vector<int> LabelMap::classes() const {
  std::set<int> seen;
  for (int l : labels)
    if (l != 0) seen.insert(l);
  return {seen.begin(), seen.end()};
}

Tensor LabelMap::indicator(int label) const {
  std::vector<double> v(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) v[i] = labels[i] == label ? 1.0 : 0.0;
  return Tensor({height, width}, std::move(v));
}

Tensor LabelMap::to_tensor() const {
  return Tensor({height, width}, std::vector<double>(labels.begin(), labels.end()));
}

LabelMap LabelMap::from_tensor(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("LabelMap: expected rank-2 tensor, got " + shape_string(t.shape()));
  LabelMap m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    const double v = t[i];
    if (v != std::floor(v) || v < 0.0) throw ValidationError("LabelMap: non-integer or negative label");
    m.labels[i] = static_cast<int>(v);
  }
  return m;
}

void Episode::validate() const {
  if (class_set.empty()) throw ValidationError("episode: empty class set");
  if (support.size() != class_set.size()) {
    throw ValidationError("episode: support groups do not match class set");
  }
  const std::size_t k = shots();
  if (k == 0) throw ValidationError("episode: no support shots");
  for (std::size_t i = 0; i < class_set.size(); ++i) {
    if (support[i].size() != k) throw ValidationError("episode: classes have unequal shot counts");
    for (const auto& shot : support[i]) {
      if (!shot.mask.contains(class_set[i])) {
        throw ValidationError("episode: support mask lacks its class " + std::to_string(class_set[i]));
      }
    }
  }
  if (query.empty()) throw ValidationError("episode: no query images");
}

std::string to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::ellipse: return "ellipse";
    case ShapeFamily::rounded_rectangle: return "rounded-rectangle";
    case ShapeFamily::crescent: return "crescent";
  }
  return "?";
}

const ClassAppearance& ShapeDomain::appearance(int class_id) const {
  for (const auto& c : classes)
    if (c.class_id == class_id) return c;
  throw ValidationError("domain '" + domain_id + "' has no class " + std::to_string(class_id));
}

ShapeDomain ShapeDomain::source() {
  ShapeDomain d;
  d.domain_id = "source";
  d.classes = {
      {1, ShapeFamily::ellipse, 0.48, 0.56},
      {2, ShapeFamily::crescent, 0.54, 0.62},
      {3, ShapeFamily::rounded_rectangle, 0.46, 0.54},
  };
  return d;
}

ShapeDomain ShapeDomain::shifted(double strength) {
  ShapeDomain d = source();
  d.domain_id = "shifted";
  // gain 1 at strength 0, -0.8 at strength 1 (polarity flip about mid-gray)
  const double a = 1.0 - 1.8 * strength, b = 0.5 * (1.0 - a);
  auto remap = [&](double& lo, double& hi) {
    lo = a * lo + b;
    hi = a * hi + b;
    if (lo > hi) std::swap(lo, hi);
  };
  for (auto& c : d.classes) remap(c.intensity_lo, c.intensity_hi);
  for (auto& c : d.classes) {
    if (c.family == ShapeFamily::ellipse) c.family = ShapeFamily::rounded_rectangle;
    else if (c.family == ShapeFamily::rounded_rectangle) c.family = ShapeFamily::ellipse;
  }
  remap(d.background_lo, d.background_hi);
  d.noise_level *= 1.0 + strength;
  d.texture_frequency *= 1.0 + 0.5 * strength;
  return d;
}

ShapeDomain ShapeDomain::by_name(const std::string& name, double strength) {
  if (name == "source") return source();
  if (name == "shifted") return shifted(strength);
  throw ValidationError("unknown domain '" + name + "' (expected source or shifted)");
}

std::map<int, std::size_t> Dataset::class_counts() const {
  std::map<int, std::size_t> counts;
  for (const auto& s : samples)
    for (int c : s.mask.classes()) ++counts[c];
  return counts;
}

namespace {

bool inside(ShapeFamily family, double u, double v) {
  switch (family) {
    case ShapeFamily::ellipse:
      return u * u + v * v <= 1.0;
    case ShapeFamily::rounded_rectangle: {
      constexpr double r = 0.35;
      if (std::abs(u) > 1.0 || std::abs(v) > 1.0) return false;
      const double du = std::max(std::abs(u) - (1.0 - r), 0.0);
      const double dv = std::max(std::abs(v) - (1.0 - r), 0.0);
      return du * du + dv * dv <= r * r;
    }
    case ShapeFamily::crescent: {
      const double bite = (u - 0.55) * (u - 0.55) + v * v;
      return u * u + v * v <= 1.0 && bite > 0.8 * 0.8;
    }
  }
  return false;
}

Sample draw_sample(const ShapeDomain& domain, const std::vector<int>& classes, Rng& rng) {
  const std::size_t h = domain.height, w = domain.width;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  std::vector<double> img(h * w);
  LabelMap mask(h, w);
  const double base = uniform(domain.background_lo, domain.background_hi);
  const double tex_angle = uniform(0.0, std::numbers::pi);
  const double tex_phase = uniform(0.0, 2.0 * std::numbers::pi);
  const double freq = 2.0 * std::numbers::pi * domain.texture_frequency / static_cast<double>(w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double s = static_cast<double>(x) * std::cos(tex_angle) + static_cast<double>(y) * std::sin(tex_angle);
      img[y * w + x] = base + 0.05 * std::sin(freq * s + tex_phase);
    }

  std::vector<int> pool = classes;
  std::shuffle(pool.begin(), pool.end(), rng);
  const std::size_t max_k = std::min<std::size_t>(3, pool.size());
  const std::size_t k = 1 + static_cast<std::size_t>(unit(rng) * static_cast<double>(max_k)) % max_k;
  const double hs = static_cast<double>(h), ws = static_cast<double>(w);
  for (std::size_t i = 0; i < k; ++i) {
    const ClassAppearance& app = domain.appearance(pool[i]);
    const double cx = uniform(0.2 * ws, 0.8 * ws), cy = uniform(0.2 * hs, 0.8 * hs);
    const double ra = uniform(0.11, 0.22) * ws, rb = uniform(0.11, 0.22) * hs;
    const double theta = uniform(0.0, std::numbers::pi);
    const double intensity = uniform(app.intensity_lo, app.intensity_hi);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        const double u = (ct * dx + st * dy) / ra, v = (-st * dx + ct * dy) / rb;
        if (inside(app.family, u, v)) {
          img[y * w + x] = intensity;
          mask.labels[y * w + x] = app.class_id;
        }
      }
  }
  std::normal_distribution<double> noise(0.0, domain.noise_level);
  for (auto& v : img) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return Sample{Tensor({1, 1, h, w}, std::move(img)), std::move(mask)};
}

std::string image_name(std::size_t i) {
  std::ostringstream os;
  os << "images/img_" << std::setw(6) << std::setfill('0') << i << ".ndt";
  return os.str();
}

std::string mask_name(std::size_t i) {
  std::ostringstream os;
  os << "masks/mask_" << std::setw(6) << std::setfill('0') << i << ".ndt";
  return os.str();
}

}  // namespace

Dataset generate_samples(const ShapeDomain& domain, std::size_t n_images, const std::vector<int>& classes,
                         std::uint64_t seed) {
  if (n_images == 0) throw ValidationError("generate_dataset: n_images must be >= 1");
  if (classes.empty()) throw ValidationError("generate_dataset: class list is empty");
  for (int c : classes) domain.appearance(c);
  Dataset data;
  data.samples.reserve(n_images);
  for (std::size_t i = 0; i < n_images; ++i) {
    Rng rng(derive_seed(seed, i));
    data.samples.push_back(draw_sample(domain, classes, rng));
  }
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "masks", ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());
  std::ofstream manifest(out_dir / "manifest.tsv");
  if (!manifest) throw IoError("cannot write " + (out_dir / "manifest.tsv").string());
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    save_ndt1(out_dir / image_name(i), s.image);
    save_ndt1(out_dir / mask_name(i), s.mask.to_tensor());
    manifest << image_name(i) << '\t' << mask_name(i) << '\t';
    const auto cls = s.mask.classes();
    for (std::size_t j = 0; j < cls.size(); ++j) manifest << (j ? "," : "") << cls[j];
    manifest << '\n';
  }
  if (!manifest) throw IoError("write failed for " + (out_dir / "manifest.tsv").string());
}

void generate_dataset(const ShapeDomain& domain, std::size_t n_images, const std::vector<int>& classes,
                      std::uint64_t seed, const std::filesystem::path& out_dir) {
  save_dataset(generate_samples(domain, n_images, classes, seed), out_dir);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.tsv";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot open dataset manifest " + manifest_path.string());
  Dataset data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string image_path, mask_path, class_csv;
    if (!std::getline(fields, image_path, '\t') || !std::getline(fields, mask_path, '\t')) {
      throw IoError(manifest_path.string() + ":" + std::to_string(line_no) + ": malformed line");
    }
    std::getline(fields, class_csv);
    Sample s{load_ndt1(dir / image_path), LabelMap::from_tensor(load_ndt1(dir / mask_path))};
    std::vector<int> listed;
    std::istringstream csv(class_csv);
    for (std::string tok; std::getline(csv, tok, ',');)
      if (!tok.empty()) listed.push_back(std::stoi(tok));
    std::sort(listed.begin(), listed.end());
    if (listed != s.mask.classes()) {
      throw IoError(manifest_path.string() + ":" + std::to_string(line_no) +
                    ": class list disagrees with mask " + mask_path);
    }
    data.samples.push_back(std::move(s));
  }
  if (data.samples.empty()) throw IoError("dataset " + dir.string() + " is empty");
  return data;
}

std::vector<std::size_t> DatasetView::images_with(int class_id) const {
  std::vector<std::size_t> out;
  for (std::size_t idx : indices)
    if (data->samples[idx].mask.contains(class_id)) out.push_back(idx);
  return out;
}

TrainTestSplit split_train_test(std::shared_ptr<const Dataset> data, const std::vector<int>& base_classes,
                                const std::vector<int>& novel_classes, const SplitOptions& options) {
  if (base_classes.empty() || novel_classes.empty()) {
    throw ValidationError("split_train_test: base and novel class sets must be non-empty");
  }
  for (int b : base_classes)
    if (std::find(novel_classes.begin(), novel_classes.end(), b) != novel_classes.end()) {
      throw ValidationError("split_train_test: class " + std::to_string(b) + " is both base and novel");
    }
  const std::size_t n = data->size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(options.seed, 0x5711));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(options.fractions.train * static_cast<double>(n));
  const auto n_val = static_cast<std::size_t>(options.fractions.val * static_cast<double>(n));

  auto has_any = [&](std::size_t idx, const std::vector<int>& cls) {
    for (int c : cls)
      if (data->samples[idx].mask.contains(c)) return true;
    return false;
  };

  TrainTestSplit split;
  split.train = {data, {}, base_classes};
  split.val = {data, {}, novel_classes};
  split.test = {data, {}, novel_classes};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = order[i];
    if (i < n_train) {
      if (!has_any(idx, novel_classes)) split.train.indices.push_back(idx);
    } else if (i < n_train + n_val) {
      if (has_any(idx, novel_classes)) split.val.indices.push_back(idx);
    } else if (has_any(idx, novel_classes)) {
      split.test.indices.push_back(idx);
    }
  }

  // cap the test pool per novel class
  // an image counts against every novel class it contains
  std::set<std::size_t> keep;
  std::map<int, std::size_t> kept;
  for (int c : novel_classes) {
    auto with = split.test.images_with(c);
    std::shuffle(with.begin(), with.end(), rng);
    for (std::size_t idx : with) {
      if (kept[c] >= options.test_images_per_class) break;
      if (keep.count(idx)) continue;
      const auto present = data->samples[idx].mask.classes();
      auto novel_here = [&](int o) { return std::find(novel_classes.begin(), novel_classes.end(), o) != novel_classes.end(); };
      bool fits = true;
      for (int o : present)
        if (novel_here(o) && kept[o] >= options.test_images_per_class) fits = false;
      if (!fits) continue;
      keep.insert(idx);
      for (int o : present)
        if (novel_here(o)) ++kept[o];
    }
  }
  split.test.indices.assign(keep.begin(), keep.end());
  std::sort(split.train.indices.begin(), split.train.indices.end());
  std::sort(split.val.indices.begin(), split.val.indices.end());
  return split;
}

DatasetView full_view(std::shared_ptr<const Dataset> data, const std::vector<int>& classes) {
  DatasetView view{std::move(data), {}, classes};
  view.indices.resize(view.data->size());
  std::iota(view.indices.begin(), view.indices.end(), 0);
  return view;
}

namespace {

LabelMap restrict_labels(const LabelMap& mask, const std::vector<int>& keep) {
  LabelMap out = mask;
  for (auto& l : out.labels)
    if (std::find(keep.begin(), keep.end(), l) == keep.end()) l = 0;
  return out;
}

}  // namespace

Episode sample_episode(const DatasetView& view, std::size_t n_way, std::size_t k_shot, std::size_t n_query,
                       std::uint64_t seed) {
  if (n_way == 0 || k_shot == 0 || n_query == 0) {
    throw ValidationError("sample_episode: N, K and N_Q must all be >= 1");
  }
  if (n_way > view.classes.size()) {
    throw ValidationError("sample_episode: " + std::to_string(n_way) + "-way episode from " +
                          std::to_string(view.classes.size()) + " classes");
  }
  constexpr std::size_t kMaxDraws = 100;
  Rng rng(seed);

  std::vector<int> pool = view.classes;
  std::shuffle(pool.begin(), pool.end(), rng);
  Episode ep;
  ep.class_set.assign(pool.begin(), pool.begin() + static_cast<long>(n_way));

  std::map<int, std::vector<std::size_t>> candidates;
  for (int c : ep.class_set) {
    candidates[c] = view.images_with(c);
    const std::size_t needed = k_shot + (n_way == 1 ? n_query : 0);
    if (candidates[c].size() < needed) {
      throw ValidationError("insufficient data for class " + std::to_string(c) + ": " +
                            std::to_string(candidates[c].size()) + " images, need " + std::to_string(needed));
    }
  }

  std::set<std::size_t> used;
  auto draw = [&](int c) -> std::size_t {
    const auto& cand = candidates[c];
    std::uniform_int_distribution<std::size_t> pick(0, cand.size() - 1);
    for (std::size_t attempt = 0; attempt < kMaxDraws; ++attempt) {
      const std::size_t idx = cand[pick(rng)];
      if (used.count(idx) || !view.data->samples[idx].mask.contains(c)) continue;
      used.insert(idx);
      return idx;
    }
    throw ValidationError("insufficient data for class " + std::to_string(c) + ": no usable image after " +
                          std::to_string(kMaxDraws) + " draws");
  };
  auto labeled = [&](std::size_t idx) {
    const Sample& s = view.data->samples[idx];
    return LabeledImage{s.image, restrict_labels(s.mask, ep.class_set)};
  };

  for (int c : ep.class_set) {
    std::vector<LabeledImage> shots;
    for (std::size_t k = 0; k < k_shot; ++k) shots.push_back(labeled(draw(c)));
    ep.support.push_back(std::move(shots));
  }
  std::uniform_int_distribution<std::size_t> which(0, n_way - 1);
  for (std::size_t q = 0; q < n_query; ++q) ep.query.push_back(labeled(draw(ep.class_set[which(rng)])));
  return ep;
}

}  // namespace pnode
