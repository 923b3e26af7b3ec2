#include "pnode/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pnode/config.hpp"
#include "pnode/ops.hpp"
#include "pnode/random.hpp"

namespace pnode {

std::string to_string(AttackFamily f) {
  switch (f) {
    case AttackFamily::fgsm: return "fgsm";
    case AttackFamily::pgd: return "pgd";
    case AttackFamily::smia: return "smia";
  }
  return "?";
}

std::string to_string(AttackTarget t) { return t == AttackTarget::support ? "support" : "query"; }

AttackFamily parse_attack_family(const std::string& s) {
  if (s == "fgsm") return AttackFamily::fgsm;
  if (s == "pgd") return AttackFamily::pgd;
  if (s == "smia") return AttackFamily::smia;
  throw ValidationError("unknown attack '" + s + "' (expected fgsm, pgd or smia)");
}

AttackTarget parse_attack_target(const std::string& s) {
  if (s == "support") return AttackTarget::support;
  if (s == "query") return AttackTarget::query;
  throw ValidationError("unknown attack target '" + s + "' (expected support or query)");
}

double AttackSpec::default_step(double epsilon, std::size_t n_iters) {
  return std::min(epsilon, 2.5 * epsilon / static_cast<double>(std::max<std::size_t>(n_iters, 1)));
}

AttackSpec AttackSpec::fgsm(double epsilon, AttackTarget target) {
  return AttackSpec{AttackFamily::fgsm, epsilon, epsilon, 1, target, 0.0, false};
}

AttackSpec AttackSpec::pgd(double epsilon, std::size_t n_iters, AttackTarget target) {
  return AttackSpec{AttackFamily::pgd, epsilon, default_step(epsilon, n_iters), n_iters, target, 0.0, true};
}

AttackSpec AttackSpec::smia(double epsilon, std::size_t n_iters, double lambda, AttackTarget target) {
  return AttackSpec{AttackFamily::smia, epsilon, default_step(epsilon, n_iters), n_iters, target, lambda, false};
}

void AttackSpec::validate() const {
  if (!(epsilon > 0.0)) throw ValidationError("attack: epsilon must be > 0");
  if (n_iters < 1) throw ValidationError("attack: n_iters must be >= 1");
  if (family == AttackFamily::fgsm && n_iters != 1) throw ValidationError("attack: fgsm takes exactly one step");
  if (!(step_size > 0.0) || step_size > epsilon) {
    throw ValidationError("attack: step_size must lie in (0, epsilon]");
  }
  if (smia_lambda < 0.0) throw ValidationError("attack: smia_lambda must be >= 0");
}

std::string AttackSpec::describe() const {
  std::ostringstream os;
  os << to_string(family) << "(eps=" << format_double(epsilon);
  if (family != AttackFamily::fgsm) os << ",iters=" << n_iters << ",step=" << format_double(step_size);
  if (family == AttackFamily::smia) os << ",lambda=" << format_double(smia_lambda);
  os << ",target=" << to_string(target) << ")";
  return os.str();
}

namespace {

std::vector<Tensor*> targets_of(Episode& ep, AttackTarget target) {
  std::vector<Tensor*> out;
  if (target == AttackTarget::support) {
    for (auto& group : ep.support)
      for (auto& shot : group) out.push_back(&shot.image);
  } else {
    for (auto& q : ep.query) out.push_back(&q.image);
  }
  return out;
}

struct Objective {
  double lambda = 0.0;  // stabilization weight; 0 means plain episode loss
};

// Gradient of  L_dev - lambda * L_sta  with respect to the `target` images of
// `current`. `cached` holds clean-support prototypes when only queries move.
std::vector<Tensor> objective_gradient(const SegModel& model, const Episode& current, AttackTarget target,
                                       const Objective& objective, const std::vector<Prototype>* cached,
                                       double* loss_out = nullptr) {
  Tape tape;
  Episode tracked = current;
  auto images = targets_of(tracked, target);
  for (Tensor* img : images) *img = tape.variable(*img);

  const bool reuse = cached && target == AttackTarget::query;
  const EpisodeOutput out =
      query_forward(model, reuse ? *cached : support_prototypes(model, tracked), tracked);
  Tensor value = out.loss;
  if (objective.lambda != 0.0) {
    Episode smoothed = current;
    for (Tensor* img : targets_of(smoothed, target)) *img = box_smooth3(*img);
    const EpisodeOutput ref =
        query_forward(model, reuse ? *cached : support_prototypes(model, smoothed), smoothed);
    Tensor stab;
    for (std::size_t q = 0; q < out.predictions.size(); ++q) {
      const Tensor l = prediction_loss(out.predictions[q], current.class_set, ref.predictions[q].hard_mask);
      stab = q == 0 ? l : add(stab, l);
    }
    stab = scale(stab, 1.0 / static_cast<double>(out.predictions.size()));
    value = axpy(value, -objective.lambda, stab);
  }
  if (loss_out) *loss_out = out.loss.item();
  tape.backward(value);
  std::vector<Tensor> grads;
  for (Tensor* img : images) grads.push_back(*img->grad());
  return grads;
}

void require_targets(const Episode& ep, AttackTarget target) {
  Episode copy = ep;
  if (targets_of(copy, target).empty()) {
    throw ValidationError("attack: episode has no " + to_string(target) + " images to perturb");
  }
}

Tensor step_and_project(const Tensor& current, const Tensor& original, const Tensor& grad, double step,
                        double epsilon) {
  std::vector<double> out(current.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double g = grad[i];
    const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
    out[i] = project_pixel(current[i] + step * s, original[i], epsilon);
  }
  return Tensor(current.shape(), std::move(out));
}

Episode iterate(const SegModel& model, const Episode& episode, const AttackSpec& spec, const Objective& objective,
                bool random_start, std::uint64_t seed) {
  spec.validate();
  require_targets(episode, spec.target);
  Episode adv = episode;
  Episode clean = episode;
  const auto originals = targets_of(clean, spec.target);
  auto moving = targets_of(adv, spec.target);

  if (random_start) {
    Rng rng(seed);
    std::uniform_real_distribution<double> offset(-spec.epsilon, spec.epsilon);
    for (std::size_t i = 0; i < moving.size(); ++i) {
      std::vector<double> v(moving[i]->numel());
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = project_pixel((*originals[i])[j] + offset(rng), (*originals[i])[j], spec.epsilon);
      }
      *moving[i] = Tensor(moving[i]->shape(), std::move(v));
    }
  }

  std::vector<Prototype> cached;
  if (spec.target == AttackTarget::query) cached = support_prototypes(model, episode);
  for (std::size_t it = 0; it < spec.n_iters; ++it) {
    const auto grads = objective_gradient(model, adv, spec.target, objective, &cached);
    for (std::size_t i = 0; i < moving.size(); ++i) {
      *moving[i] = step_and_project(*moving[i], *originals[i], grads[i], spec.step_size, spec.epsilon);
    }
  }
  return adv;
}

}  // namespace

double project_pixel(double value, double original, double epsilon) {
  double v = std::clamp(value, 0.0, 1.0);
  v = std::clamp(v, original - epsilon, original + epsilon);
  while (v - original > epsilon) v = std::nextafter(v, original);
  while (original - v > epsilon) v = std::nextafter(v, original);
  return v;
}

InputGradients input_gradients(const SegModel& model, const Episode& episode, bool wrt_support, bool wrt_query) {
  Tape tape;
  Episode tracked = episode;
  if (wrt_support)
    for (Tensor* img : targets_of(tracked, AttackTarget::support)) *img = tape.variable(*img);
  if (wrt_query)
    for (Tensor* img : targets_of(tracked, AttackTarget::query)) *img = tape.variable(*img);
  const Tensor loss = episode_loss(model, tracked);
  InputGradients out;
  out.loss = loss.item();
  if (!wrt_support && !wrt_query) return out;
  tape.backward(loss);
  if (wrt_support) {
    for (const auto& group : tracked.support) {
      std::vector<Tensor> g;
      for (const auto& shot : group) g.push_back(*shot.image.grad());
      out.support.push_back(std::move(g));
    }
  }
  if (wrt_query)
    for (const auto& q : tracked.query) out.query.push_back(*q.image.grad());
  return out;
}

std::vector<Tensor> fgsm_perturbation(const SegModel& model, const Episode& episode, const AttackSpec& spec) {
  spec.validate();
  require_targets(episode, spec.target);
  const auto grads = objective_gradient(model, episode, spec.target, Objective{}, nullptr);
  std::vector<Tensor> out;
  for (const auto& g : grads) {
    std::vector<double> p(g.numel());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = g[i] > 0.0 ? spec.epsilon : (g[i] < 0.0 ? -spec.epsilon : 0.0);
    out.emplace_back(g.shape(), std::move(p));
  }
  return out;
}

Episode fgsm_attack(const SegModel& model, const Episode& episode, const AttackSpec& spec) {
  if (spec.family != AttackFamily::fgsm) throw ValidationError("fgsm_attack: spec family is " + to_string(spec.family));
  const auto perturbation = fgsm_perturbation(model, episode, spec);
  Episode adv = episode;
  auto images = targets_of(adv, spec.target);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor& orig = *images[i];
    std::vector<double> v(orig.numel());
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = project_pixel(orig[j] + perturbation[i][j], orig[j], spec.epsilon);
    *images[i] = Tensor(orig.shape(), std::move(v));
  }
  return adv;
}

Episode pgd_attack(const SegModel& model, const Episode& episode, const AttackSpec& spec, std::uint64_t seed) {
  if (spec.family != AttackFamily::pgd) throw ValidationError("pgd_attack: spec family is " + to_string(spec.family));
  return iterate(model, episode, spec, Objective{}, spec.random_start, seed);
}

Episode smia_attack(const SegModel& model, const Episode& episode, const AttackSpec& spec, std::uint64_t seed) {
  if (spec.family != AttackFamily::smia) throw ValidationError("smia_attack: spec family is " + to_string(spec.family));
  return iterate(model, episode, spec, Objective{spec.smia_lambda}, false, seed);
}

Episode attack_episode(const SegModel& model, const Episode& episode, const AttackSpec& spec, std::uint64_t seed) {
  switch (spec.family) {
    case AttackFamily::fgsm: return fgsm_attack(model, episode, spec);
    case AttackFamily::pgd: return pgd_attack(model, episode, spec, seed);
    case AttackFamily::smia: return smia_attack(model, episode, spec, seed);
  }
  throw ValidationError("attack_episode: unknown family");
}

Tensor box_smooth3(const Tensor& image) {
  if (image.rank() != 4) throw ShapeError("box_smooth3: expected [N,C,H,W], got " + shape_string(image.shape()));
  const std::size_t planes = image.dim(0) * image.dim(1), h = image.dim(2), w = image.dim(3);
  std::vector<double> out(image.numel());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        int n = 0;
        for (std::size_t yy = y ? y - 1 : 0; yy <= std::min(y + 1, h - 1); ++yy)
          for (std::size_t xx = x ? x - 1 : 0; xx <= std::min(x + 1, w - 1); ++xx) {
            acc += image[(p * h + yy) * w + xx];
            ++n;
          }
        out[(p * h + y) * w + x] = acc / n;
      }
  return Tensor(image.shape(), std::move(out));
}

}  // namespace pnode
