#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pnode/episodes.hpp"
#include "pnode/protoseg.hpp"

namespace pnode {

enum class AttackFamily { fgsm, pgd, smia };
enum class AttackTarget { support, query };

std::string to_string(AttackFamily f);
std::string to_string(AttackTarget t);
AttackFamily parse_attack_family(const std::string& s);
AttackTarget parse_attack_target(const std::string& s);

/// l_inf attack budget and schedule. Images live in [0, 1].
struct AttackSpec {
  AttackFamily family = AttackFamily::fgsm;
  double epsilon = 0.02;
  double step_size = 0.02;
  std::size_t n_iters = 1;
  AttackTarget target = AttackTarget::query;
  double smia_lambda = 1.0;
  bool random_start = true;  // pgd only

  /// Step size min(eps, 2.5 * eps / n_iters).
  static double default_step(double epsilon, std::size_t n_iters);
  static AttackSpec fgsm(double epsilon, AttackTarget target = AttackTarget::query);
  static AttackSpec pgd(double epsilon, std::size_t n_iters, AttackTarget target = AttackTarget::query);
  static AttackSpec smia(double epsilon, std::size_t n_iters, double lambda = 1.0,
                         AttackTarget target = AttackTarget::query);

  void validate() const;
  /// e.g. "pgd(eps=0.01,iters=10)"
  std::string describe() const;
};

/// Gradients of the episode loss with respect to the requested image sets.
struct InputGradients {
  double loss = 0.0;
  std::vector<std::vector<Tensor>> support;  // empty unless requested
  std::vector<Tensor> query;                 // empty unless requested
};

/// One backward pass through the full episode forward; model parameters are
/// treated as constants.
InputGradients input_gradients(const SegModel& model, const Episode& episode, bool wrt_support, bool wrt_query);

/// eps * sign(grad) for every targeted image, before any clipping.
std::vector<Tensor> fgsm_perturbation(const SegModel& model, const Episode& episode, const AttackSpec& spec);

/// clip to [0,1], then to the eps-ball around `original`, with the last-ulp
/// correction that keeps |result - original| <= eps in floating point.
double project_pixel(double value, double original, double epsilon);

Episode fgsm_attack(const SegModel& model, const Episode& episode, const AttackSpec& spec);
Episode pgd_attack(const SegModel& model, const Episode& episode, const AttackSpec& spec, std::uint64_t seed);
Episode smia_attack(const SegModel& model, const Episode& episode, const AttackSpec& spec, std::uint64_t seed);

/// Dispatches on spec.family.
Episode attack_episode(const SegModel& model, const Episode& episode, const AttackSpec& spec, std::uint64_t seed);

/// 3x3 box filter over in-bounds neighbours.
Tensor box_smooth3(const Tensor& image);

}  // namespace pnode
