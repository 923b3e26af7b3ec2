#include <gtest/gtest.h>

#include <cmath>

#include "pnode/attacks.hpp"

using namespace pnode;

namespace {

struct Fixture {
  SegModel model;
  DatasetView view;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    SegModelConfig mc;
    auto data = std::make_shared<const Dataset>(generate_samples(ShapeDomain::source(), 30, {1, 2}, 21));
    return Fixture{SegModel::create(mc, 21), full_view(data, {1, 2})};
  }();
  return f;
}

Episode episode(std::uint64_t seed, std::size_t k = 1) { return sample_episode(fixture().view, 1, k, 1, seed); }

std::vector<const LabeledImage*> images(const Episode& ep, AttackTarget t) {
  std::vector<const LabeledImage*> out;
  if (t == AttackTarget::support) {
    for (const auto& g : ep.support)
      for (const auto& s : g) out.push_back(&s);
  } else {
    for (const auto& q : ep.query) out.push_back(&q);
  }
  return out;
}

AttackTarget other(AttackTarget t) { return t == AttackTarget::query ? AttackTarget::support : AttackTarget::query; }

// Every targeted pixel within eps and [0,1]; untargeted images and all masks bit-identical.
void expect_valid(const Episode& clean, const Episode& adv, const AttackSpec& spec) {
  const auto a = images(clean, spec.target), b = images(adv, spec.target);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t p = 0; p < a[i]->image.numel(); ++p) {
      EXPECT_LE(std::abs(b[i]->image[p] - a[i]->image[p]), spec.epsilon);
      EXPECT_GE(b[i]->image[p], 0.0);
      EXPECT_LE(b[i]->image[p], 1.0);
    }
    EXPECT_EQ(a[i]->mask, b[i]->mask);
  }
  const auto c = images(clean, other(spec.target)), d = images(adv, other(spec.target));
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_TRUE(c[i]->image.identical(d[i]->image));
    EXPECT_EQ(c[i]->mask, d[i]->mask);
  }
}

}  // namespace

TEST(AttackSpec, DefaultsAndValidation) {
  EXPECT_DOUBLE_EQ(AttackSpec::pgd(0.01, 10).step_size, 0.0025);
  EXPECT_DOUBLE_EQ(AttackSpec::pgd(0.01, 1).step_size, 0.01);
  EXPECT_EQ(AttackSpec::fgsm(0.02).n_iters, 1u);
  AttackSpec bad = AttackSpec::fgsm(0.02);
  bad.n_iters = 3;
  EXPECT_THROW(bad.validate(), ValidationError);
  EXPECT_THROW(AttackSpec::pgd(0.0, 10).validate(), ValidationError);
  AttackSpec big_step = AttackSpec::pgd(0.01, 10);
  big_step.step_size = 0.02;
  EXPECT_THROW(big_step.validate(), ValidationError);
  EXPECT_THROW(AttackSpec::smia(0.04, 10, -1.0).validate(), ValidationError);
  EXPECT_EQ(parse_attack_family("pgd"), AttackFamily::pgd);
  EXPECT_THROW(parse_attack_target("both"), ValidationError);
}

TEST(ProjectPixel, StaysInBoxAndBall) {
  EXPECT_DOUBLE_EQ(project_pixel(1.3, 0.99, 0.02), 1.0);
  EXPECT_DOUBLE_EQ(project_pixel(-0.1, 0.01, 0.02), 0.0);
  EXPECT_DOUBLE_EQ(project_pixel(0.7, 0.5, 0.1), 0.6);
  for (double orig : {0.1, 0.3, 0.7, 0.123456789}) {
    for (double eps : {0.01, 0.02, 0.04, 0.025}) {
      EXPECT_LE(std::abs(project_pixel(orig + 5 * eps, orig, eps) - orig), eps);
      EXPECT_LE(std::abs(project_pixel(orig - 5 * eps, orig, eps) - orig), eps);
    }
  }
}

TEST(Fgsm, PerturbationIsTernary) {
  const Episode ep = episode(1);
  for (AttackTarget t : {AttackTarget::query, AttackTarget::support}) {
    const auto deltas = fgsm_perturbation(fixture().model, ep, AttackSpec::fgsm(0.02, t));
    ASSERT_FALSE(deltas.empty());
    std::size_t nonzero = 0;
    for (const auto& d : deltas)
      for (double v : d.data()) {
        EXPECT_TRUE(v == 0.0 || v == 0.02 || v == -0.02) << v;
        nonzero += v != 0.0;
      }
    EXPECT_GT(nonzero, 0u);
  }
}

TEST(Attacks, BoundsIsolationAndMasks) {
  const std::vector<AttackSpec> specs{AttackSpec::fgsm(0.02), AttackSpec::pgd(0.01, 3), AttackSpec::smia(0.04, 3),
                                      AttackSpec::fgsm(0.02, AttackTarget::support),
                                      AttackSpec::pgd(0.01, 3, AttackTarget::support),
                                      AttackSpec::smia(0.04, 3, 1.0, AttackTarget::support)};
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Episode ep = episode(s, 2);
    for (const auto& spec : specs) {
      const Episode adv = attack_episode(fixture().model, ep, spec, s);
      expect_valid(ep, adv, spec);
    }
  }
}

TEST(Pgd, SingleStepWithoutRandomStartEqualsFgsm) {
  const Episode ep = episode(2);
  AttackSpec pgd = AttackSpec::pgd(0.02, 1);
  pgd.random_start = false;
  const Episode a = pgd_attack(fixture().model, ep, pgd, 0);
  const Episode b = fgsm_attack(fixture().model, ep, AttackSpec::fgsm(0.02));
  EXPECT_TRUE(a.query.front().image.identical(b.query.front().image));
}

TEST(Smia, ZeroLambdaEqualsPgdWithoutRandomStart) {
  const Episode ep = episode(3);
  AttackSpec pgd = AttackSpec::pgd(0.04, 4);
  pgd.random_start = false;
  const AttackSpec smia = AttackSpec::smia(0.04, 4, 0.0);
  ASSERT_DOUBLE_EQ(pgd.step_size, smia.step_size);
  EXPECT_TRUE(pgd_attack(fixture().model, ep, pgd, 0)
                  .query.front()
                  .image.identical(smia_attack(fixture().model, ep, smia, 0).query.front().image));
}

TEST(Attacks, SeedDeterminism) {
  const Episode ep = episode(4);
  const AttackSpec spec = AttackSpec::pgd(0.01, 3);
  EXPECT_TRUE(pgd_attack(fixture().model, ep, spec, 5)
                  .query.front()
                  .image.identical(pgd_attack(fixture().model, ep, spec, 5).query.front().image));
  EXPECT_FALSE(pgd_attack(fixture().model, ep, spec, 5)
                   .query.front()
                   .image.identical(pgd_attack(fixture().model, ep, spec, 6).query.front().image));
}

TEST(Attacks, ZeroGradientModelLeavesImagesUnchanged) {
  SegModel zero = fixture().model;
  for (auto& [name, p] : zero.named_parameters()) *p = Tensor::zeros(p->shape());
  const Episode ep = episode(5);
  const auto g = input_gradients(zero, ep, true, true);
  for (const auto& q : g.query)
    for (double v : q.data()) EXPECT_EQ(v, 0.0);
  const Episode adv = fgsm_attack(zero, ep, AttackSpec::fgsm(0.02));
  EXPECT_TRUE(adv.query.front().image.identical(ep.query.front().image));
}

TEST(Attacks, MissingTargetImagesRejected) {
  Episode ep = episode(6);
  ep.query.clear();
  EXPECT_THROW(fgsm_attack(fixture().model, ep, AttackSpec::fgsm(0.02)), ValidationError);
  EXPECT_THROW(pgd_attack(fixture().model, ep, AttackSpec::pgd(0.01, 2), 0), ValidationError);
}

TEST(Attacks, ParametersUntouched) {
  const std::uint64_t before = fixture().model.parameter_checksum();
  attack_episode(fixture().model, episode(7), AttackSpec::smia(0.04, 2), 0);
  EXPECT_EQ(fixture().model.parameter_checksum(), before);
}

TEST(BoxSmooth, ConstantImageUnchangedAndCornerMean) {
  const Tensor c({1, 1, 3, 3}, std::vector<double>(9, 0.4));
  const Tensor sc = box_smooth3(c);
  for (double v : sc.data()) EXPECT_NEAR(v, 0.4, 1e-15);
  const Tensor x({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  const Tensor s = box_smooth3(x);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(s[i], 2.5);
}
