#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "pnode/ops.hpp"
#include "pnode/protoseg.hpp"

using namespace pnode;

namespace {

Episode small_episode(std::uint64_t seed, std::size_t k_shot = 1) {
  auto data = std::make_shared<const Dataset>(generate_samples(ShapeDomain::source(), 12, {1, 2}, seed));
  return sample_episode(full_view(data, {1, 2}), 1, k_shot, 1, seed);
}

}  // namespace

TEST(Oracle, RandomInstancesMatchBruteForce) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto r = oracle::check_random_instance(1000 + s);
    EXPECT_LT(r.map_error, 1e-12) << "instance " << s;
    EXPECT_LT(r.background_error, 1e-12) << "instance " << s;
    EXPECT_LT(r.softmax_error, 1e-12) << "instance " << s;
  }
}

TEST(MaskedAveragePool, ShotWithoutClassIsSkipped) {
  Rng rng(3);
  const Tensor f = oracle::random_tensor({2, 3, 2, 2}, rng);
  LabelMap with(2, 2), without(2, 2);
  with.labels = {1, 0, 0, 1};
  const auto p = masked_average_pool(f, {with, without}, 1);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(p.vector[c], 0.5 * (oracle::feature(f, 0, c, 0, 0) + oracle::feature(f, 0, c, 1, 1)), 1e-15);
  }
  EXPECT_THROW(masked_average_pool(f, {without, without}, 1), ValidationError);
  EXPECT_THROW(masked_average_pool(f, {with}, 1), ShapeError);
}

TEST(BackgroundPrototype, AllForegroundRejected) {
  Rng rng(4);
  const Tensor f = oracle::random_tensor({1, 2, 2, 2}, rng);
  EXPECT_THROW(background_prototype(f, {LabelMap(2, 2, 1)}, {1}), ValidationError);
}

TEST(PredictQuery, TiesResolveToLowerChannel) {
  SegModelConfig mc;
  mc.use_ode = false;
  const SegModel model = SegModel::create(mc, 1);
  Rng rng(5);
  const Tensor proto = oracle::random_tensor({4}, rng);
  const Tensor q = oracle::random_tensor({1, 4, 3, 3}, rng);
  const auto pred = predict_query(model, {{0, proto}, {2, proto}}, q, {3, 3});
  for (int l : pred.hard_mask.labels) EXPECT_EQ(l, 0);
  for (double v : pred.prob_map.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(PredictQuery, PrototypeScaleInvariance) {
  SegModelConfig mc;
  mc.use_ode = false;
  const SegModel model = SegModel::create(mc, 1);
  Rng rng(6);
  const Tensor bg = oracle::random_tensor({5}, rng), fg = oracle::random_tensor({5}, rng);
  const Tensor q = oracle::random_tensor({1, 5, 4, 4}, rng);
  const auto a = predict_query(model, {{0, bg}, {1, fg}}, q, {8, 8});
  const auto b = predict_query(model, {{0, scale(bg, 7.0)}, {1, scale(fg, 0.25)}}, q, {8, 8});
  EXPECT_LT(oracle::max_abs_diff(a.prob_map.data(), b.prob_map.data()), 1e-12);
  EXPECT_EQ(a.hard_mask, b.hard_mask);
}

TEST(PredictQuery, RequiresBackgroundFirst) {
  SegModelConfig mc;
  const SegModel model = SegModel::create(mc, 1);
  Rng rng(7);
  const Tensor v = oracle::random_tensor({mc.feature_dim}, rng);
  const Tensor q = oracle::random_tensor({1, mc.feature_dim, 2, 2}, rng);
  EXPECT_THROW(predict_query(model, {{1, v}}, q, {2, 2}), ValidationError);
  EXPECT_THROW(predict_query(model, {{0, oracle::random_tensor({3}, rng)}}, q, {2, 2}), ShapeError);
}

TEST(SegModel, BaselineFeaturesAreEncoderOutput) {
  SegModelConfig mc;
  mc.use_ode = false;
  const SegModel model = SegModel::create(mc, 2);
  const Episode ep = small_episode(2);
  const Tensor img = ep.query.front().image;
  EXPECT_TRUE(extract_features(model, img).identical(encode(model, img)));

  SegModel ode = model;
  ode.config.use_ode = true;
  ode.dyn = DynamicsNet::zero(mc.feature_dim, mc.ode_hidden, mc.ode_activation);
  EXPECT_TRUE(extract_features(ode, img).identical(encode(model, img)));
}

TEST(SegModel, FeatureShapeAndProbabilities) {
  const SegModel model = SegModel::create(SegModelConfig{}, 3);
  const Episode ep = small_episode(3, 2);
  const auto out = episode_forward(model, ep);
  ASSERT_EQ(out.predictions.size(), 1u);
  const Tensor& pm = out.predictions.front().prob_map;
  EXPECT_EQ(pm.shape(), (Shape{2, 64, 64}));
  for (std::size_t p = 0; p < 64 * 64; ++p) EXPECT_NEAR(pm[p] + pm[64 * 64 + p], 1.0, 1e-12);
  EXPECT_TRUE(std::isfinite(out.loss.item()));
  EXPECT_GT(out.loss.item(), 0.0);
}

TEST(SegModel, CreationIsDeterministic) {
  EXPECT_EQ(SegModel::create({}, 9).parameter_checksum(), SegModel::create({}, 9).parameter_checksum());
  EXPECT_NE(SegModel::create({}, 9).parameter_checksum(), SegModel::create({}, 10).parameter_checksum());
}

TEST(Checkpoint, RoundTripIsBitExact) {
  SegModelConfig mc;
  mc.ode.n_steps = 3;
  mc.cosine_scale = 12.5;
  const SegModel model = SegModel::create(mc, 11);
  const auto path = std::filesystem::temp_directory_path() / "pnode_ckpt_test.pnode";
  save_checkpoint(path, model);
  const SegModel back = load_checkpoint(path);
  EXPECT_EQ(back.parameter_checksum(), model.parameter_checksum());
  EXPECT_EQ(config_echo(back.config), config_echo(model.config));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), std::exception);
}
