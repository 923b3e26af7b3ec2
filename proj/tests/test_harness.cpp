#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "pnode/attacks.hpp"
#include "pnode/config.hpp"
#include "pnode/harness.hpp"
#include "pnode/serialize.hpp"

using namespace pnode;

namespace {

const TrainTestSplit& split() {
  static const TrainTestSplit s = [] {
    auto data = std::make_shared<const Dataset>(generate_samples(ShapeDomain::source(), 80, {1, 2, 3}, 31));
    return split_train_test(data, {3}, {1, 2});
  }();
  return s;
}

SegModel small_model(bool ode, std::uint64_t seed = 1) {
  SegModelConfig mc;
  mc.use_ode = ode;
  mc.ode.n_steps = 2;
  return SegModel::create(mc, seed);
}

TrainConfig quick(std::size_t episodes) {
  TrainConfig tc;
  tc.episodes = episodes;
  tc.seed = 3;
  return tc;
}

}  // namespace

TEST(Dice, KnownCases) {
  LabelMap pred(1, 8), truth(1, 8);
  pred.labels = {1, 1, 1, 1, 0, 0, 0, 0};
  truth.labels = {1, 1, 1, 0, 1, 1, 1, 0};
  EXPECT_DOUBLE_EQ(dice(pred, truth, 1), 0.6);  // |A|=4, |B|=6, overlap 3
  EXPECT_DOUBLE_EQ(dice(pred, pred, 1), 1.0);
  EXPECT_DOUBLE_EQ(dice(LabelMap(2, 2), LabelMap(2, 2), 1), 1.0);
  EXPECT_DOUBLE_EQ(dice(pred, LabelMap(1, 8), 1), 0.0);
  EXPECT_THROW(dice(pred, LabelMap(2, 4), 1), ShapeError);
}

TEST(ClipGradients, RescalesToMaxNorm) {
  std::vector<Tensor> g{Tensor({2}, {3.0, 0.0}), Tensor({1}, {4.0})};
  EXPECT_DOUBLE_EQ(clip_gradients(g, 1.0), 5.0);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  EXPECT_NEAR(g[1][0], 0.8, 1e-15);
  std::vector<Tensor> small{Tensor({1}, {0.5})};
  clip_gradients(small, 1.0);
  EXPECT_EQ(small[0][0], 0.5);
}

TEST(Training, ZeroLearningRateLeavesParametersBitUnchanged) {
  const SegModel init = small_model(true);
  TrainConfig tc = quick(3);
  tc.learning_rate = 0.0;
  EXPECT_EQ(train_standard(init, split().train, tc).model.parameter_checksum(), init.parameter_checksum());
  tc.sat_enabled = true;
  EXPECT_EQ(train_sat(init, split().train, tc).model.parameter_checksum(), init.parameter_checksum());
}

TEST(Training, SatTakesThreeStepsPerEpisode) {
  const SegModel init = small_model(false);
  TrainConfig tc = quick(4);
  const TrainResult plain = train_standard(init, split().train, tc);
  tc.sat_enabled = true;
  const TrainResult sat = train_sat(init, split().train, tc);
  EXPECT_EQ(plain.optimizer_steps, 4u);
  EXPECT_EQ(sat.optimizer_steps, 12u);
  EXPECT_EQ(sat.loss_trace.size(), 12u);
  tc.sat_enabled = false;
  EXPECT_THROW(train_sat(init, split().train, tc), ValidationError);
}

TEST(Training, SingleStepDescends) {
  const SegModel init = small_model(true);
  const Episode ep = sample_episode(split().train, 1, 1, 1, 8);
  const auto [before, grads] = loss_and_gradients(init, ep);
  SegModel m = init;
  Optimizer opt(OptimizerKind::sgd, 1e-3, 0.0);
  opt.step(m, grads);
  EXPECT_LT(episode_loss(m, ep).item(), before);
}

TEST(Training, DeterministicGivenSeed) {
  const TrainConfig tc = quick(3);
  const auto a = train_standard(small_model(true), split().train, tc);
  const auto b = train_standard(small_model(true), split().train, tc);
  EXPECT_EQ(a.model.parameter_checksum(), b.model.parameter_checksum());
  EXPECT_EQ(a.loss_trace, b.loss_trace);
}

TEST(Training, CallbackCadence) {
  TrainConfig tc = quick(6);
  tc.eval_every = 2;
  std::vector<std::size_t> seen;
  train_standard(small_model(false), split().train, tc, [&](std::size_t i, const SegModel&) { seen.push_back(i); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{2, 4, 6}));
}

TEST(Optimizer, MomentumAccumulates) {
  SegModel m = small_model(false);
  const auto params = m.named_parameters();
  std::vector<Tensor> grads;
  for (const auto& [name, p] : params) grads.push_back(Tensor(p->shape(), std::vector<double>(p->numel(), 1.0)));
  const double w0 = (*params.front().second)[0];
  Optimizer opt(OptimizerKind::sgd_momentum, 0.1, 0.5);
  opt.step(m, grads);
  opt.step(m, grads);
  // v1 = 1, v2 = 0.5 + 1
  EXPECT_NEAR((*m.named_parameters().front().second)[0], w0 - 0.1 * (1.0 + 1.5), 1e-15);
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(Evaluate, DoesNotTouchParametersAndIsDeterministic) {
  const SegModel model = small_model(true);
  const std::uint64_t before = model.parameter_checksum();
  EvalSettings es;
  es.n_episodes = 3;
  es.seed = 4;
  const std::vector<AttackSpec> attacks{AttackSpec::fgsm(0.02), AttackSpec::pgd(0.01, 2)};
  const EvalReport a = evaluate(model, split().test, attacks, es);
  const EvalReport b = evaluate(model, split().test, attacks, es);
  EXPECT_EQ(model.parameter_checksum(), before);
  ASSERT_EQ(a.rows.size(), 3u);
  EXPECT_EQ(a.rows[0].attack, "clean");
  EXPECT_EQ(a.rows[0].target, "none");
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].mean_dice, b.rows[i].mean_dice);
    ASSERT_EQ(a.rows[i].repeat_means.size(), 2u);
    const double m0 = a.rows[i].repeat_means[0], m1 = a.rows[i].repeat_means[1];
    EXPECT_NEAR(a.rows[i].mean_dice, 0.5 * (m0 + m1), 1e-15);
    EXPECT_NEAR(a.rows[i].std_dice, 0.5 * std::abs(m0 - m1), 1e-15);
  }
  EXPECT_EQ(a.find("pgd").attack, "pgd");
  es.n_repeats = 1;
  EXPECT_THROW(evaluate(model, split().test, attacks, es), ValidationError);
}

TEST(GradientSuite, FullModelMatchesFiniteDifferences) {
  const SegModel model = small_model(true, 5);
  const Episode ep = sample_episode(split().test, 1, 1, 1, 5);
  for (const auto& entry : model_gradient_suite(model, ep, 4)) {
    EXPECT_LT(entry.result.max_rel_error, 1e-6) << entry.name;
    EXPECT_EQ(entry.result.probes, 4u) << entry.name;
  }
}

TEST(Config, ParseTypedGettersAndErrors) {
  const Config c = Config::parse(
      "# comment\n"
      "a.x = 3\n"
      "a.y = 0.25  # trailing\n"
      "b.list = 1, 2,3\n"
      "b.flag = true\n"
      "name = hello world\n");
  EXPECT_EQ(c.get_size("a.x", 0), 3u);
  EXPECT_DOUBLE_EQ(c.get_double("a.y", 0.0), 0.25);
  EXPECT_EQ(c.get_int_list("b.list", {}), (std::vector<int>{1, 2, 3}));
  EXPECT_TRUE(c.get_bool("b.flag", false));
  EXPECT_EQ(c.get_string("name"), "hello world");
  EXPECT_EQ(c.get_size("missing", 7), 7u);
  EXPECT_THROW(c.get_string("missing"), ConfigError);
  EXPECT_THROW(c.get_size("a.y", 0), ConfigError);
  EXPECT_THROW(Config::parse("novalue\n"), ConfigError);
  const Config back = Config::parse(c.echo());
  EXPECT_EQ(back.values(), c.values());
}

TEST(Config, FormatDoubleRoundTrips) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.25), "0.25");
}

TEST(Config, TrainAndAttackKeys) {
  Config c;
  c.set("train.optimizer", "sgd");
  c.set("train.learning_rate", "0.005");
  c.set("train.episodes", "17");
  c.set("attack.pgd.iters", "5");
  c.set("attack.target", "support");
  const TrainConfig tc = train_config_from(c);
  EXPECT_EQ(tc.optimizer, OptimizerKind::sgd);
  EXPECT_DOUBLE_EQ(tc.learning_rate, 0.005);
  EXPECT_EQ(tc.episodes, 17u);
  const auto grid = attack_grid(c);
  ASSERT_EQ(grid.size(), 3u);
  EXPECT_EQ(grid[1].n_iters, 5u);
  EXPECT_EQ(grid[1].target, AttackTarget::support);
  EXPECT_DOUBLE_EQ(grid[0].epsilon, 0.02);
  EXPECT_DOUBLE_EQ(grid[2].epsilon, 0.04);
  c.set("train.optimizer", "adam");
  EXPECT_THROW(train_config_from(c), ValidationError);
}

TEST(Experiment, MissingDataKeyNamesIt) {
  Config c;
  c.set("output.dir", (std::filesystem::temp_directory_path() / "pnode_exp_missing").string());
  try {
    run_experiment(c);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("data.source"), std::string::npos);
  }
}

TEST(Serialize, Ndt1RoundTripAndBadMagic) {
  const Tensor t({2, 3}, {1.0, -2.5, std::numeric_limits<double>::denorm_min(), 4.0, 1e300, -0.0});
  std::stringstream ss;
  write_ndt1(ss, t);
  EXPECT_TRUE(read_ndt1(ss).identical(t));
  std::stringstream bad("XXXX");
  EXPECT_THROW(read_ndt1(bad), IoError);
}

TEST(Report, CsvHeaderAndFormatting) {
  const std::string csv = results_csv({{"pnode", "source", "clean", "none", 1, 0.5, 0.125}});
  EXPECT_EQ(csv, "model,domain,attack,target,shots,mean_dice,std_dice\npnode,source,clean,none,1,0.500000,0.125000\n");
  const std::string svg = bar_chart_svg({{"pnode", "source", "clean", "none", 1, 0.5, 0.1}}, "source", "t");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
}
