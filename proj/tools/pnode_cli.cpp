#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pnode/attacks.hpp"
#include "pnode/config.hpp"
#include "pnode/episodes.hpp"
#include "pnode/gradcheck.hpp"
#include "pnode/harness.hpp"
#include "pnode/protoseg.hpp"
#include "pnode/random.hpp"

namespace fs = std::filesystem;
using namespace pnode;

namespace {

Config load_optional(const std::string& path) { return path.empty() ? Config{} : Config::load(path); }

TrainTestSplit split_from(const Config& config, std::shared_ptr<const Dataset> data) {
  SplitOptions opts;
  opts.fractions.train = config.get_double("split.train_fraction", opts.fractions.train);
  opts.fractions.val = config.get_double("split.val_fraction", opts.fractions.val);
  opts.test_images_per_class = config.get_size("split.test_images_per_class", 500);
  opts.seed = config.get_u64("split.seed", 0);
  return split_train_test(std::move(data), config.get_int_list("split.base_classes", {3}),
                          config.get_int_list("split.novel_classes", {1, 2}), opts);
}

int gen_data(const std::string& domain, std::size_t n, std::uint64_t seed, const std::string& out, double strength,
             const std::vector<int>& classes) {
  generate_dataset(ShapeDomain::by_name(domain, strength), n, classes, seed, out);
  std::cout << "wrote " << n << " " << domain << " images to " << out << "\n";
  return 0;
}

int train(const std::string& model_name, bool sat, const std::string& data_dir, const std::string& out,
          const std::string& config_path, std::optional<std::size_t> episodes, std::optional<std::uint64_t> seed,
          std::optional<double> lr) {
  Config config = load_optional(config_path);
  SegModelConfig mc = model_config_from(config);
  mc.use_ode = model_name == "pnode";
  TrainConfig tc = train_config_from(config);
  if (episodes) tc.episodes = *episodes;
  if (lr) tc.learning_rate = *lr;
  const std::uint64_t s = seed.value_or(config.get_u64("train.seed", 1));
  tc.seed = derive_seed(s, 2);
  tc.sat_enabled = sat;
  tc.eval_every = tc.eval_every ? tc.eval_every : std::max<std::size_t>(tc.episodes / 10, 1);

  auto data = std::make_shared<const Dataset>(load_dataset(data_dir));
  const TrainTestSplit split = split_from(config, data);
  const SegModel init = SegModel::create(mc, derive_seed(s, 1));
  const auto progress = [&](std::size_t episode, const SegModel&) {
    std::cerr << "episode " << episode << "/" << tc.episodes << "\n";
  };
  const TrainResult result = sat ? train_sat(init, split.train, tc, progress) : train_standard(init, split.train, tc, progress);
  save_checkpoint(out, result.model);

  const std::size_t window = std::max<std::size_t>(1, std::min<std::size_t>(100, result.loss_trace.size() / 2));
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    head += result.loss_trace[i];
    tail += result.loss_trace[result.loss_trace.size() - 1 - i];
  }
  std::cout << "model " << model_name << (sat ? " (sat)" : "") << ", " << result.optimizer_steps
            << " optimizer steps, loss " << format_double(head / window) << " -> " << format_double(tail / window)
            << ", checkpoint " << out << "\n";
  return 0;
}

int attack_eval(const std::string& checkpoint, const std::string& attack, const std::string& data_dir,
                const std::string& config_path, std::optional<double> eps, std::optional<std::size_t> iters,
                std::optional<double> step, const std::string& target, std::optional<double> lambda,
                bool no_random_start, bool cross_domain, std::size_t shots, std::size_t episodes, std::size_t repeats,
                std::uint64_t seed) {
  const Config config = load_optional(config_path);
  const SegModel model = load_checkpoint(checkpoint);
  auto data = std::make_shared<const Dataset>(load_dataset(data_dir));
  const auto novel = config.get_int_list("split.novel_classes", {1, 2});
  const DatasetView view = cross_domain ? full_view(data, novel) : split_from(config, data).test;

  std::vector<AttackSpec> attacks;
  if (attack != "clean") {
    const AttackTarget t = parse_attack_target(target);
    const AttackFamily family = parse_attack_family(attack);
    const double e = eps.value_or(family == AttackFamily::fgsm ? 0.02 : family == AttackFamily::pgd ? 0.01 : 0.04);
    AttackSpec spec = family == AttackFamily::fgsm  ? AttackSpec::fgsm(e, t)
                      : family == AttackFamily::pgd ? AttackSpec::pgd(e, iters.value_or(10), t)
                                                    : AttackSpec::smia(e, iters.value_or(10), lambda.value_or(1.0), t);
    if (step) spec.step_size = *step;
    if (no_random_start) spec.random_start = false;
    attacks.push_back(spec);
  }
  EvalSettings es;
  es.k_shot = shots;
  es.n_episodes = episodes;
  es.n_repeats = repeats;
  es.seed = seed;
  const EvalReport report = evaluate(model, view, attacks, es);
  std::cout << "attack,target,shots,mean_dice,std_dice,episodes\n";
  for (const auto& r : report.rows) {
    std::cout << r.attack << "," << r.target << "," << r.shots << "," << format_double(r.mean_dice) << ","
              << format_double(r.std_dice) << "," << r.episodes << "\n";
  }
  if (!attacks.empty()) std::cerr << attacks.front().describe() << "\n";
  return 0;
}

int gradcheck(const std::string& model_name, std::size_t probes, double tolerance, std::uint64_t seed) {
  SegModelConfig mc;
  mc.use_ode = model_name == "pnode";
  const SegModel model = SegModel::create(mc, seed);
  const Dataset data = generate_samples(ShapeDomain::source(), 8, {1, 2, 3}, seed);
  const DatasetView view = full_view(std::make_shared<const Dataset>(data), {1, 2, 3});
  const Episode ep = sample_episode(view, 1, 1, 1, seed);
  double worst = 0.0;
  for (const auto& entry : model_gradient_suite(model, ep, probes)) {
    std::cout << entry.name << " max_rel_error " << entry.result.max_rel_error << " probes " << entry.result.probes << " skipped " << entry.result.skipped_nonsmooth << " (numeric "
              << entry.result.worst_numeric << ", analytic " << entry.result.worst_analytic << ")\n";
    worst = std::max(worst, entry.result.max_rel_error);
  }
  const bool ok = worst < tolerance;
  std::cout << (ok ? "PASS" : "FAIL") << " worst " << worst << " (tolerance " << tolerance << ")\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototypical Neural-ODE few-shot segmentation: data, training and attack evaluation"};
  app.require_subcommand(1);

  std::string domain = "source", out, data_dir, config_path, checkpoint, attack = "fgsm", target = "query";
  std::string model_name = "pnode";
  std::size_t n = 1000, probes = 20, shots = 1, episodes_eval = 200, repeats = 2;
  std::uint64_t seed = 0;
  double strength = 1.0, tolerance = 1e-6;
  std::vector<int> classes{1, 2, 3};
  bool sat = false, no_random_start = false, cross_domain = false;
  std::optional<std::size_t> episodes, iters;
  std::optional<std::uint64_t> train_seed;
  std::optional<double> lr, eps, step, lambda;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic shape dataset");
  gen->add_option("--domain", domain, "source or shifted")->check(CLI::IsMember({"source", "shifted"}));
  gen->add_option("--n", n, "number of images")->required();
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--strength", strength, "shift strength for the shifted domain");
  gen->add_option("--classes", classes, "class ids to draw from")->delimiter(',');

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  tr->add_option("--model", model_name, "pnode or baseline")->check(CLI::IsMember({"pnode", "baseline"}));
  tr->add_flag("--sat", sat, "standard adversarial training");
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", out, "checkpoint path")->required();
  tr->add_option("--config", config_path, "config file");
  tr->add_option("--episodes", episodes, "training episodes");
  tr->add_option("--seed", train_seed, "experiment seed");
  tr->add_option("--lr", lr, "learning rate");

  auto* ev = app.add_subcommand("attack-eval", "Evaluate a checkpoint under an attack");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--attack", attack, "clean, fgsm, pgd or smia")
      ->check(CLI::IsMember({"clean", "fgsm", "pgd", "smia"}));
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--config", config_path, "config file");
  ev->add_option("--eps", eps, "l_inf budget");
  ev->add_option("--iters", iters, "iterations (pgd, smia)");
  ev->add_option("--step", step, "step size (pgd, smia)");
  ev->add_option("--target", target, "support or query")->check(CLI::IsMember({"support", "query"}));
  ev->add_option("--smia-lambda", lambda, "stabilization weight");
  ev->add_flag("--no-random-start", no_random_start, "start pgd at the clean image");
  ev->add_flag("--cross-domain", cross_domain, "use every image of --data as the test pool");
  ev->add_option("--shots", shots, "support shots per class");
  ev->add_option("--episodes", episodes_eval, "episodes per repeat");
  ev->add_option("--repeats", repeats, "repeated runs (>= 2)");
  ev->add_option("--seed", seed, "evaluation seed");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full episode loss");
  gc->add_option("--model", model_name, "pnode or baseline")->check(CLI::IsMember({"pnode", "baseline"}));
  gc->add_option("--probes", probes, "coordinates per tensor");
  gc->add_option("--tolerance", tolerance, "max relative error");
  gc->add_option("--seed", seed, "model and episode seed");

  auto* rx = app.add_subcommand("run-experiment", "Train all variants and write results.csv");
  rx->add_option("--config", config_path, "experiment config")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_data(domain, n, seed, out, strength, classes);
    if (*tr) return train(model_name, sat, data_dir, out, config_path, episodes, train_seed, lr);
    if (*ev) {
      return attack_eval(checkpoint, attack, data_dir, config_path, eps, iters, step, target, lambda,
                         no_random_start, cross_domain, shots, episodes_eval, repeats, seed);
    }
    if (*gc) return gradcheck(model_name, probes, tolerance, seed);
    if (*rx) {
      const ExperimentResult r = run_experiment(fs::path(config_path));
      std::cout << results_csv(r.rows);
      for (const auto& f : r.failures) std::cerr << "variant failed: " << f << "\n";
      return r.ok() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
