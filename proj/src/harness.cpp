#include "pnode/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "pnode/ops.hpp"
#include "pnode/random.hpp"
#include "pnode/serialize.hpp"

#ifndef PNODE_COMMIT_ID
#define PNODE_COMMIT_ID "unknown"
#endif

namespace pnode {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "sgd-momentum"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "sgd-momentum") return OptimizerKind::sgd_momentum;
  throw ValidationError("unknown optimizer '" + s + "' (expected sgd or sgd-momentum)");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("train: learning_rate must be finite and >= 0");
  }
  if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("train: momentum must lie in [0, 1)");
  if (max_grad_norm < 0.0) throw ValidationError("train: max_grad_norm must be >= 0");
  if (sat_enabled && !(sat_epsilon > 0.0)) throw ValidationError("train: sat_epsilon must be > 0");
  if (n_way < 1 || k_shot < 1 || n_query < 1) throw ValidationError("train: episode sizes must be >= 1");
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, double momentum)
    : kind_(kind), lr_(learning_rate), momentum_(momentum) {}

void Optimizer::step(SegModel& model, const std::vector<Tensor>& grads) {
  auto params = model.named_parameters();
  if (grads.size() != params.size()) throw ValidationError("optimizer: gradient count does not match parameters");
  if (velocity_.empty()) {
    for (const auto& [name, p] : params) velocity_.emplace_back(p->numel(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].second;
    const Tensor& g = grads[i];
    if (g.shape() != p.shape()) throw ShapeError("optimizer: gradient shape mismatch for " + params[i].first);
    std::vector<double> next = p.to_vector();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < next.size(); ++j) {
      double d = g[j];
      if (kind_ == OptimizerKind::sgd_momentum) {
        v[j] = momentum_ * v[j] + g[j];
        d = v[j];
      }
      next[j] -= lr_ * d;
    }
    p = Tensor(p.shape(), std::move(next));
  }
  ++steps_;
}

double clip_gradients(std::vector<Tensor>& grads, double max_norm) {
  long double sq = 0.0L;
  for (const auto& g : grads)
    for (double v : g.data()) sq += static_cast<long double>(v) * v;
  const double norm = std::sqrt(static_cast<double>(sq));
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads) g = scale(g, factor);
  }
  return norm;
}

namespace {

struct Pass {
  double loss = 0.0;
  std::vector<Tensor> param_grads;
  std::vector<std::vector<Tensor>> support_grads;
  std::vector<Tensor> query_grads;
};

Pass forward_backward(const SegModel& model, const Episode& episode, bool with_inputs) {
  Tape tape;
  const SegModel bound = model.on_tape(tape);
  Episode tracked = episode;
  if (with_inputs) {
    for (auto& group : tracked.support)
      for (auto& shot : group) shot.image = tape.variable(shot.image);
    for (auto& q : tracked.query) q.image = tape.variable(q.image);
  }
  const Tensor loss = episode_loss(bound, tracked);
  tape.backward(loss);
  Pass out;
  out.loss = loss.item();
  for (const auto& [name, p] : bound.named_parameters()) out.param_grads.push_back(*p->grad());
  if (with_inputs) {
    for (const auto& group : tracked.support) {
      std::vector<Tensor> g;
      for (const auto& shot : group) g.push_back(*shot.image.grad());
      out.support_grads.push_back(std::move(g));
    }
    for (const auto& q : tracked.query) out.query_grads.push_back(*q.image.grad());
  }
  return out;
}

Tensor fgsm_image(const Tensor& image, const Tensor& grad, double epsilon) {
  std::vector<double> v(image.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double s = grad[i] > 0.0 ? epsilon : (grad[i] < 0.0 ? -epsilon : 0.0);
    v[i] = project_pixel(image[i] + s, image[i], epsilon);
  }
  return Tensor(image.shape(), std::move(v));
}

void check_finite(const Pass& pass, std::size_t episode, std::size_t step) {
  bool ok = std::isfinite(pass.loss);
  for (const auto& g : pass.param_grads)
    for (double v : g.data()) ok = ok && std::isfinite(v);
  if (!ok) {
    std::ostringstream os;
    os << "training diverged at episode " << episode << " (optimizer step " << step << "): loss " << pass.loss;
    throw TrainingError(os.str());
  }
}

Pass guarded_pass(const SegModel& model, const Episode& episode, bool with_inputs, double max_norm,
                  std::size_t index, std::size_t step) {
  try {
    Pass pass = forward_backward(model, episode, with_inputs);
    check_finite(pass, index, step);
    clip_gradients(pass.param_grads, max_norm);
    return pass;
  } catch (const NumericError& e) {
    std::ostringstream os;
    os << "training diverged at episode " << index << " (optimizer step " << step << "): " << e.what();
    throw TrainingError(os.str());
  }
}

Episode training_episode(const DatasetView& train, const TrainConfig& cfg, std::size_t index) {
  return sample_episode(train, cfg.n_way, cfg.k_shot, cfg.n_query, derive_seed(cfg.seed, index));
}

}  // namespace

std::pair<double, std::vector<Tensor>> loss_and_gradients(const SegModel& model, const Episode& episode) {
  Pass pass = forward_backward(model, episode, false);
  return {pass.loss, std::move(pass.param_grads)};
}

TrainResult train_standard(const SegModel& model, const DatasetView& train, const TrainConfig& cfg,
                           const TrainCallback& callback) {
  cfg.validate();
  TrainResult result{model, {}, 0};
  Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.momentum);
  for (std::size_t i = 0; i < cfg.episodes; ++i) {
    const Episode ep = training_episode(train, cfg, i);
    const Pass pass = guarded_pass(result.model, ep, false, cfg.max_grad_norm, i, opt.steps());
    opt.step(result.model, pass.param_grads);
    result.loss_trace.push_back(pass.loss);
    if (callback && cfg.eval_every && (i + 1) % cfg.eval_every == 0) callback(i + 1, result.model);
  }
  result.optimizer_steps = opt.steps();
  return result;
}

TrainResult train_sat(const SegModel& model, const DatasetView& train, const TrainConfig& cfg,
                      const TrainCallback& callback) {
  cfg.validate();
  if (!cfg.sat_enabled) throw ValidationError("train_sat: sat_enabled is false");
  TrainResult result{model, {}, 0};
  Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.momentum);
  for (std::size_t i = 0; i < cfg.episodes; ++i) {
    const Episode orig = training_episode(train, cfg, i);
    const Pass first = guarded_pass(result.model, orig, true, cfg.max_grad_norm, i, opt.steps());

    Episode adv_support = orig;
    for (std::size_t c = 0; c < orig.support.size(); ++c)
      for (std::size_t k = 0; k < orig.support[c].size(); ++k) {
        adv_support.support[c][k].image =
            fgsm_image(orig.support[c][k].image, first.support_grads[c][k], cfg.sat_epsilon);
      }
    Episode adv_query = orig;
    for (std::size_t q = 0; q < orig.query.size(); ++q) {
      adv_query.query[q].image = fgsm_image(orig.query[q].image, first.query_grads[q], cfg.sat_epsilon);
    }

    opt.step(result.model, first.param_grads);
    result.loss_trace.push_back(first.loss);
    for (const Episode* ep : {&adv_support, &adv_query}) {
      const Pass pass = guarded_pass(result.model, *ep, false, cfg.max_grad_norm, i, opt.steps());
      opt.step(result.model, pass.param_grads);
      result.loss_trace.push_back(pass.loss);
    }
    if (callback && cfg.eval_every && (i + 1) % cfg.eval_every == 0) callback(i + 1, result.model);
  }
  result.optimizer_steps = opt.steps();
  return result;
}

std::vector<GradSuiteEntry> model_gradient_suite(const SegModel& model, const Episode& episode, std::size_t probes,
                                                 const GradCheckOptions& options) {
  std::vector<GradSuiteEntry> out;
  const auto params = model.named_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    if (!model.config.use_ode && name.starts_with("dyn.")) continue;
    const ScalarFn f = [&, i](const Tensor& x) {
      SegModel m = model;
      *m.named_parameters()[i].second = x;
      return episode_loss(m, episode);
    };
    out.push_back({name, finite_diff_check(f, *p, probes, options)});
  }
  for (std::size_t c = 0; c < episode.support.size(); ++c)
    for (std::size_t k = 0; k < episode.support[c].size(); ++k) {
      const ScalarFn f = [&, c, k](const Tensor& x) {
        Episode e = episode;
        e.support[c][k].image = x;
        return episode_loss(model, e);
      };
      out.push_back({"support." + std::to_string(c) + "." + std::to_string(k),
                     finite_diff_check(f, episode.support[c][k].image, probes, options)});
    }
  for (std::size_t q = 0; q < episode.query.size(); ++q) {
    const ScalarFn f = [&, q](const Tensor& x) {
      Episode e = episode;
      e.query[q].image = x;
      return episode_loss(model, e);
    };
    out.push_back({"query." + std::to_string(q), finite_diff_check(f, episode.query[q].image, probes, options)});
  }
  return out;
}

double dice(const LabelMap& pred, const LabelMap& truth, int class_id) {
  if (pred.height != truth.height || pred.width != truth.width) {
    throw ShapeError("dice: mask shapes differ (" + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " vs " + std::to_string(truth.height) + "x" + std::to_string(truth.width) + ")");
  }
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool in_a = pred.labels[i] == class_id;
    const bool in_b = truth.labels[i] == class_id;
    a += in_a;
    b += in_b;
    both += in_a && in_b;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

double episode_dice(const SegModel& model, const Episode& episode) {
  const EpisodeOutput out = episode_forward(model, episode);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t q = 0; q < episode.query.size(); ++q)
    for (int c : episode.class_set) {
      total += dice(out.predictions[q].hard_mask, episode.query[q].mask, c);
      ++n;
    }
  return total / static_cast<double>(n);
}

void EvalSettings::validate() const {
  if (n_repeats < 2) throw ValidationError("evaluate: n_repeats must be >= 2");
  if (n_episodes < 1) throw ValidationError("evaluate: n_episodes must be >= 1");
  if (n_way < 1 || k_shot < 1 || n_query < 1) throw ValidationError("evaluate: episode sizes must be >= 1");
}

const EvalRow& EvalReport::find(const std::string& attack) const {
  for (const auto& r : rows)
    if (r.attack == attack) return r;
  throw ValidationError("eval report has no row for '" + attack + "'");
}

std::uint64_t eval_episode_seed(std::uint64_t seed, std::size_t repeat, std::size_t index) {
  return derive_seed(derive_seed(seed, repeat), index);
}

namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v) {
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

EvalReport evaluate(const SegModel& model, const DatasetView& test, const std::vector<AttackSpec>& attacks,
                    const EvalSettings& settings) {
  settings.validate();
  for (const auto& a : attacks) a.validate();
  EvalReport report;
  report.rows.push_back(EvalRow{"clean", "none", settings.k_shot, 0.0, 0.0, {}, settings.n_episodes});
  for (const auto& a : attacks) {
    report.rows.push_back(
        EvalRow{to_string(a.family), to_string(a.target), settings.k_shot, 0.0, 0.0, {}, settings.n_episodes});
  }
  for (std::size_t r = 0; r < settings.n_repeats; ++r) {
    std::vector<double> sums(report.rows.size(), 0.0);
    for (std::size_t j = 0; j < settings.n_episodes; ++j) {
      const std::uint64_t seed = eval_episode_seed(settings.seed, r, j);
      const Episode ep = sample_episode(test, settings.n_way, settings.k_shot, settings.n_query, seed);
      sums[0] += episode_dice(model, ep);
      for (std::size_t a = 0; a < attacks.size(); ++a) {
        const Episode adv = attack_episode(model, ep, attacks[a], derive_seed(seed, 1000 + a));
        sums[a + 1] += episode_dice(model, adv);
      }
    }
    for (std::size_t k = 0; k < sums.size(); ++k) {
      report.rows[k].repeat_means.push_back(sums[k] / static_cast<double>(settings.n_episodes));
    }
  }
  for (auto& row : report.rows) {
    row.mean_dice = mean_of(row.repeat_means);
    row.std_dice = population_std(row.repeat_means);
  }
  return report;
}

std::vector<AttackSpec> attack_grid(const Config& config) {
  const AttackTarget target = parse_attack_target(config.get_string("attack.target", "query"));
  AttackSpec fgsm = AttackSpec::fgsm(config.get_double("attack.fgsm.epsilon", 0.02), target);

  AttackSpec pgd = AttackSpec::pgd(config.get_double("attack.pgd.epsilon", 0.01),
                                   config.get_size("attack.pgd.iters", 10), target);
  pgd.step_size = config.get_double("attack.pgd.step", pgd.step_size);
  pgd.random_start = config.get_bool("attack.pgd.random_start", true);

  AttackSpec smia = AttackSpec::smia(config.get_double("attack.smia.epsilon", 0.04),
                                     config.get_size("attack.smia.iters", 10),
                                     config.get_double("attack.smia.lambda", 1.0), target);
  smia.step_size = config.get_double("attack.smia.step", smia.step_size);

  std::vector<AttackSpec> grid{fgsm, pgd, smia};
  for (const auto& a : grid) a.validate();
  return grid;
}

TrainConfig train_config_from(const Config& config) {
  TrainConfig t;
  t.optimizer = parse_optimizer(config.get_string("train.optimizer", to_string(t.optimizer)));
  t.learning_rate = config.get_double("train.learning_rate", t.learning_rate);
  t.momentum = config.get_double("train.momentum", t.momentum);
  t.max_grad_norm = config.get_double("train.max_grad_norm", t.max_grad_norm);
  t.episodes = config.get_size("train.episodes", t.episodes);
  t.eval_every = config.get_size("train.eval_every", t.eval_every);
  t.sat_epsilon = config.get_double("train.sat_epsilon", t.sat_epsilon);
  t.seed = config.get_u64("train.seed", t.seed);
  t.n_way = config.get_size("episode.ways", t.n_way);
  t.k_shot = config.get_size("episode.shots", t.k_shot);
  t.n_query = config.get_size("episode.queries", t.n_query);
  t.validate();
  return t;
}

const ResultRow* ExperimentResult::find(const std::string& model, const std::string& domain,
                                        const std::string& attack) const {
  for (const auto& r : rows)
    if (r.model == model && r.domain == domain && r.attack == attack) return &r;
  return nullptr;
}

namespace {

std::filesystem::path required_path(const Config& config, const std::string& key, bool must_exist) {
  const std::filesystem::path p = config.get_string(key);
  if (must_exist && !std::filesystem::exists(p)) {
    throw ConfigError("config key '" + key + "': path '" + p.string() + "' does not exist");
  }
  return p;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

std::string fixed6(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << v;
  return os.str();
}

struct RunKey {
  std::string model, domain, attack, target;
  std::size_t shots;
  auto operator<=>(const RunKey&) const = default;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

ExperimentResult run_experiment(const std::filesystem::path& config_path) {
  Config config = Config::load(config_path);
  const auto base = config_path.parent_path();
  for (const char* key : {"data.source", "data.shifted", "output.dir"}) {
    if (config.has(key)) {
      const std::filesystem::path p = config.get_string(key);
      if (p.is_relative()) config.set(key, (base / p).lexically_normal().string());
    }
  }
  return run_experiment(config);
}

ExperimentResult run_experiment(const Config& config) {
  const auto source_dir = required_path(config, "data.source", true);
  const auto shifted_dir = required_path(config, "data.shifted", true);
  const auto out_dir = required_path(config, "output.dir", false);

  SegModelConfig model_cfg = model_config_from(config);
  model_cfg.validate();
  TrainConfig train_cfg = train_config_from(config);
  const std::vector<AttackSpec> attacks = attack_grid(config);
  const auto seeds = config.get_u64_list("experiment.seeds", {1, 2});
  const std::string models_text = config.get_string("experiment.models", "pnode,baseline,at-baseline");
  std::vector<std::string> models;
  {
    std::stringstream ss(models_text);
    std::string m;
    while (std::getline(ss, m, ',')) {
      m.erase(0, m.find_first_not_of(" \t"));
      m.erase(m.find_last_not_of(" \t") + 1);
      if (m != "pnode" && m != "baseline" && m != "at-baseline") {
        throw ConfigError("config key 'experiment.models': unknown model '" + m + "'");
      }
      models.push_back(m);
    }
  }
  if (seeds.empty()) throw ConfigError("config key 'experiment.seeds': no seeds given");

  const auto base_classes = config.get_int_list("split.base_classes", {3});
  const auto novel_classes = config.get_int_list("split.novel_classes", {1, 2});
  SplitOptions split_opts;
  split_opts.fractions.train = config.get_double("split.train_fraction", split_opts.fractions.train);
  split_opts.fractions.val = config.get_double("split.val_fraction", split_opts.fractions.val);
  split_opts.test_images_per_class = config.get_size("split.test_images_per_class", 500);
  split_opts.seed = config.get_u64("split.seed", 0);

  EvalSettings eval_base;
  eval_base.n_way = config.get_size("eval.ways", train_cfg.n_way);
  eval_base.n_query = config.get_size("eval.queries", train_cfg.n_query);
  eval_base.n_episodes = config.get_size("eval.episodes", eval_base.n_episodes);
  eval_base.n_repeats = config.get_size("eval.repeats", eval_base.n_repeats);
  std::vector<std::size_t> eval_shots;
  for (int k : config.get_int_list("eval.shots", {static_cast<int>(train_cfg.k_shot)})) {
    if (k < 1) throw ConfigError("config key 'eval.shots': shots must be >= 1");
    eval_shots.push_back(static_cast<std::size_t>(k));
  }
  const bool verbose = config.get_bool("output.verbose", true);

  auto source = std::make_shared<const Dataset>(load_dataset(source_dir));
  auto shifted = std::make_shared<const Dataset>(load_dataset(shifted_dir));
  const TrainTestSplit split = split_train_test(source, base_classes, novel_classes, split_opts);
  const DatasetView cross = full_view(shifted, novel_classes);
  const std::vector<std::pair<std::string, const DatasetView*>> domains{{"source", &split.test},
                                                                       {"shifted", &cross}};

  std::filesystem::create_directories(out_dir / "checkpoints");
  std::filesystem::create_directories(out_dir / "traces");

  ExperimentResult result;
  result.output_dir = out_dir;
  std::map<RunKey, std::vector<double>> runs;  // run means over seeds x repeats
  std::ostringstream by_seed;
  by_seed << "seed,model,domain,attack,target,shots,mean_dice,std_dice\n";
  std::ostringstream log;

  for (std::uint64_t seed : seeds) {
    for (const auto& name : models) {
      const auto t0 = std::chrono::steady_clock::now();
      try {
        SegModelConfig mc = model_cfg;
        mc.use_ode = name == "pnode";
        TrainConfig tc = train_cfg;
        tc.seed = derive_seed(seed, 2);
        tc.sat_enabled = name == "at-baseline";
        const SegModel init = SegModel::create(mc, derive_seed(seed, 1));
        const TrainResult trained = tc.sat_enabled ? train_sat(init, split.train, tc) : train_standard(init, split.train, tc);

        const std::string tag = name + "_seed" + std::to_string(seed);
        save_checkpoint(out_dir / "checkpoints" / (tag + ".pnode"), trained.model);
        std::ostringstream trace;
        trace << "step,loss\n";
        for (std::size_t s = 0; s < trained.loss_trace.size(); ++s) {
          trace << s << ',' << format_double(trained.loss_trace[s]) << '\n';
        }
        write_text(out_dir / "traces" / (tag + ".csv"), trace.str());
        if (verbose) {
          std::cerr << "[" << tag << "] trained " << tc.episodes << " episodes, " << trained.optimizer_steps
                    << " steps in " << fixed6(seconds_since(t0)) << " s\n";
        }

        for (std::size_t d = 0; d < domains.size(); ++d) {
          for (std::size_t shots : eval_shots) {
            EvalSettings es = eval_base;
            es.k_shot = shots;
            es.seed = derive_seed(seed, 3 + d);
            const EvalReport report = evaluate(trained.model, *domains[d].second, attacks, es);
            for (const auto& row : report.rows) {
              const RunKey key{name, domains[d].first, row.attack, row.target, shots};
              auto& v = runs[key];
              v.insert(v.end(), row.repeat_means.begin(), row.repeat_means.end());
              by_seed << seed << ',' << name << ',' << domains[d].first << ',' << row.attack << ',' << row.target
                      << ',' << shots << ',' << fixed6(row.mean_dice) << ',' << fixed6(row.std_dice) << '\n';
            }
            if (verbose) {
              std::cerr << "[" << tag << "] " << domains[d].first << " " << shots << "-shot:";
              for (const auto& row : report.rows) std::cerr << " " << row.attack << "=" << fixed6(row.mean_dice);
              std::cerr << " (" << fixed6(seconds_since(t0)) << " s)\n";
            }
          }
        }
        log << "variant " << tag << ": ok\n";
      } catch (const std::exception& e) {
        const std::string msg = name + " seed " + std::to_string(seed) + ": " + e.what();
        result.failures.push_back(msg);
        log << "variant " << name << "_seed" << seed << ": FAILED " << e.what() << '\n';
        if (verbose) std::cerr << "[" << name << "_seed" << seed << "] FAILED: " << e.what() << '\n';
      }
    }
  }

  // Rows in grid order: domain, model, attack.
  std::vector<std::string> attack_order{"clean"};
  for (const auto& a : attacks) attack_order.push_back(to_string(a.family));
  const std::string target = to_string(attacks.front().target);
  for (const auto& [domain, view] : domains) {
    for (std::size_t shots : eval_shots)
      for (const auto& name : models)
        for (const auto& attack : attack_order) {
          const RunKey key{name, domain, attack, attack == "clean" ? "none" : target, shots};
          const auto it = runs.find(key);
          if (it == runs.end()) continue;
          result.rows.push_back(
              ResultRow{name, domain, attack, key.target, shots, mean_of(it->second), population_std(it->second)});
        }
  }

  write_text(out_dir / "results.csv", results_csv(result.rows));
  write_text(out_dir / "results_by_seed.csv", by_seed.str());
  for (const auto& [domain, view] : domains) {
    for (std::size_t shots : eval_shots) {
      std::vector<ResultRow> subset;
      for (const auto& r : result.rows)
        if (r.domain == domain && r.shots == shots) subset.push_back(r);
      const std::string stem = "dice_" + domain + "_" + std::to_string(shots) + "shot";
      write_text(out_dir / (stem + ".svg"),
                 bar_chart_svg(subset, domain, "Mean Dice, " + domain + " domain, " + std::to_string(shots) + "-shot"));
    }
  }

  std::ostringstream manifest;
  manifest << "commit = " << PNODE_COMMIT_ID << '\n';
  manifest << "seeds =";
  for (std::size_t i = 0; i < seeds.size(); ++i) manifest << (i ? "," : " ") << seeds[i];
  manifest << '\n';
  manifest << "source_images = " << source->size() << '\n';
  manifest << "shifted_images = " << shifted->size() << '\n';
  manifest << "train_images = " << split.train.indices.size() << '\n';
  manifest << "test_images = " << split.test.indices.size() << '\n';
  manifest << "\n[config]\n" << config.echo();
  manifest << "\n[variants]\n" << log.str();
  write_text(out_dir / "manifest.txt", manifest.str());
  return result;
}

}  // namespace pnode
