#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pnode/attacks.hpp"
#include "pnode/config.hpp"
#include "pnode/episodes.hpp"
#include "pnode/gradcheck.hpp"
#include "pnode/protoseg.hpp"

namespace pnode {

/// Training stopped on a non-finite loss or gradient.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { sgd, sgd_momentum };
std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::sgd_momentum;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double max_grad_norm = 2.0;  // global l2 clip; 0 disables
  std::size_t episodes = 2000;
  std::size_t eval_every = 0;  // 0 disables progress callbacks
  bool sat_enabled = false;
  double sat_epsilon = 0.025;
  std::uint64_t seed = 0;
  std::size_t n_way = 1;
  std::size_t k_shot = 1;
  std::size_t n_query = 1;

  void validate() const;
};

/// Plain or heavy-ball SGD over a model's named parameters.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, double momentum);

  /// grads follow model.named_parameters() order.
  void step(SegModel& model, const std::vector<Tensor>& grads);
  std::size_t steps() const { return steps_; }

 private:
  OptimizerKind kind_;
  double lr_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
  std::size_t steps_ = 0;
};

struct TrainResult {
  SegModel model;
  std::vector<double> loss_trace;  // one entry per optimizer step
  std::size_t optimizer_steps = 0;
};

/// Called every cfg.eval_every episodes with (episode index, model).
using TrainCallback = std::function<void(std::size_t, const SegModel&)>;

/// Rescales `grads` so their joint l2 norm is at most max_norm; returns the
/// norm before clipping.
double clip_gradients(std::vector<Tensor>& grads, double max_norm);

/// Loss and parameter gradients for one episode.
std::pair<double, std::vector<Tensor>> loss_and_gradients(const SegModel& model, const Episode& episode);

TrainResult train_standard(const SegModel& model, const DatasetView& train, const TrainConfig& cfg,
                           const TrainCallback& callback = {});

/// Per episode: one pass yields the parameter gradient on E_orig together with
/// the support and query input gradients, from which E^S and E^Q are built
/// with FGSM at cfg.sat_epsilon; then one step each on E_orig, E^S, E^Q.
TrainResult train_sat(const SegModel& model, const DatasetView& train, const TrainConfig& cfg,
                      const TrainCallback& callback = {});

/// 2|A n B| / (|A| + |B|) over pixels equal to class_id; 1 when both are empty.
double dice(const LabelMap& pred, const LabelMap& truth, int class_id);

/// Mean Dice over query images and episode classes.
double episode_dice(const SegModel& model, const Episode& episode);

struct EvalSettings {
  std::size_t n_way = 1;
  std::size_t k_shot = 1;
  std::size_t n_query = 1;
  std::size_t n_episodes = 200;
  std::size_t n_repeats = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EvalRow {
  std::string attack;  // "clean" or family name
  std::string target;  // "none" for clean
  std::size_t shots = 1;
  double mean_dice = 0.0;
  double std_dice = 0.0;  // population std of the per-repeat means
  std::vector<double> repeat_means;
  std::size_t episodes = 0;  // per repeat
};

struct EvalReport {
  std::vector<EvalRow> rows;  // clean first, then attacks in request order
  const EvalRow& find(const std::string& attack) const;
};

/// Episode j of repeat r is drawn with derive_seed(derive_seed(seed, r), j)
/// so every model sees the same episodes.
std::uint64_t eval_episode_seed(std::uint64_t seed, std::size_t repeat, std::size_t index);

EvalReport evaluate(const SegModel& model, const DatasetView& test, const std::vector<AttackSpec>& attacks,
                    const EvalSettings& settings);

/// Query-attack grid FGSM(0.02), PGD(0.01, 10), SMIA(0.04, 10, lambda 1),
/// overridable through attack.* config keys.
std::vector<AttackSpec> attack_grid(const Config& config);

TrainConfig train_config_from(const Config& config);

struct ResultRow {
  std::string model;
  std::string domain;
  std::string attack;
  std::string target;
  std::size_t shots = 1;
  double mean_dice = 0.0;
  double std_dice = 0.0;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;  // averaged over seeds
  std::vector<std::string> failures;
  std::filesystem::path output_dir;

  bool ok() const { return failures.empty(); }
  const ResultRow* find(const std::string& model, const std::string& domain, const std::string& attack) const;
};

/// Trains every requested variant for every seed, evaluates in-domain and
/// cross-domain, and writes results.csv, per-seed results, SVG charts,
/// checkpoints, loss traces and manifest.txt under output.dir.
ExperimentResult run_experiment(const std::filesystem::path& config_path);
ExperimentResult run_experiment(const Config& config);

struct GradSuiteEntry {
  std::string name;  // parameter name, "support.c.k" or "query.q"
  GradCheckResult result;
};

/// finite_diff_check of the episode loss against every parameter tensor and
/// every support and query image, `probes` coordinates each.
std::vector<GradSuiteEntry> model_gradient_suite(const SegModel& model, const Episode& episode, std::size_t probes,
                                                 const GradCheckOptions& options = {});

// report.cpp
std::string results_csv(const std::vector<ResultRow>& rows);
std::string bar_chart_svg(const std::vector<ResultRow>& rows, const std::string& domain, const std::string& title);

}  // namespace pnode
