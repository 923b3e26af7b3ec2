#include "pnode/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pnode/ops.hpp"

namespace pnode {

namespace {

struct Evaluation {
  double value;
  std::uint64_t branches;
};

Evaluation evaluate(const ScalarFn& f, const Tensor& x) {
  BranchRecorder rec;
  const double v = f(x).item();
  return {v, rec.fingerprint()};
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarFn& f, const Tensor& x, std::size_t n_probes,
                                  const GradCheckOptions& options) {
  if (n_probes == 0) throw ValidationError("finite_diff_check: n_probes must be >= 1");
  const Tensor base = x.detach();

  Tape tape;
  const Tensor xv = tape.variable(base);
  std::uint64_t center_branches = 0;
  {
    BranchRecorder rec;
    const Tensor loss = f(xv);
    center_branches = rec.fingerprint();
    tape.backward(loss);
  }
  const Tensor analytic = *xv.grad();

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> candidates;
  if (n_probes <= base.numel()) {
    candidates.resize(base.numel());
    std::iota(candidates.begin(), candidates.end(), 0);
    std::shuffle(candidates.begin(), candidates.end(), rng);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, base.numel() - 1);
    for (std::size_t i = 0; i < 4 * n_probes; ++i) candidates.push_back(pick(rng));
  }

  GradCheckResult result;
  for (std::size_t idx : candidates) {
    if (result.probes == n_probes) break;
    auto values = base.to_vector();
    const double x0 = values[idx];
    values[idx] = x0 + options.step;
    const Evaluation up = evaluate(f, Tensor(base.shape(), values));
    values[idx] = x0 - options.step;
    const Evaluation down = evaluate(f, Tensor(base.shape(), values));
    if (options.skip_nonsmooth && (up.branches != center_branches || down.branches != center_branches)) {
      ++result.skipped_nonsmooth;
      continue;
    }
    ++result.probes;
    const double numeric = (up.value - down.value) / (2.0 * options.step);
    const double exact = analytic[idx];
    const double denom = std::max({std::abs(numeric), std::abs(exact), options.magnitude_floor});
    const double rel = std::abs(numeric - exact) / denom;
    if (rel >= result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_index = idx;
      result.worst_numeric = numeric;
      result.worst_analytic = exact;
    }
  }
  return result;
}

}  // namespace pnode
