#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "pnode/tensor.hpp"

namespace pnode {

using ScalarFn = std::function<Tensor(const Tensor&)>;

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor: gradients smaller than this are compared absolutely.
  double magnitude_floor = 1e-3;
  std::uint64_t seed = 0x5eed;
  // Skip coordinates whose stencil x +- step changes a relu sign or clamp
  // branch (see BranchRecorder); central differences are not defined across a kink.
  bool skip_nonsmooth = true;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_numeric = 0.0;
  double worst_analytic = 0.0;
  std::size_t probes = 0;
  std::size_t skipped_nonsmooth = 0;
};

/// Compares the tape gradient of scalar `f` at `x` against central
/// differences on `n_probes` randomly chosen coordinates (distinct when
/// n_probes <= numel). `f` must record on the tape of its argument. Fewer
/// than n_probes are compared only when too few smooth coordinates exist.
GradCheckResult finite_diff_check(const ScalarFn& f, const Tensor& x, std::size_t n_probes,
                                  const GradCheckOptions& options = {});

}  // namespace pnode
