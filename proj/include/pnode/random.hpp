#pragma once

#include <cstdint>
#include <random>

#include "pnode/tensor.hpp"

namespace pnode {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a base seed and a label, so that
/// adding a consumer does not shift the draws of the others.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t label);

/// He-normal initialized conv kernel [out, in, k, k].
Tensor he_normal_kernel(std::size_t out, std::size_t in, std::size_t k, Rng& rng, double gain = 1.0);

}  // namespace pnode
