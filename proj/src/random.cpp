#include "pnode/random.hpp"

#include <cmath>

namespace pnode {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t label) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (label + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor he_normal_kernel(std::size_t out, std::size_t in, std::size_t k, Rng& rng, double gain) {
  const double stddev = gain * std::sqrt(2.0 / static_cast<double>(in * k * k));
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<double> w(out * in * k * k);
  for (auto& v : w) v = normal(rng);
  return Tensor({out, in, k, k}, std::move(w));
}

}  // namespace pnode
