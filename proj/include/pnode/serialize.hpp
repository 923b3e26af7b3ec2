#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>

#include "pnode/tensor.hpp"

namespace pnode {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NDT1 layout, little-endian: "NDT1", u32 rank, rank x u64 extents, then
// numel x f64 values in row-major order.

void write_ndt1(std::ostream& out, const Tensor& tensor);
Tensor read_ndt1(std::istream& in);

void save_ndt1(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_ndt1(const std::filesystem::path& path);

// Little-endian scalar helpers shared by the checkpoint format.
void write_u32(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32(std::istream& in);

}  // namespace pnode
