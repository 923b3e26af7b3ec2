#include "pnode/serialize.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>

namespace pnode {
namespace {

constexpr std::array<char, 4> kMagic{'N', 'D', 'T', '1'};

template <typename U>
void write_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U read_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw IoError("NDT1: unexpected end of stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }

void write_ndt1(std::ostream& out, const Tensor& tensor) {
  out.write(kMagic.data(), kMagic.size());
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
  for (auto e : tensor.shape()) write_le<std::uint64_t>(out, e);
  for (double v : tensor.data()) write_le(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw IoError("NDT1: write failed");
}

Tensor read_ndt1(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError("NDT1: bad magic");
  const auto rank = read_le<std::uint32_t>(in);
  if (rank > 16) throw IoError("NDT1: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = read_le<std::uint64_t>(in);
  const auto n = shape_numel(shape);
  if (n > (std::size_t{1} << 32)) throw IoError("NDT1: implausible element count");
  std::vector<double> data(n);
  for (auto& v : data) v = std::bit_cast<double>(read_le<std::uint64_t>(in));
  return Tensor(std::move(shape), std::move(data));
}

void save_ndt1(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_ndt1(out, tensor);
}

Tensor load_ndt1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_ndt1(in);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace pnode
