#include "semtx/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "semtx/error.hpp"

namespace semtx {

namespace {

constexpr char kMagic[8] = {'S', 'M', 'T', 'X', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw ParseError("checkpoint truncated", 0);
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  out.write(kMagic, sizeof kMagic);
  put_le<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, 2);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
    for (double v : t.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw Error("failed to write checkpoint");
}

std::vector<NamedTensor> read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw ParseError("not a checkpoint file", 0);
  const auto count = get_le<std::uint64_t>(in);
  std::vector<NamedTensor> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = get_le<std::uint32_t>(in);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw ParseError("checkpoint truncated", 0);
    const auto rank = get_le<std::uint32_t>(in);
    if (rank == 0 || rank > 2) throw ParseError("unsupported tensor rank in checkpoint", 0);
    std::uint64_t dims[2] = {1, 1};
    for (std::uint32_t r = 0; r < rank; ++r) dims[r + (rank == 1 ? 1 : 0)] = get_le<std::uint64_t>(in);
    std::vector<double> values(dims[0] * dims[1]);
    for (double& v : values) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
    out.push_back({std::move(name), Tensor::from(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                                                 std::move(values))});
  }
  return out;
}

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_checkpoint(out, tensors);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path, 0);
  return read_checkpoint(in);
}

}  // namespace semtx
