#pragma once

// Binary parameter checkpoints:
//   "SMTXCKPT" magic, u64 tensor count, then per tensor
//   u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values[]
// All integers and floats little-endian.

#include <iosfwd>
#include <string>
#include <vector>

#include "semtx/tensor.hpp"

namespace semtx {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

}  // namespace semtx
