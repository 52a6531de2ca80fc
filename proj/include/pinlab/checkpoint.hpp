#pragma once

#include "pinlab/tensor.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pinlab {

// Layout (all integers unsigned 32-bit little-endian):
//   "SPCK" | version | tensor count |
//   per tensor: name length | UTF-8 name | rank | dims... | float32 LE data
inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

using TensorList = std::vector<NamedTensor>;

std::string encode_checkpoint(const TensorList& tensors);
TensorList decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const TensorList& tensors);
TensorList load_checkpoint(const std::string& path);

const Tensor<float>& find_tensor(const TensorList& tensors, std::string_view name);
const Tensor<float>* find_tensor_or_null(const TensorList& tensors, std::string_view name);

// 64-bit integers stored as four 16-bit chunks (low first), exact in float32.
Tensor<float> pack_u64(std::uint64_t v);
std::uint64_t unpack_u64(const Tensor<float>& t, std::string_view what);

}  // namespace pinlab
