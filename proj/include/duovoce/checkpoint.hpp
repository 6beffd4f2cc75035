// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Binary parameter checkpoints.
//
// Layout (little-endian):
//   "DVCK" | version u32 | count u32 |
//   count x ( name_len u16 | name bytes (UTF-8) | rank u8 | dims u32[rank] |
//             data f32[prod(dims)] )
// Tensors are written in lexicographic name order, so identical parameter
// sets always serialize to identical bytes.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "duovoce/tensor.hpp"

namespace duovoce {

inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::map<std::string, Tensor>;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> serialize_checkpoint(const NamedTensors& tensors);
NamedTensors deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path,
                     const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace duovoce
