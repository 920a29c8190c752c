#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "hglm/model.hpp"
#include "hglm/training.hpp"

namespace hglm {

// Binary layout (all integers and floats little-endian):
//   "HGLM" | u32 version | u32 len + ModelConfig text | u32 tensor count
//   per tensor: u32 len + name | u32 rank | u64 dims[rank] | f64 data[numel]
//   u64 tokens_seen | u8 has_optimizer
//   if has_optimizer: u64 step | u32 count | tensors "m.<name>" then "v.<name>" (same layout)
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    LanguageModel model;
    std::optional<OptimizerState> optimizer;
    std::int64_t tokens_seen = 0;
};

void write_checkpoint(std::ostream& os, const LanguageModel& model, const OptimizerState* optimizer,
                      std::int64_t tokens_seen);
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::string& path, const LanguageModel& model, const OptimizerState* optimizer = nullptr,
                     std::int64_t tokens_seen = 0);
Checkpoint load_checkpoint(const std::string& path);
// Rejects a checkpoint whose tensors do not fit `expected`, naming the first
// mismatched tensor.
Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected);

}  // namespace hglm
