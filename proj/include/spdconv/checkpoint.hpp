#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spdconv/data.hpp"
#include "spdconv/runtime.hpp"

namespace spdconv {

/// One entry of a checkpoint's tensor table: logical dims, f32 payload.
struct CheckpointTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

/// File format: magic "SPDC", u32 version (1), u32 tensor count, then per
/// tensor u32 name length + bytes, u32 rank, u32 dims, f32 payload.
/// Everything little-endian. save/load round-trips bit-exactly.
void save_checkpoint(const std::string& path,
                     const std::vector<CheckpointTensor>& tensors);
std::vector<CheckpointTensor> load_checkpoint(const std::string& path);

/// Snapshot of a network's full named state (parameters + running stats).
std::vector<CheckpointTensor> snapshot_state(CompiledNet<float>& net);

/// Loads a checkpoint into a network; every name must resolve and every
/// shape must match, with the first offender named in the error.
void restore_state(CompiledNet<float>& net,
                   const std::vector<CheckpointTensor>& tensors);

}  // namespace spdconv
