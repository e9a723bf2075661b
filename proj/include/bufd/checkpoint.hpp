#pragma once

#include <cstdint>
#include <string>

#include "bufd/models.hpp"
#include "bufd/params.hpp"

namespace bufd {

constexpr char kCheckpointMagic[4] = {'B', 'U', 'F', 'D'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  ModelConfig model;
  std::uint64_t train_seed = 0;
  int epoch = -1;
};

struct Checkpoint {
  ParameterSet<float> params;
  CheckpointMeta meta;
};

/// Binary layout: "BUFD" magic, u32 LE format version, u64 LE manifest byte
/// length, UTF-8 JSON manifest (model config, training metadata, named
/// tensor directory with shapes/offsets), then the payload of concatenated
/// little-endian f32 tensor blobs. Written atomically.
void save_checkpoint(const std::string& path, const ParameterSet<float>& params,
                     const CheckpointMeta& meta);

/// Bit-exact inverse of save_checkpoint. Distinct IoError kinds for bad
/// magic, version mismatch, truncation, and manifest/payload disagreement.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace bufd
