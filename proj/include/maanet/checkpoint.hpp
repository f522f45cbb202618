#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "maanet/model.hpp"
#include "maanet/sgd.hpp"

namespace maanet {

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json_text);

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

// Binary archive, magic "MAAN". Named tensors cover parameters and BN
// running buffers in registry order; optimizer velocities are stored under
// "opt.<param>". save -> load -> save is byte-identical.
struct Checkpoint {
  std::uint32_t version = 1;
  std::string model_config_json;
  std::uint64_t config_digest = 0;
  std::int32_t epoch = 0;
  std::vector<std::uint64_t> rng_states;
  std::vector<CheckpointTensor> tensors;
  bool has_optimizer = false;
  std::vector<CheckpointTensor> velocities;
};

Checkpoint snapshot(const MaaNet<float>& model, const SgdState<float>* opt, int epoch,
                    const std::vector<std::uint64_t>& rng_states);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Fails on a config digest mismatch; otherwise overwrites parameters,
// buffers and (when present and requested) optimizer velocities.
void restore(MaaNet<float>& model, const Checkpoint& ckpt, SgdState<float>* opt = nullptr);

// Convenience: build the model the checkpoint was saved from and load into it.
MaaNet<float> load_model(const std::filesystem::path& path);

}  // namespace maanet
