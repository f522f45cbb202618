#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "maanet/checkpoint.hpp"
#include "maanet/data.hpp"
#include "maanet/losses.hpp"
#include "maanet/metrics.hpp"
#include "maanet/model.hpp"

namespace maanet {

struct TrainConfig {
  ModelConfig model;
  int epochs = 30;  // desk scale; the full-size recipe runs 150
  int batch_size = 20;
  double lr0 = 0.01;
  std::vector<int> lr_milestones = {20};  // lr multiplied by lr_decay at each
  double lr_decay = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  bool spatial_loss_on = true;
  LossWeights weights;
  AugmentPolicy augment;

  void validate() const;
  std::array<bool, kHeadCount> active_heads() const;
};

// Named ablation presets mirroring the ablation table rows.
// baseline | attr | attr_attn | full | single:<calc|shape|ratio|boundary|margin|echo>
void apply_ablation(TrainConfig& config, const std::string& name);

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& json_text);

double lr_at(const TrainConfig& config, int epoch);

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  LossReport losses;
  MetricsReport val;
};

struct RunLog {
  std::vector<EpochLog> epochs;
  std::optional<MetricsReport> test;
  int best_epoch = -1;
  double best_val_malig_auc = 0;

  std::string to_json() const;
  std::uint64_t digest() const;  // bitwise hash over every logged number
};

struct TrainResult {
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;
  RunLog log;
};

// Full training run; writes final.ckpt, best.ckpt, runlog.json and the
// resolved config next to them when out_dir is given.
TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Eval-mode metrics on one split: per-head AUC, malignancy confusion block
// at threshold 0.5, mean attribute AUC, localization hit rate.
MetricsReport evaluate(MaaNet<float>& model, const Dataset& dataset, const std::string& split,
                       int batch_size = 20);

struct AblationRow {
  std::string name;
  std::uint64_t seed = 0;
  MetricsReport metrics;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::string to_table() const;
  std::string to_json() const;
};

// Trains {Baseline, Baseline+Attr, Baseline+Attr+Attn, MAA-Net} (optionally
// the six single-attribute variants) for each seed, sharing data splits and
// per-module init streams so the comparison is controlled.
AblationResult ablation_suite(const Dataset& dataset, const TrainConfig& base,
                              const std::vector<std::uint64_t>& seeds,
                              bool include_single_attributes = false,
                              const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct CrossValidationResult {
  std::vector<MetricsReport> folds;
  MetricsReport mean;
  MetricsReport stddev;
  std::string to_table() const;
  std::string to_json() const;
};

CrossValidationResult cross_validate(const Dataset& dataset, const TrainConfig& config, int k = 5);

// Per sample: the 7 head maps upsampled to the input size plus a copy of the
// input, as <id>_<head>.pgm with head in {malig, calc, shape, ratio,
// boundary, margin, echo, input}.
void export_heatmaps(MaaNet<float>& model, const Dataset& dataset,
                     const std::vector<int>& indices, const std::filesystem::path& out_dir);

}  // namespace maanet
