#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "maanet/image.hpp"
#include "maanet/synth.hpp"
#include "maanet/tensor.hpp"

namespace maanet {

struct ManifestRecord {
  std::string id;
  std::string image_path;  // relative to dataset root
  std::string mask_path;
  LabelVector labels{};  // [malignancy, calc, shape, ratio, boundary, margin, echo]
  std::string split;     // train | val | test
  std::string digest;
};

struct Manifest {
  std::vector<ManifestRecord> records;

  static Manifest load(const std::filesystem::path& dataset_dir);
  std::vector<int> split_indices(const std::string& split) const;
};

// Dataset with all rasters resident (8-bit, desk scale).
struct Dataset {
  std::filesystem::path root;
  Manifest manifest;
  std::vector<ImageU8> images;
  std::vector<ImageU8> masks;

  static Dataset load(const std::filesystem::path& dataset_dir);
  int size() const { return static_cast<int>(manifest.records.size()); }
};

struct AugmentPolicy {
  bool enabled = true;
  double scale_min = 1.0, scale_max = 1.15;  // resize factor before the crop
  double flip_prob = 0.5;
};

// Scale jitter + random crop + horizontal flip; identical geometric
// transform on image and mask (bilinear vs nearest resampling).
void augment(ImageF& image, ImageU8& mask, const AugmentPolicy& policy, RngStream& rng);

// k test folds differing in size by at most one; every index appears in
// exactly one fold.
std::vector<std::vector<int>> kfold_split(int n, int k, std::uint64_t seed);

struct Batch {
  Tensor<float> images;       // N x 1 x S x S
  Tensor<float> labels;       // N x 7
  Tensor<float> masks_small;  // N x 1 x h x w, area-pooled soft targets
  std::vector<int> indices;   // dataset indices of the batch rows
};

// Sequential batch stream over one split. Training mode shuffles per epoch,
// augments, and drops the final short batch; evaluation keeps order and all
// samples.
class BatchStream {
 public:
  BatchStream(const Dataset& dataset, const std::string& split, int batch_size, int input_size,
              int map_size, const AugmentPolicy& augment_policy, std::uint64_t seed,
              bool training);

  void start_epoch(int epoch);
  std::optional<Batch> next();
  int batches_per_epoch() const;
  int sample_count() const { return static_cast<int>(order_.size()); }

 private:
  const Dataset& dataset_;
  std::vector<int> base_indices_;  // split members in manifest order
  std::vector<int> order_;         // epoch order (shuffled when training)
  AugmentPolicy augment_;
  std::uint64_t seed_;
  int batch_size_, input_size_, map_size_;
  bool training_;
  int cursor_ = 0;
  RngStream rng_{0};
};

}  // namespace maanet
