#include "maanet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

namespace maanet {

Manifest Manifest::load(const std::filesystem::path& dataset_dir) {
  const auto path = dataset_dir / "manifest.jsonl";
  std::ifstream f(path);
  if (!f) throw DataError("Manifest::load: cannot open " + path.string());
  Manifest m;
  std::string line;
  std::set<std::string> seen;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw DataError("Manifest::load: bad record in " + path.string() + ": " + e.what());
    }
    ManifestRecord r;
    r.id = j.at("id");
    r.image_path = j.at("image");
    r.mask_path = j.at("mask");
    r.labels = {j.at("malignancy"), j.at("calc"),   j.at("shape"), j.at("ratio"),
                j.at("boundary"),   j.at("margin"), j.at("echo")};
    r.split = j.at("split");
    r.digest = j.at("digest");
    for (int l : r.labels)
      if (l != 0 && l != 1) throw DataError("Manifest::load: non-binary label for id " + r.id);
    if (!seen.insert(r.id).second) throw DataError("Manifest::load: duplicate id " + r.id);
    m.records.push_back(std::move(r));
  }
  if (m.records.empty()) throw DataError("Manifest::load: empty manifest " + path.string());
  return m;
}

std::vector<int> Manifest::split_indices(const std::string& split) const {
  std::vector<int> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

Dataset Dataset::load(const std::filesystem::path& dataset_dir) {
  Dataset d;
  d.root = dataset_dir;
  d.manifest = Manifest::load(dataset_dir);
  d.images.reserve(d.manifest.records.size());
  d.masks.reserve(d.manifest.records.size());
  for (const auto& r : d.manifest.records) {
    const auto img_path = dataset_dir / r.image_path;
    const auto mask_path = dataset_dir / r.mask_path;
    if (!std::filesystem::exists(img_path))
      throw DataError("Dataset::load: missing image " + img_path.string());
    if (!std::filesystem::exists(mask_path))
      throw DataError("Dataset::load: missing mask " + mask_path.string());
    d.images.push_back(read_pgm(img_path));
    d.masks.push_back(bytes_to_mask(read_pgm(mask_path)));
  }
  return d;
}

void augment(ImageF& image, ImageU8& mask, const AugmentPolicy& policy, RngStream& rng) {
  if (!policy.enabled) return;
  const int S_h = image.h, S_w = image.w;
  const double u = rng.uniform(policy.scale_min, policy.scale_max);
  const int nh = std::max(S_h, static_cast<int>(std::lround(S_h * u)));
  const int nw = std::max(S_w, static_cast<int>(std::lround(S_w * u)));
  if (nh != S_h || nw != S_w) {
    image = resize_bilinear(image, nh, nw);
    mask = resize_nearest(mask, nh, nw);
  }
  const int y0 = static_cast<int>(rng.uniform_int(0, nh - S_h));
  const int x0 = static_cast<int>(rng.uniform_int(0, nw - S_w));
  if (nh != S_h || nw != S_w) {
    image = crop(image, y0, x0, S_h, S_w);
    mask = crop(mask, y0, x0, S_h, S_w);
  }
  if (rng.bernoulli(policy.flip_prob)) {
    image = hflip(image);
    mask = hflip(mask);
  }
}

std::vector<std::vector<int>> kfold_split(int n, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("kfold_split: k must be >= 2");
  if (n < k) throw ConfigError("kfold_split: need n >= k");
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  RngStream rng = substream(seed, "kfold");
  for (int i = n - 1; i > 0; --i)
    std::swap(order[size_t(i)], order[size_t(rng.uniform_int(0, i))]);
  std::vector<std::vector<int>> folds(static_cast<size_t>(k));
  for (int i = 0; i < n; ++i) folds[size_t(i % k)].push_back(order[size_t(i)]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

BatchStream::BatchStream(const Dataset& dataset, const std::string& split, int batch_size,
                         int input_size, int map_size, const AugmentPolicy& augment_policy,
                         std::uint64_t seed, bool training)
    : dataset_(dataset),
      augment_(augment_policy),
      seed_(seed),
      batch_size_(batch_size),
      input_size_(input_size),
      map_size_(map_size),
      training_(training) {
  if (batch_size_ < 2) throw ConfigError("BatchStream: batch_size must be >= 2 (BatchNorm)");
  if (input_size_ % map_size_ != 0)
    throw ConfigError("BatchStream: map size must divide input size");
  base_indices_ = dataset.manifest.split_indices(split);
  if (base_indices_.empty()) throw DataError("BatchStream: split '" + split + "' is empty");
  start_epoch(0);
}

void BatchStream::start_epoch(int epoch) {
  cursor_ = 0;
  order_ = base_indices_;
  rng_ = RngStream(hash_combine(seed_, static_cast<std::uint64_t>(epoch)));
  if (training_) {
    for (int i = static_cast<int>(order_.size()) - 1; i > 0; --i)
      std::swap(order_[size_t(i)], order_[size_t(rng_.uniform_int(0, i))]);
  }
}

std::optional<Batch> BatchStream::next() {
  const int n = static_cast<int>(order_.size());
  const int remaining = n - cursor_;
  if (remaining <= 0) return std::nullopt;
  if (training_ && remaining < batch_size_) return std::nullopt;  // drop-last
  const int bs = std::min(batch_size_, remaining);

  Batch batch;
  batch.images = Tensor<float>::uninit({bs, 1, input_size_, input_size_});
  batch.labels = Tensor<float>::uninit({bs, 7});
  batch.masks_small = Tensor<float>::uninit({bs, 1, map_size_, map_size_});
  batch.indices.reserve(static_cast<size_t>(bs));

  const int factor = input_size_ / map_size_;
  for (int b = 0; b < bs; ++b) {
    const int idx = order_[size_t(cursor_ + b)];
    batch.indices.push_back(idx);
    const ManifestRecord& rec = dataset_.manifest.records[size_t(idx)];

    ImageF img = to_float(dataset_.images[size_t(idx)]);
    ImageU8 mask = dataset_.masks[size_t(idx)];
    if (img.h != img.w) {
      img = pad_to_square(img);
      mask = pad_to_square(mask);
    }
    if (img.h != input_size_) {
      img = resize_bilinear(img, input_size_, input_size_);
      mask = resize_nearest(mask, input_size_, input_size_);
    }
    if (training_) augment(img, mask, augment_, rng_);

    for (int y = 0; y < input_size_; ++y)
      for (int x = 0; x < input_size_; ++x) batch.images.at(b, 0, y, x) = img.at(y, x);
    // Soft [0,1] spatial target at map resolution via area pooling.
    const ImageF small = downsample_area(mask_to_float(mask), factor);
    for (int y = 0; y < map_size_; ++y)
      for (int x = 0; x < map_size_; ++x) batch.masks_small.at(b, 0, y, x) = small.at(y, x);
    for (int c = 0; c < 7; ++c)
      batch.labels.at(b, c) = static_cast<float>(rec.labels[size_t(c)]);
  }
  cursor_ += bs;
  return batch;
}

int BatchStream::batches_per_epoch() const {
  const int n = static_cast<int>(base_indices_.size());
  return training_ ? n / batch_size_ : (n + batch_size_ - 1) / batch_size_;
}

}  // namespace maanet
