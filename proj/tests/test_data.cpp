#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "maanet/data.hpp"
#include "maanet/synth.hpp"

using namespace maanet;
namespace fs = std::filesystem;

namespace {
fs::path make_dataset(const std::string& name, int n, GenConfig cfg = {}) {
  const fs::path dir = fs::temp_directory_path() / ("maanet_data_" + name);
  fs::remove_all(dir);
  generate_dataset(cfg, n, dir);
  return dir;
}
}  // namespace

TEST_CASE("pad_to_square splits padding evenly, extra pixel bottom/right") {
  ImageF img(100, 60, 0.5f);
  ImageF padded = pad_to_square(img);
  CHECK(padded.h == 100);
  CHECK(padded.w == 100);
  for (int y = 0; y < 100; ++y) {
    for (int x = 0; x < 20; ++x) CHECK(padded.at(y, x) == 0.f);
    for (int x = 20; x < 80; ++x) CHECK(padded.at(y, x) == 0.5f);
    for (int x = 80; x < 100; ++x) CHECK(padded.at(y, x) == 0.f);
  }

  ImageF square(32, 32, 0.25f);
  ImageF same = pad_to_square(square);
  CHECK(same.v == square.v);

  ImageF odd(101, 100, 1.f);
  ImageF p = pad_to_square(odd);
  CHECK(p.h == 101);
  CHECK(p.w == 101);
  for (int y = 0; y < 101; ++y) {
    CHECK(p.at(y, 0) == 1.f);     // zero columns split 0 left
    CHECK(p.at(y, 100) == 0.f);   // 1 right
  }

  CHECK_THROWS_AS(pad_to_square(ImageF{}), ContractError);
}

TEST_CASE("bilinear resize of a constant is constant and convex") {
  ImageF c(8, 8, 0.3f);
  ImageF up = resize_bilinear(c, 20, 20);
  for (float v : up.v) CHECK(v == doctest::Approx(0.3));

  ImageF spot(4, 4, 0.f);
  spot.at(1, 2) = 1.f;
  ImageF u2 = resize_bilinear(spot, 8, 8);
  float maxv = 0;
  for (float v : u2.v) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
    maxv = std::max(maxv, v);
  }
  CHECK(maxv <= 1.f);
}

TEST_CASE("nearest-neighbour mask resize stays binary") {
  RngStream rng(5);
  ImageU8 mask(64, 64, 0);
  for (auto& v : mask.v) v = rng.bernoulli(0.3) ? 1 : 0;
  ImageU8 small = resize_nearest(mask, 4, 4);
  for (auto v : small.v) CHECK((v == 0 || v == 1));
}

TEST_CASE("augment disabled is the identity") {
  RngStream rng(9);
  ImageF img(32, 32);
  for (auto& v : img.v) v = float(rng.uniform());
  ImageU8 mask(32, 32, 1);
  ImageF img2 = img;
  ImageU8 mask2 = mask;
  AugmentPolicy p;
  p.enabled = false;
  augment(img2, mask2, p, rng);
  CHECK(img2.v == img.v);
  CHECK(mask2.v == mask.v);
}

TEST_CASE("double horizontal flip is the identity") {
  RngStream rng(11);
  ImageF img(16, 16);
  for (auto& v : img.v) v = float(rng.uniform());
  CHECK(hflip(hflip(img)).v == img.v);
}

TEST_CASE("image/mask co-transformation is pixel-exact for flips and crops") {
  RngStream rng(13);
  for (int t = 0; t < 20; ++t) {
    // encode the mask into the image so any desynchronization is visible
    ImageU8 mask(24, 24, 0);
    for (auto& v : mask.v) v = rng.bernoulli(0.4) ? 1 : 0;
    ImageF img(24, 24);
    for (size_t i = 0; i < img.v.size(); ++i) img.v[i] = float(mask.v[i]);

    const int y0 = int(rng.uniform_int(0, 8)), x0 = int(rng.uniform_int(0, 8));
    ImageF ci = crop(img, y0, x0, 16, 16);
    ImageU8 cm = crop(mask, y0, x0, 16, 16);
    ImageF fi = hflip(ci);
    ImageU8 fm = hflip(cm);
    for (size_t i = 0; i < fi.v.size(); ++i) CHECK(fi.v[i] == float(fm.v[i]));
  }
}

TEST_CASE("augmented mask never gains pixels beyond the scaled original") {
  GenConfig cfg;
  Sample s = make_sample(cfg, 3);
  long before = 0;
  for (auto v : s.mask.v) before += v ? 1 : 0;
  RngStream rng(17);
  AugmentPolicy p;
  for (int t = 0; t < 10; ++t) {
    ImageF img = s.image;
    ImageU8 mask = s.mask;
    augment(img, mask, p, rng);
    CHECK(img.h == s.image.h);
    CHECK(mask.h == s.mask.h);
    long after = 0;
    for (auto v : mask.v) after += v ? 1 : 0;
    // scale <= 1.15 then crop to the original size: area can grow by at most
    // the square of the scale factor
    CHECK(after <= long(std::ceil(before * 1.15 * 1.15)) + 8);
  }
}

TEST_CASE("kfold: sizes within one, disjoint, exhaustive, deterministic") {
  auto folds = kfold_split(100, 5, 77);
  CHECK(folds.size() == 5);
  std::set<int> all;
  for (const auto& f : folds) {
    CHECK(f.size() == 20);
    for (int idx : f) CHECK(all.insert(idx).second);  // disjoint
  }
  CHECK(all.size() == 100);

  auto folds2 = kfold_split(100, 5, 77);
  CHECK(folds == folds2);
  auto folds3 = kfold_split(100, 5, 78);
  CHECK(folds != folds3);

  auto uneven = kfold_split(102, 5, 1);
  size_t mn = 1000, mx = 0;
  for (const auto& f : uneven) {
    mn = std::min(mn, f.size());
    mx = std::max(mx, f.size());
  }
  CHECK(mx - mn <= 1);

  CHECK_THROWS_AS(kfold_split(3, 5, 1), ConfigError);
}

TEST_CASE("PGM quantization and round trip") {
  ImageF img(2, 2);
  img.at(0, 0) = 0.5f;   // 0.5*255 + 0.5 = 128.0 -> 128 (round half up)
  img.at(0, 1) = 0.0f;
  img.at(1, 0) = 1.0f;
  img.at(1, 1) = 0.25f;  // 64.25 -> 64
  ImageU8 q = quantize(img);
  CHECK(q.at(0, 0) == 128);
  CHECK(q.at(0, 1) == 0);
  CHECK(q.at(1, 0) == 255);
  CHECK(q.at(1, 1) == 64);

  const fs::path p = fs::temp_directory_path() / "maanet_roundtrip.pgm";
  write_pgm(p, q);
  ImageU8 back = read_pgm(p);
  CHECK(back.h == q.h);
  CHECK(back.w == q.w);
  CHECK(back.v == q.v);
  fs::remove(p);

  CHECK_THROWS_AS(read_pgm(fs::temp_directory_path() / "does_not_exist.pgm"), DataError);
}

TEST_CASE("batch stream: drop-last in training, keep-all in evaluation") {
  GenConfig cfg;
  cfg.split_fractions = {0.65, 0.2, 0.15};
  const fs::path dir = make_dataset("stream", 100, cfg);
  Dataset ds = Dataset::load(dir);
  CHECK(ds.manifest.split_indices("train").size() == 65);

  AugmentPolicy aug;
  BatchStream train(ds, "train", 20, 64, 4, aug, 1, true);
  CHECK(train.batches_per_epoch() == 3);  // 65 -> 3 batches, 5 dropped
  train.start_epoch(0);
  int count = 0, rows = 0;
  while (auto b = train.next()) {
    ++count;
    rows += b->images.shape()[0];
    CHECK(b->images.shape() == Shape{20, 1, 64, 64});
    CHECK(b->labels.shape() == Shape{20, 7});
    CHECK(b->masks_small.shape() == Shape{20, 1, 4, 4});
  }
  CHECK(count == 3);
  CHECK(rows == 60);

  AugmentPolicy no_aug;
  no_aug.enabled = false;
  BatchStream eval(ds, "train", 20, 64, 4, no_aug, 1, false);
  eval.start_epoch(0);
  rows = 0;
  while (auto b = eval.next()) rows += b->images.shape()[0];
  CHECK(rows == 65);  // evaluation keeps the short final batch

  CHECK_THROWS_AS(BatchStream(ds, "nosplit", 20, 64, 4, aug, 1, false), DataError);
  CHECK_THROWS_AS(BatchStream(ds, "train", 1, 64, 4, aug, 1, true), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("epoch shuffling is seeded and training order differs from manifest order") {
  GenConfig cfg;
  const fs::path dir = make_dataset("shuffle", 60, cfg);
  Dataset ds = Dataset::load(dir);
  AugmentPolicy no_aug;
  no_aug.enabled = false;
  auto first_batch = [&](std::uint64_t seed, int epoch) {
    BatchStream s(ds, "train", 4, 64, 4, no_aug, seed, true);
    s.start_epoch(epoch);
    return s.next()->indices;
  };
  CHECK(first_batch(5, 0) == first_batch(5, 0));
  CHECK(first_batch(5, 0) != first_batch(5, 1));
  fs::remove_all(dir);
}

TEST_CASE("mask downsampling conserves mass and keeps ones") {
  ImageU8 ones(16, 16, 1);
  ImageF small = downsample_area(mask_to_float(ones), 4);
  for (float v : small.v) CHECK(v == doctest::Approx(1.0));

  RngStream rng(23);
  ImageU8 mask(64, 64, 0);
  for (auto& v : mask.v) v = rng.bernoulli(0.5) ? 1 : 0;
  ImageF full = mask_to_float(mask);
  ImageF down = downsample_area(full, 16);
  double mean_full = 0, mean_down = 0;
  for (float v : full.v) mean_full += v;
  for (float v : down.v) mean_down += v;
  mean_full /= full.v.size();
  mean_down /= down.v.size();
  CHECK(mean_full == doctest::Approx(mean_down).epsilon(1e-6));

  // half-covered 16x16 mask at 4x4: area is preserved exactly
  ImageU8 half(16, 16, 0);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 16; ++x) half.at(y, x) = 1;
  ImageF d = downsample_area(mask_to_float(half), 4);
  double total = 0;
  for (float v : d.v) total += v * 16;  // cell area is 16 px
  CHECK(total == doctest::Approx(128.0).epsilon(1e-6));
}

TEST_CASE("manifest loader rejects duplicates and non-binary labels") {
  GenConfig cfg;
  const fs::path dir = make_dataset("manifest", 12, cfg);
  Manifest good = Manifest::load(dir);
  CHECK(good.records.size() == 12);

  // corrupt: duplicate id
  {
    std::ifstream in(dir / "manifest.jsonl");
    std::string first;
    std::getline(in, first);
    std::ofstream out(dir / "manifest.jsonl", std::ios::app);
    out << first << "\n";
  }
  CHECK_THROWS_AS(Manifest::load(dir), DataError);
  fs::remove_all(dir);
}
