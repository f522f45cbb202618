#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "maanet/common.hpp"
#include "maanet/image.hpp"

namespace maanet {

// Attribute label order within the 6-vector: calc, shape, ratio, boundary,
// margin, echo. Full 7-vector prepends malignancy.
using LabelVector = std::array<int, 7>;

struct NoduleSpec {
  double cx = 0.5, cy = 0.5;      // centre, fraction of image side
  double a = 0.2, b = 0.2;        // semi-axes, fractions
  double theta = 0.0;             // rotation, radians
  double shape_irregularity = 0;  // summed amplitude of harmonics 2..4
  std::array<double, 3> shape_coef{};   // per-harmonic amplitudes (k = 2,3,4)
  std::array<double, 3> shape_phase{};
  double margin_roughness = 0;    // summed amplitude of harmonics 8..16
  std::array<int, 3> margin_harm{};
  std::array<double, 3> margin_coef{};
  std::array<double, 3> margin_phase{};
  double boundary_sigma = 0.7;    // edge blur width in pixels
  int n_calcifications = 0;
  double echo_heterogeneity = 0;  // internal blotch contrast
  double interior_level = 0.3;
};

struct GenConfig {
  int size = 64;
  std::uint64_t seed = 1;
  std::array<double, 6> pos_prob = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  double speckle_sigma = 1.0;
  int malig_k = 3;  // malignant iff >= k suspicious attributes
  std::array<double, 3> split_fractions = {0.6, 0.2, 0.2};
};

struct Sample {
  std::string id;
  ImageF image;
  ImageU8 mask;  // 1 exactly on the unblurred nodule support
  LabelVector labels{};
  NoduleSpec spec;
  double gain = 1.0, offset = 0.0;  // global intensity jitter applied at render
};

// Class-conditional parameter bands; the gap between bands is what makes
// every attribute decidable from the NoduleSpec parameters (and, by
// construction, from the pixels).
struct AttributeBands {
  static constexpr double kShapeNegLo = 0.00, kShapeNegHi = 0.04;
  static constexpr double kShapePosLo = 0.16, kShapePosHi = 0.28;
  static constexpr double kShapeGapMid = 0.08;

  static constexpr double kRatioNegLo = 0.55, kRatioNegHi = 0.85;
  static constexpr double kRatioPosLo = 1.15, kRatioPosHi = 1.55;

  static constexpr double kBoundaryNegLo = 0.5, kBoundaryNegHi = 1.0;
  static constexpr double kBoundaryPosLo = 2.5, kBoundaryPosHi = 4.0;
  static constexpr double kBoundaryGapMid = 1.75;

  static constexpr double kMarginNegLo = 0.00, kMarginNegHi = 0.02;
  static constexpr double kMarginPosLo = 0.13, kMarginPosHi = 0.22;
  static constexpr double kMarginGapMid = 0.06;

  static constexpr double kEchoNegLo = 0.00, kEchoNegHi = 0.03;
  static constexpr double kEchoPosLo = 0.10, kEchoPosHi = 0.18;
  static constexpr double kEchoGapMid = 0.065;

  static constexpr int kCalcPosLo = 2, kCalcPosHi = 4;
};

// Height/width of the axis-aligned bounding box of the rotated ellipse.
double rotated_bbox_ratio(double a, double b, double theta);

// Labels are a pure function of the NoduleSpec; the generator and all
// integrity checks share this.
LabelVector derive_labels(const NoduleSpec& spec, int malig_k);

// Draws attribute classes, then parameters from the class-conditional bands.
NoduleSpec sample_spec(const GenConfig& config, RngStream& rng);

Sample render(const NoduleSpec& spec, const GenConfig& config, RngStream& rng);

// Per-sample seed, exposed so any sample is reproducible in isolation.
std::uint64_t sample_seed(const GenConfig& config, std::int64_t index);
Sample make_sample(const GenConfig& config, std::int64_t index);

// Writes n samples (images/, masks/, manifest.jsonl, specs.jsonl,
// genconfig.json) with a 60/20/20 split by shuffled index (fractions
// configurable).
void generate_dataset(const GenConfig& config, std::int64_t n,
                      const std::filesystem::path& out_dir);

// Parses one specs.jsonl line; any of the out-params may be null.
NoduleSpec load_spec_json(const std::string& line, double* gain, double* offset,
                          LabelVector* labels, std::string* id);

std::string gen_config_to_json(const GenConfig& config);
GenConfig gen_config_from_json(const std::string& json_text);

}  // namespace maanet
