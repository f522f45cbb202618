#include "maanet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <vector>

#include <nlohmann/json.hpp>

namespace maanet {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kBgMean = 0.45;
constexpr double kBgStd = 0.12;
constexpr double kBlotchSigma = 2.0;
constexpr double kBlotchClamp = 2.5;  // keeps interior below interior_level + 3*echo
constexpr double kCalcBrightLo = 0.93, kCalcBrightHi = 0.98;

void smooth_gaussian(std::vector<double>& field, int h, int w, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[size_t(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[size_t(i + radius)];
  }
  for (auto& k : kernel) k /= sum;

  auto reflect = [](int i, int n) {
    if (i < 0) return -i - 1;
    if (i >= n) return 2 * n - 1 - i;
    return i;
  };
  std::vector<double> tmp(field.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[size_t(i + radius)] * field[size_t(y) * w + reflect(x + i, w)];
      tmp[size_t(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[size_t(i + radius)] * tmp[size_t(reflect(y + i, h)) * w + x];
      field[size_t(y) * w + x] = acc;
    }
}

// Unit-variance smoothed noise field.
std::vector<double> noise_field(int h, int w, double sigma, RngStream& rng) {
  std::vector<double> f(static_cast<size_t>(h) * w);
  for (auto& v : f) v = rng.normal();
  smooth_gaussian(f, h, w, sigma);
  double mean = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
  double var = 0;
  for (double v : f) var += (v - mean) * (v - mean);
  var /= static_cast<double>(f.size());
  const double inv = var > 0 ? 1.0 / std::sqrt(var) : 1.0;
  for (auto& v : f) v = (v - mean) * inv;
  return f;
}

// Radial boundary of the perturbed ellipse in the normalized frame.
double boundary_radius(const NoduleSpec& s, double phi) {
  double rho = 1.0;
  for (int i = 0; i < 3; ++i)
    rho += s.shape_coef[size_t(i)] * std::cos((i + 2) * phi + s.shape_phase[size_t(i)]);
  for (int i = 0; i < 3; ++i)
    rho += s.margin_coef[size_t(i)] * std::cos(s.margin_harm[size_t(i)] * phi +
                                               s.margin_phase[size_t(i)]);
  return rho;
}

// Approximate signed distance (pixels) from an image-plane point to the
// support boundary; negative inside.
double signed_distance_px(const NoduleSpec& s, int size, double px, double py) {
  const double dx = px / size - s.cx;
  const double dy = py / size - s.cy;
  const double ct = std::cos(s.theta), st = std::sin(s.theta);
  const double u = (dx * ct + dy * st) / s.a;
  const double v = (-dx * st + dy * ct) / s.b;
  const double r = std::hypot(u, v);
  const double phi = std::atan2(v, u);
  const double rho = boundary_radius(s, phi);
  const double local = size * std::hypot(s.a * std::cos(phi), s.b * std::sin(phi));
  return (r - rho) * local;
}

std::string spec_canonical(const NoduleSpec& s) {
  char buf[1024];
  std::snprintf(buf, sizeof buf,
                "cx=%.17g;cy=%.17g;a=%.17g;b=%.17g;th=%.17g;si=%.17g;"
                "sc=%.17g,%.17g,%.17g;sp=%.17g,%.17g,%.17g;"
                "mr=%.17g;mh=%d,%d,%d;mc=%.17g,%.17g,%.17g;mp=%.17g,%.17g,%.17g;"
                "bs=%.17g;nc=%d;eh=%.17g;il=%.17g",
                s.cx, s.cy, s.a, s.b, s.theta, s.shape_irregularity, s.shape_coef[0],
                s.shape_coef[1], s.shape_coef[2], s.shape_phase[0], s.shape_phase[1],
                s.shape_phase[2], s.margin_roughness, s.margin_harm[0], s.margin_harm[1],
                s.margin_harm[2], s.margin_coef[0], s.margin_coef[1], s.margin_coef[2],
                s.margin_phase[0], s.margin_phase[1], s.margin_phase[2], s.boundary_sigma,
                s.n_calcifications, s.echo_heterogeneity, s.interior_level);
  return buf;
}

nlohmann::ordered_json spec_to_json(const NoduleSpec& s) {
  nlohmann::ordered_json j;
  j["cx"] = s.cx;
  j["cy"] = s.cy;
  j["a"] = s.a;
  j["b"] = s.b;
  j["theta"] = s.theta;
  j["shape_irregularity"] = s.shape_irregularity;
  j["shape_coef"] = s.shape_coef;
  j["shape_phase"] = s.shape_phase;
  j["margin_roughness"] = s.margin_roughness;
  j["margin_harm"] = s.margin_harm;
  j["margin_coef"] = s.margin_coef;
  j["margin_phase"] = s.margin_phase;
  j["boundary_sigma"] = s.boundary_sigma;
  j["n_calcifications"] = s.n_calcifications;
  j["echo_heterogeneity"] = s.echo_heterogeneity;
  j["interior_level"] = s.interior_level;
  return j;
}

NoduleSpec spec_from_json(const nlohmann::json& j) {
  NoduleSpec s;
  s.cx = j.at("cx");
  s.cy = j.at("cy");
  s.a = j.at("a");
  s.b = j.at("b");
  s.theta = j.at("theta");
  s.shape_irregularity = j.at("shape_irregularity");
  s.shape_coef = j.at("shape_coef");
  s.shape_phase = j.at("shape_phase");
  s.margin_roughness = j.at("margin_roughness");
  s.margin_harm = j.at("margin_harm");
  s.margin_coef = j.at("margin_coef");
  s.margin_phase = j.at("margin_phase");
  s.boundary_sigma = j.at("boundary_sigma");
  s.n_calcifications = j.at("n_calcifications");
  s.echo_heterogeneity = j.at("echo_heterogeneity");
  s.interior_level = j.at("interior_level");
  return s;
}

}  // namespace

double rotated_bbox_ratio(double a, double b, double theta) {
  const double ct = std::cos(theta), st = std::sin(theta);
  const double w = std::sqrt(a * a * ct * ct + b * b * st * st);
  const double h = std::sqrt(a * a * st * st + b * b * ct * ct);
  return h / w;
}

LabelVector derive_labels(const NoduleSpec& spec, int malig_k) {
  LabelVector l{};
  l[1] = spec.n_calcifications >= 1 ? 1 : 0;
  l[2] = spec.shape_irregularity > AttributeBands::kShapeGapMid ? 1 : 0;
  l[3] = rotated_bbox_ratio(spec.a, spec.b, spec.theta) > 1.0 ? 1 : 0;
  l[4] = spec.boundary_sigma > AttributeBands::kBoundaryGapMid ? 1 : 0;
  l[5] = spec.margin_roughness > AttributeBands::kMarginGapMid ? 1 : 0;
  l[6] = spec.echo_heterogeneity > AttributeBands::kEchoGapMid ? 1 : 0;
  const int suspicious = l[1] + l[2] + l[3] + l[4] + l[5] + l[6];
  l[0] = suspicious >= malig_k ? 1 : 0;
  return l;
}

NoduleSpec sample_spec(const GenConfig& config, RngStream& rng) {
  using B = AttributeBands;
  NoduleSpec s;

  bool pos[6];
  for (int i = 0; i < 6; ++i) pos[i] = rng.bernoulli(config.pos_prob[size_t(i)]);

  // calcification
  s.n_calcifications = pos[0] ? static_cast<int>(rng.uniform_int(B::kCalcPosLo, B::kCalcPosHi)) : 0;

  // shape irregularity over harmonics 2..4
  s.shape_irregularity = pos[1] ? rng.uniform(B::kShapePosLo, B::kShapePosHi)
                                : rng.uniform(B::kShapeNegLo, B::kShapeNegHi);
  {
    double weights[3], sum = 0;
    for (int i = 0; i < 3; ++i) {
      weights[i] = rng.uniform(0.2, 1.0);
      sum += weights[i];
    }
    for (int i = 0; i < 3; ++i) {
      s.shape_coef[size_t(i)] = s.shape_irregularity * weights[i] / sum;
      s.shape_phase[size_t(i)] = rng.uniform(0.0, 2.0 * kPi);
    }
  }

  // aspect ratio of the rotated bounding box
  const double ratio = pos[2] ? rng.uniform(B::kRatioPosLo, B::kRatioPosHi)
                              : rng.uniform(B::kRatioNegLo, B::kRatioNegHi);
  s.theta = rng.uniform(-0.3, 0.3);

  // boundary blur
  s.boundary_sigma = pos[3] ? rng.uniform(B::kBoundaryPosLo, B::kBoundaryPosHi)
                            : rng.uniform(B::kBoundaryNegLo, B::kBoundaryNegHi);

  // margin roughness over three harmonics drawn from 8..16
  s.margin_roughness = pos[4] ? rng.uniform(B::kMarginPosLo, B::kMarginPosHi)
                              : rng.uniform(B::kMarginNegLo, B::kMarginNegHi);
  {
    double weights[3], sum = 0;
    for (int i = 0; i < 3; ++i) {
      s.margin_harm[size_t(i)] = static_cast<int>(rng.uniform_int(8, 16));
      weights[i] = rng.uniform(0.2, 1.0);
      sum += weights[i];
    }
    for (int i = 0; i < 3; ++i) {
      s.margin_coef[size_t(i)] = s.margin_roughness * weights[i] / sum;
      s.margin_phase[size_t(i)] = rng.uniform(0.0, 2.0 * kPi);
    }
  }

  // echo heterogeneity and interior brightness
  s.echo_heterogeneity = pos[5] ? rng.uniform(B::kEchoPosLo, B::kEchoPosHi)
                                : rng.uniform(B::kEchoNegLo, B::kEchoNegHi);
  s.interior_level = rng.uniform(0.18, 0.34);

  // Solve semi-axes for the requested bbox ratio at this rotation. The
  // geometric-mean size is capped so the whole perturbed support plus a 3 px
  // border always fits in the image.
  const double ct = std::cos(s.theta), st = std::sin(s.theta);
  const double q2 = (ratio * ratio * ct * ct - st * st) / (ct * ct - ratio * ratio * st * st);
  const double q = std::sqrt(q2);  // b/a
  const double amp = 1.0 + s.shape_irregularity + s.margin_roughness;
  const double axis = std::sqrt(std::max(q, 1.0 / q));
  const double budget = 0.5 - 3.0 / config.size - 0.03;
  const double m_hi = std::min(0.27, budget / (amp * axis));
  const double m_lo = std::min(0.16, 0.8 * m_hi);
  const double m = rng.uniform(m_lo, m_hi);
  s.a = m / std::sqrt(q);
  s.b = m * std::sqrt(q);

  const double extent = amp * std::max(s.a, s.b) + 3.0 / config.size;
  s.cx = rng.uniform(extent, 1.0 - extent);
  s.cy = rng.uniform(extent, 1.0 - extent);
  return s;
}

Sample render(const NoduleSpec& spec, const GenConfig& config, RngStream& rng) {
  const int S = config.size;
  Sample sample;
  sample.spec = spec;
  sample.labels = derive_labels(spec, config.malig_k);

  // Fixed RNG consumption order: background, blotches, jitter, calc sites.
  std::vector<double> bg = noise_field(S, S, config.speckle_sigma, rng);
  std::vector<double> blotch = noise_field(S, S, kBlotchSigma, rng);
  sample.gain = rng.uniform(0.9, 1.1);
  sample.offset = rng.uniform(-0.05, 0.05);

  std::vector<double> img(static_cast<size_t>(S) * S);
  sample.mask = ImageU8(S, S, 0);
  const double inv2s2 = 1.0 / (2.0 * spec.boundary_sigma * spec.boundary_sigma);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const size_t idx = static_cast<size_t>(y) * S + x;
      const double back = kBgMean + kBgStd * bg[idx];
      const double d = signed_distance_px(spec, S, x + 0.5, y + 0.5);
      // Blur feathers outward only, so interior pixels keep the pure
      // interior texture and the mask marks the exact unblurred support.
      const double alpha = d <= 0 ? 1.0 : std::exp(-d * d * inv2s2);
      const double blot = std::clamp(blotch[idx], -kBlotchClamp, kBlotchClamp);
      const double interior = spec.interior_level + spec.echo_heterogeneity * blot;
      img[idx] = back + alpha * (interior - back);
      if (d <= 0) sample.mask.at(y, x) = 1;
    }
  }

  // Bright specks fully inside the support.
  for (int i = 0; i < spec.n_calcifications; ++i) {
    const double radius = rng.uniform(1.0, 2.0);
    const double bright = rng.uniform(kCalcBrightLo, kCalcBrightHi);
    double px = 0, py = 0;
    bool placed = false;
    for (int attempt = 0; attempt < 200; ++attempt) {
      px = (spec.cx + rng.uniform(-1.0, 1.0) * std::max(spec.a, spec.b)) * S;
      py = (spec.cy + rng.uniform(-1.0, 1.0) * std::max(spec.a, spec.b)) * S;
      if (signed_distance_px(spec, S, px, py) <= -(radius + 1.5)) {
        placed = true;
        break;
      }
    }
    if (!placed) continue;
    const int x0 = std::max(0, static_cast<int>(px - radius - 1));
    const int x1 = std::min(S - 1, static_cast<int>(px + radius + 1));
    const int y0 = std::max(0, static_cast<int>(py - radius - 1));
    const int y1 = std::min(S - 1, static_cast<int>(py + radius + 1));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (std::hypot(x + 0.5 - px, y + 0.5 - py) <= radius)
          img[static_cast<size_t>(y) * S + x] = bright;
  }

  sample.image = ImageF(S, S);
  for (size_t i = 0; i < img.size(); ++i)
    sample.image.v[i] =
        static_cast<float>(std::clamp(img[i] * sample.gain + sample.offset, 0.0, 1.0));
  return sample;
}

std::uint64_t sample_seed(const GenConfig& config, std::int64_t index) {
  return hash_combine(config.seed, static_cast<std::uint64_t>(index));
}

Sample make_sample(const GenConfig& config, std::int64_t index) {
  RngStream rng(sample_seed(config, index));
  for (int attempt = 0; attempt < 10; ++attempt) {
    const NoduleSpec spec = sample_spec(config, rng);
    Sample s = render(spec, config, rng);
    long area = 0;
    for (auto px : s.mask.v) area += px ? 1 : 0;
    if (area >= 16) {
      char idbuf[16];
      std::snprintf(idbuf, sizeof idbuf, "s%05lld", static_cast<long long>(index));
      s.id = idbuf;
      return s;
    }
  }
  throw DataError("make_sample: degenerate nodule support after 10 attempts, index " +
                  std::to_string(index));
}

void generate_dataset(const GenConfig& config, std::int64_t n,
                      const std::filesystem::path& out_dir) {
  if (n < 10) throw ConfigError("generate_dataset: n must be >= 10");
  const double fsum =
      config.split_fractions[0] + config.split_fractions[1] + config.split_fractions[2];
  if (std::abs(fsum - 1.0) > 1e-9)
    throw ConfigError("generate_dataset: split fractions must sum to 1");

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "masks", ec);
  if (!fs::exists(out_dir / "images") || !fs::exists(out_dir / "masks"))
    throw DataError("generate_dataset: cannot create output directories under " +
                    out_dir.string());

  // Split assignment by shuffled index.
  std::vector<std::int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  RngStream shuffle_rng = substream(config.seed, "split");
  for (std::int64_t i = n - 1; i > 0; --i)
    std::swap(order[size_t(i)], order[size_t(shuffle_rng.uniform_int(0, i))]);
  const std::int64_t n_train = static_cast<std::int64_t>(std::floor(n * config.split_fractions[0]));
  const std::int64_t n_val = static_cast<std::int64_t>(std::floor(n * config.split_fractions[1]));
  std::vector<std::string> split(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    split[size_t(order[size_t(i)])] = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");

  std::ofstream manifest(out_dir / "manifest.jsonl");
  std::ofstream specs(out_dir / "specs.jsonl");
  if (!manifest || !specs)
    throw DataError("generate_dataset: cannot open manifest files under " + out_dir.string());

  for (std::int64_t i = 0; i < n; ++i) {
    Sample s = make_sample(config, i);
    const std::string img_rel = "images/" + s.id + ".pgm";
    const std::string mask_rel = "masks/" + s.id + ".pgm";
    write_pgm(out_dir / img_rel, quantize(s.image));
    write_pgm(out_dir / mask_rel, mask_to_bytes(s.mask));

    char digest[32];
    std::snprintf(digest, sizeof digest, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(spec_canonical(s.spec))));

    nlohmann::ordered_json rec;
    rec["id"] = s.id;
    rec["image"] = img_rel;
    rec["mask"] = mask_rel;
    rec["malignancy"] = s.labels[0];
    rec["calc"] = s.labels[1];
    rec["shape"] = s.labels[2];
    rec["ratio"] = s.labels[3];
    rec["boundary"] = s.labels[4];
    rec["margin"] = s.labels[5];
    rec["echo"] = s.labels[6];
    rec["split"] = split[size_t(i)];
    rec["digest"] = digest;
    manifest << rec.dump() << "\n";

    nlohmann::ordered_json sj;
    sj["id"] = s.id;
    sj["spec"] = spec_to_json(s.spec);
    sj["gain"] = s.gain;
    sj["offset"] = s.offset;
    sj["labels"] = s.labels;
    specs << sj.dump() << "\n";
  }
  manifest.close();
  specs.close();
  if (!manifest || !specs)
    throw DataError("generate_dataset: write failed under " + out_dir.string());

  std::ofstream cf(out_dir / "genconfig.json");
  cf << gen_config_to_json(config) << "\n";
}

std::string gen_config_to_json(const GenConfig& config) {
  nlohmann::ordered_json cj;
  cj["size"] = config.size;
  cj["seed"] = config.seed;
  cj["pos_prob"] = config.pos_prob;
  cj["speckle_sigma"] = config.speckle_sigma;
  cj["malig_k"] = config.malig_k;
  cj["split_fractions"] = config.split_fractions;
  return cj.dump(2);
}

GenConfig gen_config_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("generator config: bad JSON: ") + e.what());
  }
  GenConfig c;
  if (j.contains("size")) c.size = j.at("size");
  if (j.contains("seed")) c.seed = j.at("seed");
  if (j.contains("pos_prob")) c.pos_prob = j.at("pos_prob").get<std::array<double, 6>>();
  if (j.contains("speckle_sigma")) c.speckle_sigma = j.at("speckle_sigma");
  if (j.contains("malig_k")) c.malig_k = j.at("malig_k");
  if (j.contains("split_fractions"))
    c.split_fractions = j.at("split_fractions").get<std::array<double, 3>>();
  if (c.size < 16) throw ConfigError("generator config: size must be >= 16");
  if (c.malig_k < 0 || c.malig_k > 6)
    throw ConfigError("generator config: malig_k must be in 0..6");
  for (double p : c.pos_prob)
    if (p < 0.0 || p > 1.0) throw ConfigError("generator config: probabilities must be in [0,1]");
  return c;
}

NoduleSpec load_spec_json(const std::string& line, double* gain, double* offset,
                          LabelVector* labels, std::string* id) {
  const auto j = nlohmann::json::parse(line);
  if (id) *id = j.at("id");
  if (gain) *gain = j.at("gain");
  if (offset) *offset = j.at("offset");
  if (labels) *labels = j.at("labels");
  return spec_from_json(j.at("spec"));
}

}  // namespace maanet
