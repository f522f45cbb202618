#include "maanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

namespace maanet {

ConfusionMetrics confusion_metrics(const std::vector<double>& scores,
                                   const std::vector<int>& labels, double threshold) {
  if (scores.empty() || scores.size() != labels.size())
    throw ContractError("confusion_metrics: need N >= 1 scores with matching labels");
  ConfusionMetrics m;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool pos = labels[i] != 0;
    if (pred && pos) ++m.tp;
    else if (pred && !pos) ++m.fp;
    else if (!pred && !pos) ++m.tn;
    else ++m.fn;
  }
  const double n = static_cast<double>(scores.size());
  m.acc = (m.tp + m.tn) / n;
  auto ratio = [](long num, long den, bool& flag) {
    if (den == 0) {
      flag = true;
      return 0.0;
    }
    return static_cast<double>(num) / den;
  };
  m.spec = ratio(m.tn, m.tn + m.fp, m.spec_degenerate);
  m.prec = ratio(m.tp, m.tp + m.fp, m.prec_degenerate);
  m.rec = ratio(m.tp, m.tp + m.fn, m.rec_degenerate);
  if (m.prec + m.rec == 0.0) {
    m.f1 = 0.0;
    m.f1_degenerate = true;
  } else {
    m.f1 = 2.0 * m.prec * m.rec / (m.prec + m.rec);
  }
  return m;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw ContractError("auc: scores/labels size mismatch");
  long n_pos = 0, n_neg = 0;
  for (int l : labels) (l != 0 ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw ContractError("auc: undefined, needs at least one positive and one negative");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return a < b;
  });

  // Average ranks within tie groups, then the rank-sum statistic.
  double pos_rank_sum = 0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k)
      if (labels[order[k]] != 0) pos_rank_sum += avg_rank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1) / 2.0) / (np * nn);
}

HitRateResult hit_rate(const std::vector<ImageF>& maps, const std::vector<ImageU8>& masks,
                       double map_threshold, double overlap_threshold, OverlapKind kind) {
  if (maps.size() != masks.size() || maps.empty())
    throw ContractError("hit_rate: maps/masks size mismatch");
  HitRateResult r;
  for (size_t s = 0; s < maps.size(); ++s) {
    const ImageU8& g = masks[s];
    long g_area = 0;
    for (auto px : g.v) g_area += px ? 1 : 0;
    if (g_area == 0) {
      ++r.excluded_empty;
      continue;
    }
    ImageF up = (maps[s].h == g.h && maps[s].w == g.w) ? maps[s]
                                                       : resize_bilinear(maps[s], g.h, g.w);
    long inter = 0, a_area = 0;
    for (int y = 0; y < g.h; ++y)
      for (int x = 0; x < g.w; ++x) {
        const bool a = up.at(y, x) >= map_threshold;
        a_area += a ? 1 : 0;
        if (a && g.at(y, x)) ++inter;
      }
    double overlap;
    if (kind == OverlapKind::Coverage) {
      overlap = static_cast<double>(inter) / static_cast<double>(g_area);
    } else {
      const long uni = a_area + g_area - inter;
      overlap = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    ++r.evaluated;
    if (overlap > overlap_threshold) ++r.hits;  // strictly larger than
  }
  if (r.evaluated == 0)
    throw ContractError("hit_rate: all ground-truth masks empty, metric undefined");
  r.rate = static_cast<double>(r.hits) / static_cast<double>(r.evaluated);
  return r;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  static const char* names[7] = {"malig", "calc", "shape", "ratio", "boundary", "margin", "echo"};
  nlohmann::ordered_json aucs;
  for (int c = 0; c < 7; ++c) {
    if (head_auc[size_t(c)].defined)
      aucs[names[c]] = head_auc[size_t(c)].value;
    else
      aucs[names[c]] = nullptr;
  }
  j["auc"] = aucs;
  j["avg_attribute_auc"] =
      defined_attribute_aucs > 0 ? nlohmann::ordered_json(avg_attribute_auc)
                                 : nlohmann::ordered_json(nullptr);
  nlohmann::ordered_json mal;
  mal["acc"] = malignancy.acc;
  mal["f1"] = malignancy.f1;
  mal["spec"] = malignancy.spec;
  mal["rec"] = malignancy.rec;
  mal["prec"] = malignancy.prec;
  mal["tp"] = malignancy.tp;
  mal["fp"] = malignancy.fp;
  mal["tn"] = malignancy.tn;
  mal["fn"] = malignancy.fn;
  j["malignancy"] = mal;
  if (hit_rate_defined) {
    nlohmann::ordered_json h;
    h["rate"] = hits.rate;
    h["hits"] = hits.hits;
    h["evaluated"] = hits.evaluated;
    h["excluded_empty"] = hits.excluded_empty;
    j["hit_rate"] = h;
  } else {
    j["hit_rate"] = nullptr;
  }
  j["samples"] = samples;
  return j.dump(2);
}

}  // namespace maanet
