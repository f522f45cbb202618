#pragma once

#include <array>
#include <string>
#include <vector>

#include "maanet/common.hpp"
#include "maanet/image.hpp"

namespace maanet {

struct ConfusionMetrics {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  double acc = 0, spec = 0, prec = 0, rec = 0, f1 = 0;
  // 0/0 ratios are reported as 0 with the corresponding flag raised.
  bool spec_degenerate = false, prec_degenerate = false, rec_degenerate = false,
       f1_degenerate = false;
};

// Threshold rule: predicted positive iff score >= threshold.
ConfusionMetrics confusion_metrics(const std::vector<double>& scores,
                                   const std::vector<int>& labels, double threshold = 0.5);

// Mann-Whitney AUC via rank sort with average ranks for ties; exactly equals
// the pairwise statistic mean([s_pos > s_neg] + 0.5 [s_pos == s_neg]).
// Throws ContractError when only one class is present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

enum class OverlapKind { Coverage, Iou };

struct HitRateResult {
  double rate = 0;
  long hits = 0;
  long evaluated = 0;
  long excluded_empty = 0;  // samples with empty ground truth, not scored
};

// Localization hit rate: upsample each map to mask resolution (bilinear),
// binarize at map_threshold (>=), overlap = |A and G| / |G| (or IoU), hit iff
// overlap strictly exceeds overlap_threshold.
HitRateResult hit_rate(const std::vector<ImageF>& maps, const std::vector<ImageU8>& masks,
                       double map_threshold = 0.5, double overlap_threshold = 0.5,
                       OverlapKind kind = OverlapKind::Coverage);

struct HeadAuc {
  double value = 0;
  bool defined = false;
};

struct MetricsReport {
  std::array<HeadAuc, 7> head_auc;  // [malig, calc, shape, ratio, boundary, margin, echo]
  ConfusionMetrics malignancy;
  double avg_attribute_auc = 0;
  int defined_attribute_aucs = 0;
  HitRateResult hits;
  bool hit_rate_defined = false;
  long samples = 0;

  std::string to_json() const;  // one object per evaluation run
};

}  // namespace maanet
