#pragma once

// Threshold-sweep evaluation of OSR scores. OOD samples are the positives.
// A sample is flagged unknown when s > tau; s <= tau means accepted as known.

#include <cstdint>
#include <span>
#include <vector>

#include "ohz/common.hpp"

namespace ohz {

/// Points ordered from the strictest threshold (+inf) to the loosest (-inf).
struct RocCurve {
  std::vector<double> thresholds;
  std::vector<double> tpr;
  std::vector<double> fpr;
};

struct OscrPoint {
  double threshold;
  double fpr_ood;  // OOD accepted as known
  double ccr;      // ID correctly classified and accepted
};

/// Points ordered from tau = -inf to tau = +inf.
struct OscrCurve {
  std::vector<OscrPoint> points;
  double area = 0.0;
};

struct OperatingPoint {
  double threshold;
  double fpr_percent;
};

struct DecisionStats {
  double threshold;
  double fpr_id;              // fraction of ID with s > tau
  std::size_t id_kept;        // ID with s <= tau
  std::size_t id_total;
  double retention_rate;      // 1 - fpr_id == id_kept / id_total
  double ood_rejection_rate;  // fraction of OOD with s > tau
};

RocCurve roc(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Area under the ROC curve (percent) by exact trapezoidal integration over
/// the sweep; equals the Mann-Whitney statistic with ties counted as 1/2.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Step-wise average precision with OOD as positives (percent).
double aupr(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Largest observed threshold (or -inf) at which at least `target` of OOD
/// scores exceed it, and the ID false-positive rate there (percent).
OperatingPoint fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                          double target = 0.95);

/// Correct-classification rate against OOD false acceptance, with area.
OscrCurve oscr(std::span<const double> id_scores, std::span<const std::int64_t> id_predictions,
               std::span<const std::int64_t> id_labels, std::span<const double> ood_scores);

/// Decision statistics at the fpr_at_tpr threshold for `target_rejection`.
DecisionStats decision_stats(std::span<const double> id_scores,
                             std::span<const double> ood_scores,
                             double target_rejection = 0.95);

}  // namespace ohz
