#include "ohz/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ohz {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_nonempty(std::span<const double> id_scores, std::span<const double> ood_scores,
                      const char* what) {
  if (id_scores.empty() || ood_scores.empty()) {
    throw UsageError(std::string(what) + ": ID and OOD score sets must be nonempty");
  }
  for (double s : id_scores) {
    if (!std::isfinite(s)) throw ComputeError(std::string(what) + ": non-finite ID score");
  }
  for (double s : ood_scores) {
    if (!std::isfinite(s)) throw ComputeError(std::string(what) + ": non-finite OOD score");
  }
}

/// One step of the descending sweep: samples at exactly `score`, and the
/// running counts strictly above it.
struct SweepLevel {
  double score;
  std::size_t ood_at;
  std::size_t id_at;
};

/// Distinct scores, descending, with per-level counts.
std::vector<SweepLevel> descending_levels(std::span<const double> id_scores,
                                          std::span<const double> ood_scores) {
  std::vector<std::pair<double, bool>> all;  // (score, is_ood)
  all.reserve(id_scores.size() + ood_scores.size());
  for (double s : id_scores) all.emplace_back(s, false);
  for (double s : ood_scores) all.emplace_back(s, true);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<SweepLevel> levels;
  for (const auto& [score, is_ood] : all) {
    if (levels.empty() || levels.back().score != score) levels.push_back({score, 0, 0});
    if (is_ood) {
      ++levels.back().ood_at;
    } else {
      ++levels.back().id_at;
    }
  }
  return levels;
}

/// Minimum number of OOD samples above tau for tpr >= target.
std::size_t required_positives(double target, std::size_t positives) {
  if (!(target >= 0.0 && target <= 1.0)) throw UsageError("target rate must be in [0, 1]");
  // The small slack absorbs representation error in products like 0.95 * 100.
  const double needed = std::ceil(target * static_cast<double>(positives) - 1e-9);
  return static_cast<std::size_t>(std::max(0.0, needed));
}

struct Threshold {
  double tau;
  std::size_t ood_above;
  std::size_t id_above;
};

Threshold conservative_threshold(std::span<const double> id_scores,
                                 std::span<const double> ood_scores, double target) {
  const std::size_t need = required_positives(target, ood_scores.size());
  // Walk thresholds from strictest to loosest; counts above tau only grow.
  // tau = +inf flags nothing; tau = level.score flags everything above it.
  std::size_t ood_above = 0;
  std::size_t id_above = 0;
  if (need == 0) {
    // +inf is not an observed score; the strictest observed one qualifies.
    const double top = std::max(*std::max_element(id_scores.begin(), id_scores.end()),
                                *std::max_element(ood_scores.begin(), ood_scores.end()));
    return {top, 0, 0};
  }
  for (const SweepLevel& level : descending_levels(id_scores, ood_scores)) {
    if (ood_above >= need) return {level.score, ood_above, id_above};
    ood_above += level.ood_at;
    id_above += level.id_at;
  }
  return {-kInf, ood_above, id_above};
}

}  // namespace

RocCurve roc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  require_nonempty(id_scores, ood_scores, "roc");
  const double p = static_cast<double>(ood_scores.size());
  const double n = static_cast<double>(id_scores.size());
  RocCurve curve;
  curve.thresholds.push_back(kInf);
  curve.tpr.push_back(0.0);
  curve.fpr.push_back(0.0);
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (const SweepLevel& level : descending_levels(id_scores, ood_scores)) {
    // At tau = level.score only samples strictly above are flagged.
    curve.thresholds.push_back(level.score);
    curve.tpr.push_back(static_cast<double>(tp) / p);
    curve.fpr.push_back(static_cast<double>(fp) / n);
    tp += level.ood_at;
    fp += level.id_at;
  }
  curve.thresholds.push_back(-kInf);
  curve.tpr.push_back(1.0);
  curve.fpr.push_back(1.0);
  return curve;
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  require_nonempty(id_scores, ood_scores, "auroc");
  // Trapezoids in integer units: each step adds id_at * (2*tp + ood_at),
  // twice the trapezoid area scaled by P*N.
  unsigned __int128 twice_area = 0;
  std::uint64_t tp = 0;
  for (const SweepLevel& level : descending_levels(id_scores, ood_scores)) {
    twice_area += static_cast<unsigned __int128>(level.id_at) * (2 * tp + level.ood_at);
    tp += level.ood_at;
  }
  const double denom = 2.0 * static_cast<double>(id_scores.size()) *
                       static_cast<double>(ood_scores.size());
  return 100.0 * static_cast<double>(twice_area) / denom;
}

double aupr(std::span<const double> id_scores, std::span<const double> ood_scores) {
  require_nonempty(id_scores, ood_scores, "aupr");
  const double p = static_cast<double>(ood_scores.size());
  std::size_t tp = 0;
  std::size_t fp = 0;
  double ap = 0.0;
  for (const SweepLevel& level : descending_levels(id_scores, ood_scores)) {
    tp += level.ood_at;
    fp += level.id_at;
    if (level.ood_at == 0) continue;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (static_cast<double>(level.ood_at) / p) * precision;
  }
  return 100.0 * ap;
}

OperatingPoint fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                          double target) {
  require_nonempty(id_scores, ood_scores, "fpr_at_tpr");
  const Threshold t = conservative_threshold(id_scores, ood_scores, target);
  const double fpr = static_cast<double>(t.id_above) / static_cast<double>(id_scores.size());
  return {t.tau, 100.0 * fpr};
}

DecisionStats decision_stats(std::span<const double> id_scores,
                             std::span<const double> ood_scores, double target_rejection) {
  require_nonempty(id_scores, ood_scores, "decision_stats");
  const Threshold t = conservative_threshold(id_scores, ood_scores, target_rejection);
  DecisionStats stats;
  stats.threshold = t.tau;
  stats.id_total = id_scores.size();
  stats.id_kept = id_scores.size() - t.id_above;
  stats.fpr_id = static_cast<double>(t.id_above) / static_cast<double>(id_scores.size());
  // Same sample set, so retention is the complement of the ID flag rate;
  // computed as such to keep the identity exact in floating point.
  stats.retention_rate = 1.0 - stats.fpr_id;
  stats.ood_rejection_rate =
      static_cast<double>(t.ood_above) / static_cast<double>(ood_scores.size());
  return stats;
}

OscrCurve oscr(std::span<const double> id_scores, std::span<const std::int64_t> id_predictions,
               std::span<const std::int64_t> id_labels, std::span<const double> ood_scores) {
  require_nonempty(id_scores, ood_scores, "oscr");
  if (id_predictions.size() != id_scores.size() || id_labels.size() != id_scores.size()) {
    throw UsageError("oscr: ID scores, predictions and labels must have equal length");
  }
  // Ascending sweep: at tau = v a sample is accepted when s <= v.
  struct Entry {
    double score;
    bool is_ood;
    bool correct;
  };
  std::vector<Entry> all;
  all.reserve(id_scores.size() + ood_scores.size());
  for (std::size_t i = 0; i < id_scores.size(); ++i) {
    all.push_back({id_scores[i], false, id_predictions[i] == id_labels[i]});
  }
  for (double s : ood_scores) all.push_back({s, true, false});
  std::sort(all.begin(), all.end(),
            [](const Entry& a, const Entry& b) { return a.score < b.score; });

  const double n_id = static_cast<double>(id_scores.size());
  const double n_ood = static_cast<double>(ood_scores.size());
  OscrCurve curve;
  curve.points.push_back({-kInf, 0.0, 0.0});
  std::size_t accepted_ood = 0;
  std::size_t accepted_correct = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double score = all[i].score;
    for (; i < all.size() && all[i].score == score; ++i) {
      if (all[i].is_ood) {
        ++accepted_ood;
      } else if (all[i].correct) {
        ++accepted_correct;
      }
    }
    curve.points.push_back({score, static_cast<double>(accepted_ood) / n_ood,
                            static_cast<double>(accepted_correct) / n_id});
  }
  curve.points.push_back({kInf, 1.0, static_cast<double>(accepted_correct) / n_id});

  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const OscrPoint& a = curve.points[i - 1];
    const OscrPoint& b = curve.points[i];
    area += (b.fpr_ood - a.fpr_ood) * (a.ccr + b.ccr) * 0.5;
  }
  curve.area = area;
  return curve;
}

}  // namespace ohz
