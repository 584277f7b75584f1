#include "ohz/scores.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ohz {

std::string to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::msp: return "msp";
    case ScoreKind::energy: return "energy";
    case ScoreKind::mahalanobis: return "mahalanobis";
    case ScoreKind::knn: return "knn";
  }
  return "msp";
}

ScoreKind score_kind_from_string(const std::string& name) {
  for (ScoreKind kind : kAllScoreKinds) {
    if (to_string(kind) == name) return kind;
  }
  throw UsageError("unknown score kind: " + name);
}

ScoreVector msp_score(const Matrix& logits) {
  require_finite(logits, "msp_score");
  if (logits.cols() < 2) throw UsageError("msp_score: need K >= 2");
  ScoreVector out;
  out.kind = ScoreKind::msp;
  out.scores.resize(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Vector row = logits.row(i).transpose();
    // max softmax = exp(z_max - lse(z)) = 1 / sum_k exp(z_k - z_max)
    const double m = row.maxCoeff();
    double sum = 0.0;
    for (Eigen::Index k = 0; k < row.size(); ++k) sum += std::exp(row[k] - m);
    out.scores[static_cast<std::size_t>(i)] = -1.0 / sum;
  }
  return out;
}

ScoreVector energy_score(const Matrix& logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw UsageError("energy_score: temperature must be positive");
  }
  require_finite(logits, "energy_score");
  ScoreVector out;
  out.kind = ScoreKind::energy;
  out.params.temperature = temperature;
  out.scores.resize(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Vector scaled = logits.row(i).transpose() / temperature;
    out.scores[static_cast<std::size_t>(i)] = -temperature * log_sum_exp(scaled);
  }
  return out;
}

ScoreVector mahalanobis_score(const Matrix& features_normalized, const ClassStats& stats) {
  if (static_cast<std::size_t>(features_normalized.cols()) != stats.dim()) {
    throw UsageError("mahalanobis_score: feature width does not match class stats");
  }
  if (stats.classes() == 0) throw UsageError("mahalanobis_score: no classes");
  require_finite(features_normalized, "mahalanobis_score");
  ScoreVector out;
  out.kind = ScoreKind::mahalanobis;
  out.scores.resize(static_cast<std::size_t>(features_normalized.rows()));
  // (x - mu)^T P (x - mu) = x^T P x - 2 (P mu)^T x + mu^T P mu would be
  // cheaper but loses precision near the means; evaluate the form directly.
  for (Eigen::Index i = 0; i < features_normalized.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < stats.class_means.rows(); ++c) {
      const Vector diff = (features_normalized.row(i) - stats.class_means.row(c)).transpose();
      best = std::min(best, diff.dot(stats.precision * diff));
    }
    out.scores[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

ScoreVector knn_score(const Matrix& query_normalized, const Matrix& train_normalized,
                      std::size_t k) {
  const auto m = static_cast<std::size_t>(train_normalized.rows());
  if (k < 1) throw UsageError("knn_score: k must be >= 1");
  if (m < k) {
    throw UsageError("knn_score: " + std::to_string(m) + " training rows < k = " +
                     std::to_string(k));
  }
  if (query_normalized.cols() != train_normalized.cols()) {
    throw UsageError("knn_score: query width does not match training width");
  }
  require_finite(query_normalized, "knn_score");

  const Eigen::Index d = train_normalized.cols();
  ScoreVector out;
  out.kind = ScoreKind::knn;
  out.params.k = k;
  out.scores.resize(static_cast<std::size_t>(query_normalized.rows()));

  std::vector<std::pair<double, std::size_t>> dist(m);
  for (Eigen::Index q = 0; q < query_normalized.rows(); ++q) {
    const double* qrow = query_normalized.row(q).data();
    for (std::size_t j = 0; j < m; ++j) {
      const double* trow = train_normalized.row(static_cast<Eigen::Index>(j)).data();
      double sq = 0.0;
      for (Eigen::Index t = 0; t < d; ++t) {
        const double diff = qrow[t] - trow[t];
        sq += diff * diff;
      }
      dist[j] = {std::sqrt(sq), j};
    }
    // Lexicographic (distance, index) order realizes the tie rule.
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += dist[j].first;
    out.scores[static_cast<std::size_t>(q)] = sum / static_cast<double>(k);
  }
  return out;
}

std::pair<ScoreVector, ScoreVector> score_pipeline(ScoreKind kind,
                                                   const ScoringArtifacts& artifacts,
                                                   const Matrix& id_raw, const Matrix& ood_raw,
                                                   const ScoreParams& params) {
  auto need = [&](const void* p, const char* what) {
    if (p == nullptr) {
      throw UsageError("score_pipeline(" + to_string(kind) + "): missing " + what);
    }
  };
  switch (kind) {
    case ScoreKind::msp:
      need(artifacts.probe, "probe");
      return {msp_score(forward(*artifacts.probe, id_raw)),
              msp_score(forward(*artifacts.probe, ood_raw))};
    case ScoreKind::energy:
      need(artifacts.probe, "probe");
      return {energy_score(forward(*artifacts.probe, id_raw), params.temperature),
              energy_score(forward(*artifacts.probe, ood_raw), params.temperature)};
    case ScoreKind::mahalanobis:
      need(artifacts.prep, "preprocessor");
      need(artifacts.stats, "class statistics");
      return {mahalanobis_score(center_normalize(id_raw, *artifacts.prep), *artifacts.stats),
              mahalanobis_score(center_normalize(ood_raw, *artifacts.prep), *artifacts.stats)};
    case ScoreKind::knn:
      need(artifacts.prep, "preprocessor");
      need(artifacts.train_normalized, "normalized training features");
      return {knn_score(center_normalize(id_raw, *artifacts.prep), *artifacts.train_normalized,
                        params.k),
              knn_score(center_normalize(ood_raw, *artifacts.prep), *artifacts.train_normalized,
                        params.k)};
  }
  throw UsageError("score_pipeline: unknown kind");
}

}  // namespace ohz
