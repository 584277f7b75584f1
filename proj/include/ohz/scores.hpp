#pragma once

// Post-hoc open-set scores. For every kind a larger score means the sample
// looks more out-of-distribution.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ohz/common.hpp"
#include "ohz/prep.hpp"
#include "ohz/probe.hpp"

namespace ohz {

enum class ScoreKind { msp, energy, mahalanobis, knn };

std::string to_string(ScoreKind kind);
ScoreKind score_kind_from_string(const std::string& name);
inline constexpr ScoreKind kAllScoreKinds[] = {ScoreKind::msp, ScoreKind::energy,
                                               ScoreKind::mahalanobis, ScoreKind::knn};

struct ScoreParams {
  double temperature = 1.0;  // energy
  std::size_t k = 5;         // knn
};

struct ScoreVector {
  std::vector<double> scores;
  ScoreKind kind = ScoreKind::msp;
  ScoreParams params;

  std::size_t size() const { return scores.size(); }
};

/// -max softmax probability; lies in [-1, -1/K].
ScoreVector msp_score(const Matrix& logits);

/// -T log sum_k exp(z_k / T).
ScoreVector energy_score(const Matrix& logits, double temperature = 1.0);

/// min_c (x - mu_c)^T Sigma^-1 (x - mu_c) with the shared precision.
ScoreVector mahalanobis_score(const Matrix& features_normalized, const ClassStats& stats);

/// Mean Euclidean distance to the k nearest training rows. Ties at equal
/// distance resolve to the lower training-row index; no self-exclusion.
ScoreVector knn_score(const Matrix& query_normalized, const Matrix& train_normalized,
                      std::size_t k = 5);

/// Everything fitted on the training split. Only the pieces a kind needs
/// must be set.
struct ScoringArtifacts {
  const ProbeModel* probe = nullptr;
  const Preprocessor* prep = nullptr;
  const ClassStats* stats = nullptr;
  const Matrix* train_normalized = nullptr;
};

/// Scores raw ID and OOD test features. Logit kinds run the probe on raw
/// features; distance kinds use the training preprocessor first.
std::pair<ScoreVector, ScoreVector> score_pipeline(ScoreKind kind,
                                                   const ScoringArtifacts& artifacts,
                                                   const Matrix& id_raw, const Matrix& ood_raw,
                                                   const ScoreParams& params = {});

}  // namespace ohz
