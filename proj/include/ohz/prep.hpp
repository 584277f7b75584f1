#pragma once

// Feature preprocessing and class-conditional Gaussian statistics.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ohz/checkpoint.hpp"
#include "ohz/common.hpp"

namespace ohz {

/// Global training mean. Only ever fitted on training features.
struct Preprocessor {
  Vector mu_global;
};

Preprocessor fit_center(const Matrix& train_features);

/// Rows below this norm after centering map to the zero vector.
inline constexpr double kDegenerateNorm = 1e-12;

/// (x - mu) / ||x - mu||, or zero when ||x - mu|| < kDegenerateNorm.
Matrix center_normalize(const Matrix& features, const Preprocessor& prep);

struct ClassMeans {
  Matrix means;                     // K x d
  std::vector<std::size_t> counts;  // N_c
};

/// Per-class arithmetic means. Every class in 0..K-1 must be present.
ClassMeans class_means(const Matrix& normalized, std::span<const std::int64_t> labels,
                       std::size_t num_classes);

struct ShrinkageEstimate {
  Matrix covariance;
  double lambda = 0.0;
};

/// Returned covariance scale when every residual is zero.
inline constexpr double kZeroResidualVariance = 1e-6;

/// Ledoit-Wolf shrinkage toward (tr(S)/d) I with S = R^T R / N. The
/// residuals are taken as already centered (class means removed).
ShrinkageEstimate ledoit_wolf(const Matrix& residuals);

/// Inverse of a symmetric matrix via Cholesky. floor * I is added first when
/// the smallest eigenvalue is below `floor`.
Matrix precision(const Matrix& sigma, double floor = 1e-6);

struct ClassStats {
  Matrix class_means;  // K x d, normalized space
  std::vector<std::size_t> counts;
  Matrix covariance;   // shared, d x d
  Matrix precision;
  double shrinkage_lambda = 0.0;

  std::size_t classes() const { return static_cast<std::size_t>(class_means.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(class_means.cols()); }
};

/// Class means, shared shrinkage covariance of the residuals
/// x_i - mu_{y_i}, and its inverse.
ClassStats fit_class_stats(const Matrix& normalized, std::span<const std::int64_t> labels,
                           std::size_t num_classes, double precision_floor = 1e-6);

Checkpoint stats_checkpoint(const Preprocessor& prep, const ClassStats& stats);
void save_stats(const Preprocessor& prep, const ClassStats& stats,
                const std::filesystem::path& path);

struct LoadedStats {
  Preprocessor prep;
  ClassStats stats;
};
LoadedStats load_stats(const std::filesystem::path& path);

}  // namespace ohz
