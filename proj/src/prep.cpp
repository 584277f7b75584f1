#include "ohz/prep.hpp"

#include <algorithm>
#include <cmath>

#include "ohz/checkpoint.hpp"

namespace ohz {

Preprocessor fit_center(const Matrix& train_features) {
  if (train_features.rows() == 0) throw UsageError("fit_center: empty training set");
  require_finite(train_features, "fit_center");
  Vector sum = Vector::Zero(train_features.cols());
  for (Eigen::Index i = 0; i < train_features.rows(); ++i) {
    sum += train_features.row(i).transpose();
  }
  return Preprocessor{sum / static_cast<double>(train_features.rows())};
}

Matrix center_normalize(const Matrix& features, const Preprocessor& prep) {
  if (features.cols() != prep.mu_global.size()) {
    throw UsageError("center_normalize: feature width does not match the preprocessor");
  }
  require_finite(features, "center_normalize");
  Matrix out(features.rows(), features.cols());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const Vector centered = features.row(i).transpose() - prep.mu_global;
    const double norm = centered.norm();
    if (norm < kDegenerateNorm) {
      out.row(i).setZero();
    } else {
      out.row(i) = (centered / norm).transpose();
    }
  }
  return out;
}

ClassMeans class_means(const Matrix& normalized, std::span<const std::int64_t> labels,
                       std::size_t num_classes) {
  if (static_cast<Eigen::Index>(labels.size()) != normalized.rows()) {
    throw UsageError("class_means: label count does not match row count");
  }
  ClassMeans out;
  out.means = Matrix::Zero(static_cast<Eigen::Index>(num_classes), normalized.cols());
  out.counts.assign(num_classes, 0);
  for (Eigen::Index i = 0; i < normalized.rows(); ++i) {
    const std::int64_t y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw UsageError("class_means: label " + std::to_string(y) + " out of range");
    }
    out.means.row(y) += normalized.row(i);
    ++out.counts[static_cast<std::size_t>(y)];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (out.counts[c] == 0) {
      throw UsageError("class_means: class " + std::to_string(c) + " has no samples");
    }
    out.means.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(out.counts[c]);
  }
  return out;
}

ShrinkageEstimate ledoit_wolf(const Matrix& residuals) {
  const Eigen::Index n = residuals.rows();
  const Eigen::Index d = residuals.cols();
  if (n < 2) throw UsageError("ledoit_wolf: need at least 2 residual rows");
  require_finite(residuals, "ledoit_wolf");
  const double nd = static_cast<double>(n);

  Matrix s = Matrix::Zero(d, d);
  s.selfadjointView<Eigen::Lower>().rankUpdate(residuals.transpose());
  s.triangularView<Eigen::StrictlyUpper>() = s.transpose();
  s /= nd;

  const double target_scale = s.trace() / static_cast<double>(d);
  if (target_scale <= 0.0) {
    return {kZeroResidualVariance * Matrix::Identity(d, d), 1.0};
  }

  Matrix deviation = s;
  deviation.diagonal().array() -= target_scale;
  const double delta2 = deviation.squaredNorm();
  if (delta2 == 0.0) {
    return {target_scale * Matrix::Identity(d, d), 1.0};
  }

  // sum_i ||r_i r_i^T - S||_F^2 = sum_i ||r_i||^4 - N ||S||_F^2, since
  // sum_i r_i^T S r_i = N tr(S S).
  double fourth = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double sq = residuals.row(i).squaredNorm();
    fourth += sq * sq;
  }
  const double beta_bar2 = std::max(0.0, (fourth - nd * s.squaredNorm()) / (nd * nd));
  const double beta2 = std::min(delta2, beta_bar2);
  const double lambda = std::clamp(beta2 / delta2, 0.0, 1.0);

  Matrix sigma = (1.0 - lambda) * s;
  sigma.diagonal().array() += lambda * target_scale;
  return {sigma, lambda};
}

Matrix precision(const Matrix& sigma, double floor) {
  if (sigma.rows() != sigma.cols() || sigma.rows() == 0) {
    throw UsageError("precision: covariance must be square and non-empty");
  }
  require_finite(sigma, "precision");
  const Matrix sym = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw ComputeError("precision: eigenvalue solve failed");

  Matrix floored = sym;
  if (eig.eigenvalues().minCoeff() < floor) floored.diagonal().array() += floor;

  Eigen::LLT<Matrix> llt(floored);
  if (llt.info() != Eigen::Success) {
    throw ComputeError("precision: Cholesky factorization failed after flooring");
  }
  Matrix inv = llt.solve(Matrix::Identity(sym.rows(), sym.cols()));
  inv = 0.5 * (inv + inv.transpose());
  require_finite(inv, "precision");
  return inv;
}

ClassStats fit_class_stats(const Matrix& normalized, std::span<const std::int64_t> labels,
                           std::size_t num_classes, double precision_floor) {
  ClassMeans means = class_means(normalized, labels, num_classes);
  Matrix residuals(normalized.rows(), normalized.cols());
  for (Eigen::Index i = 0; i < normalized.rows(); ++i) {
    residuals.row(i) = normalized.row(i) - means.means.row(labels[static_cast<std::size_t>(i)]);
  }
  ShrinkageEstimate lw = ledoit_wolf(residuals);

  ClassStats stats;
  stats.class_means = std::move(means.means);
  stats.counts = std::move(means.counts);
  stats.precision = precision(lw.covariance, precision_floor);
  stats.covariance = std::move(lw.covariance);
  stats.shrinkage_lambda = lw.lambda;
  return stats;
}

Checkpoint stats_checkpoint(const Preprocessor& prep, const ClassStats& stats) {
  Checkpoint ckpt;
  ckpt.kind = "class_stats";
  ckpt.header["K"] = stats.classes();
  ckpt.header["d"] = stats.dim();
  ckpt.header["lambda"] = stats.shrinkage_lambda;
  ckpt.header["counts"] = stats.counts;
  ckpt.blocks.emplace_back("mu_global", Matrix(prep.mu_global.transpose()));
  ckpt.blocks.emplace_back("class_means", stats.class_means);
  ckpt.blocks.emplace_back("covariance", stats.covariance);
  ckpt.blocks.emplace_back("precision", stats.precision);
  return ckpt;
}

void save_stats(const Preprocessor& prep, const ClassStats& stats,
                const std::filesystem::path& path) {
  write_checkpoint(stats_checkpoint(prep, stats), path);
}

LoadedStats load_stats(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path, "class_stats");
  LoadedStats out;
  out.prep.mu_global = ckpt.block("mu_global").transpose();
  out.stats.class_means = ckpt.block("class_means");
  out.stats.covariance = ckpt.block("covariance");
  out.stats.precision = ckpt.block("precision");
  try {
    out.stats.counts = ckpt.header.at("counts").get<std::vector<std::size_t>>();
    out.stats.shrinkage_lambda = ckpt.header.at("lambda").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad class_stats header: " + std::string(e.what()));
  }
  const auto d = out.stats.class_means.cols();
  if (out.prep.mu_global.size() != d || out.stats.covariance.rows() != d ||
      out.stats.covariance.cols() != d || out.stats.precision.rows() != d ||
      out.stats.precision.cols() != d ||
      out.stats.counts.size() != static_cast<std::size_t>(out.stats.class_means.rows())) {
    throw IoError("class_stats checkpoint has inconsistent shapes: " + path.string());
  }
  return out;
}

}  // namespace ohz
