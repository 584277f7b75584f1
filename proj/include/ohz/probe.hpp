#pragma once

// Linear classification head on frozen features.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ohz/checkpoint.hpp"
#include "ohz/common.hpp"
#include "ohz/featstore.hpp"

namespace ohz {

/// z(x) = W x + b with W: K x d, b: K.
struct ProbeModel {
  Matrix W;
  Vector b;

  std::size_t classes() const { return static_cast<std::size_t>(W.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(W.cols()); }
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 256;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const;
};

struct TrainResult {
  ProbeModel model;
  /// Sample-weighted mean of the batch losses seen during each epoch,
  /// evaluated before the corresponding update.
  std::vector<double> loss_history;
  std::vector<std::string> warnings;
};

struct ProbeGradient {
  Matrix dW;
  Vector db;
};

/// Numerically stable softmax (max subtracted first).
Vector softmax(const Vector& logits);

/// log sum_k exp(z_k), stable.
double log_sum_exp(const Eigen::Ref<const Vector>& logits);

/// N x K logits. Each row is computed independently in fixed index order.
Matrix forward(const ProbeModel& model, const Matrix& features);

/// Mean cross-entropy in nats, via log-sum-exp.
double cross_entropy(const Matrix& logits, std::span<const std::int64_t> labels);

/// Analytic gradient of the mean cross-entropy of `model` on a batch.
ProbeGradient cross_entropy_gradient(const ProbeModel& model, const Matrix& features,
                                     std::span<const std::int64_t> labels);

/// SGD with momentum from a zero initialization. `num_classes` of 0 means
/// max(label) + 1. Deterministic for a fixed config.
TrainResult train_probe(const Matrix& features, std::span<const std::int64_t> labels,
                        const TrainConfig& config, std::size_t num_classes = 0);
TrainResult train_probe(const FeatureSet& train, const TrainConfig& config,
                        std::size_t num_classes = 0);

/// Argmax of the logits, ties to the lowest class index.
std::vector<std::int64_t> predict(const ProbeModel& model, const Matrix& features);
std::vector<std::int64_t> argmax_rows(const Matrix& logits);

Checkpoint probe_checkpoint(const ProbeModel& model, const TrainConfig& config);
void save_probe(const ProbeModel& model, const TrainConfig& config,
                const std::filesystem::path& path);
ProbeModel load_probe(const std::filesystem::path& path);

}  // namespace ohz
