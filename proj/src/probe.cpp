#include "ohz/probe.hpp"

#include <cmath>
#include <numeric>

#include "ohz/checkpoint.hpp"

namespace ohz {

namespace {

void check_labels(std::span<const std::int64_t> labels, Eigen::Index rows, std::size_t classes) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) {
    throw UsageError("label count does not match row count");
  }
  for (std::int64_t y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw UsageError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
}

void check_width(const ProbeModel& model, const Matrix& features) {
  if (static_cast<std::size_t>(features.cols()) != model.dim()) {
    throw UsageError("feature width " + std::to_string(features.cols()) +
                     " does not match probe dimension " + std::to_string(model.dim()));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw UsageError("learning_rate must be finite and >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must be in [0, 1)");
}

Vector softmax(const Vector& logits) {
  require_finite(logits, "softmax");
  if (logits.size() == 0) return logits;
  const Vector shifted = logits.array() - logits.maxCoeff();
  Vector e = shifted.array().exp();
  return e / e.sum();
}

double log_sum_exp(const Eigen::Ref<const Vector>& logits) {
  const double m = logits.maxCoeff();
  double sum = 0.0;
  for (Eigen::Index k = 0; k < logits.size(); ++k) sum += std::exp(logits[k] - m);
  return m + std::log(sum);
}

Matrix forward(const ProbeModel& model, const Matrix& features) {
  check_width(model, features);
  Matrix logits(features.rows(), model.W.rows());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    for (Eigen::Index k = 0; k < model.W.rows(); ++k) {
      logits(i, k) = model.W.row(k).dot(features.row(i)) + model.b[k];
    }
  }
  return logits;
}

double cross_entropy(const Matrix& logits, std::span<const std::int64_t> labels) {
  require_finite(logits, "cross_entropy");
  check_labels(labels, logits.rows(), static_cast<std::size_t>(logits.cols()));
  if (logits.rows() == 0) throw UsageError("cross_entropy: empty batch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Vector row = logits.row(i).transpose();
    total += log_sum_exp(row) - row[labels[static_cast<std::size_t>(i)]];
  }
  return total / static_cast<double>(logits.rows());
}

ProbeGradient cross_entropy_gradient(const ProbeModel& model, const Matrix& features,
                                     std::span<const std::int64_t> labels) {
  check_width(model, features);
  check_labels(labels, features.rows(), model.classes());
  if (features.rows() == 0) throw UsageError("cross_entropy_gradient: empty batch");

  const Matrix logits = forward(model, features);
  // dL/dz = softmax(z) - onehot(y), averaged over the batch.
  Matrix delta(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    delta.row(i) = softmax(logits.row(i).transpose()).transpose();
    delta(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  }
  const double inv_n = 1.0 / static_cast<double>(features.rows());
  ProbeGradient g;
  g.dW = (delta.transpose() * features) * inv_n;
  g.db = delta.colwise().sum().transpose() * inv_n;
  return g;
}

TrainResult train_probe(const Matrix& features, std::span<const std::int64_t> labels,
                        const TrainConfig& config, std::size_t num_classes) {
  config.validate();
  if (features.rows() == 0) throw UsageError("train_probe: empty training set");
  require_finite(features, "train_probe features");
  if (num_classes == 0) {
    const std::int64_t max_label =
        labels.empty() ? -1 : *std::max_element(labels.begin(), labels.end());
    num_classes = static_cast<std::size_t>(std::max<std::int64_t>(max_label + 1, 2));
  }
  if (num_classes < 2) throw UsageError("train_probe: need at least 2 classes");
  check_labels(labels, features.rows(), num_classes);

  TrainResult result;
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::int64_t y : labels) ++counts[static_cast<std::size_t>(y)];
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) {
      result.warnings.push_back("class " + std::to_string(c) + " has no training samples");
    }
  }

  ProbeModel& model = result.model;
  model.W = Matrix::Zero(static_cast<Eigen::Index>(num_classes), features.cols());
  model.b = Vector::Zero(static_cast<Eigen::Index>(num_classes));
  Matrix vel_W = Matrix::Zero(model.W.rows(), model.W.cols());
  Vector vel_b = Vector::Zero(model.b.size());

  const auto n = static_cast<std::size_t>(features.rows());
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed);

  Matrix xb;
  std::vector<std::int64_t> yb;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.shuffle) rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      const auto size = static_cast<Eigen::Index>(stop - start);
      xb.resize(size, features.cols());
      yb.resize(stop - start);
      for (std::size_t j = start; j < stop; ++j) {
        xb.row(static_cast<Eigen::Index>(j - start)) =
            features.row(static_cast<Eigen::Index>(order[j]));
        yb[j - start] = labels[order[j]];
      }
      epoch_loss += cross_entropy(forward(model, xb), yb) * static_cast<double>(size);

      const ProbeGradient g = cross_entropy_gradient(model, xb, yb);
      vel_W = config.momentum * vel_W + g.dW;
      vel_b = config.momentum * vel_b + g.db;
      model.W -= config.learning_rate * vel_W;
      model.b -= config.learning_rate * vel_b;
    }
    const double mean_loss = epoch_loss / static_cast<double>(n);
    if (!std::isfinite(mean_loss) || !model.W.allFinite() || !model.b.allFinite()) {
      throw ComputeError("train_probe: diverged at epoch " + std::to_string(epoch + 1) +
                         " (learning rate too large?)");
    }
    result.loss_history.push_back(mean_loss);
  }
  return result;
}

TrainResult train_probe(const FeatureSet& train, const TrainConfig& config,
                        std::size_t num_classes) {
  return train_probe(train.features_f64(), train.labels, config, num_classes);
}

std::vector<std::int64_t> argmax_rows(const Matrix& logits) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(i, k) > logits(i, best)) best = k;
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

std::vector<std::int64_t> predict(const ProbeModel& model, const Matrix& features) {
  return argmax_rows(forward(model, features));
}

Checkpoint probe_checkpoint(const ProbeModel& model, const TrainConfig& config) {
  Checkpoint ckpt;
  ckpt.kind = "probe";
  ckpt.header["K"] = model.classes();
  ckpt.header["d"] = model.dim();
  ckpt.header["config"] = {{"epochs", config.epochs},
                           {"batch_size", config.batch_size},
                           {"learning_rate", config.learning_rate},
                           {"momentum", config.momentum},
                           {"seed", config.seed},
                           {"shuffle", config.shuffle}};
  ckpt.blocks.emplace_back("W", model.W);
  ckpt.blocks.emplace_back("b", Matrix(model.b.transpose()));
  return ckpt;
}

void save_probe(const ProbeModel& model, const TrainConfig& config,
                const std::filesystem::path& path) {
  write_checkpoint(probe_checkpoint(model, config), path);
}

ProbeModel load_probe(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path, "probe");
  ProbeModel model;
  model.W = ckpt.block("W");
  model.b = ckpt.block("b").transpose();
  if (model.W.rows() < 2 || model.W.cols() < 1 || model.b.size() != model.W.rows()) {
    throw IoError("probe checkpoint has inconsistent shapes: " + path.string());
  }
  if (!model.W.allFinite() || !model.b.allFinite()) {
    throw IoError("probe checkpoint has non-finite parameters: " + path.string());
  }
  return model;
}

}  // namespace ohz
