#pragma once

// Few-shot class-incremental learning on frozen features. Every method keeps
// a bank of unit-norm class prototypes and classifies by nearest class mean
// (cosine); methods differ only in how a novel prototype is built.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ohz/common.hpp"
#include "ohz/featstore.hpp"

namespace ohz::fscil {

enum class Method { baseline, sppr, orco, concm };

std::string to_string(Method method);
Method method_from_string(const std::string& name);

struct SpprParams {
  double gamma = 0.5;
  double temperature = 0.1;
};

struct OrcoParams {
  int steps = 200;
  double step_size = 0.05;
  double lambda_orth = 0.1;
  double perturb_sigma = 0.05;
};

struct ConcmParams {
  double alpha = 0.6;
  int aug_count = 50;
  double aug_sigma = 0.05;
};

struct SessionConfig {
  std::size_t base_class_count = 7;
  std::vector<std::vector<std::int64_t>> sessions = {{7}, {8}, {9}};
  std::size_t shots = 5;
  Method method = Method::baseline;
  std::uint64_t seed = 0;
  std::size_t test_sample_count = 1000;
  SpprParams sppr;
  OrcoParams orco;
  ConcmParams concm;

  void validate() const;
};

struct PrototypeBank {
  Matrix prototypes;                   // C x d, unit-norm rows
  std::vector<std::int64_t> class_ids;
  std::vector<int> session_of;
  /// Re-normalized data mean per class (base means, or the shot mean for
  /// novel classes). OrCo pulls prototypes toward these.
  Matrix anchors;

  std::size_t size() const { return class_ids.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(prototypes.cols()); }
};

struct SessionResult {
  int session_index = 0;
  std::vector<std::int64_t> class_ids;  // classes seen so far, confusion order
  double overall_accuracy = 0.0;        // percent
  std::vector<double> per_class_recall;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

/// Per-class normalized means of normalized base features. A class whose
/// mean vanishes is an error.
PrototypeBank base_prototypes(const Matrix& normalized, std::span<const std::int64_t> labels);

/// Argmax cosine similarity; ties go to the lowest class id.
std::int64_t ncm_predict(const PrototypeBank& bank, const Eigen::Ref<const Vector>& query);

/// Relation-weighted refinement of the shot mean; appends one prototype.
PrototypeBank sppr_refine(const PrototypeBank& bank, const Matrix& shots_normalized,
                          std::int64_t class_id, int session, const SpprParams& params = {});

struct OrcoTrace {
  std::vector<double> loss;  // before the first step, then after each step
};

/// Gradient descent of all prototypes on anchor attraction plus an
/// orthogonality penalty; appends the novel class first.
PrototypeBank orco_update(const PrototypeBank& bank, const Matrix& shots_normalized,
                          std::int64_t class_id, int session, std::uint64_t seed,
                          const OrcoParams& params = {}, OrcoTrace* trace = nullptr);

/// L = sum_c ||p_c - a_c||^2 + lambda sum_{i != j} <p_i, p_j>^2.
double orco_loss(const Matrix& prototypes, const Matrix& anchors, double lambda_orth);

/// Cross-attention over base prototypes followed by Gaussian prototype
/// augmentation; appends one prototype.
PrototypeBank concm_calibrate(const PrototypeBank& bank, const Matrix& shots_normalized,
                              std::int64_t class_id, int session, std::uint64_t seed,
                              const ConcmParams& params = {});

/// NCM evaluation restricted to rows whose label is in `seen_class_ids`.
SessionResult evaluate(const PrototypeBank& bank, const Matrix& test_normalized,
                       std::span<const std::int64_t> test_labels,
                       std::span<const std::int64_t> seen_class_ids, int session_index = 0);

struct ProtocolData {
  FeatureSet train;  // raw features, original labels (base + novel classes)
  FeatureSet test;
};

struct SummaryRow {
  Method method;
  std::size_t shots;
  double base_accuracy;
  double overall_accuracy;
};

struct ProtocolResult {
  std::vector<SessionResult> sessions;
  SummaryRow summary;
  std::vector<std::size_t> test_indices;  // rows of data.test used, ascending
  std::vector<std::int64_t> base_class_ids;
};

/// Base session followed by each incremental session. Centering is fitted
/// on the base training rows only. The test subset and shot draws depend
/// only on the seed, so they are shared across methods and shot counts.
ProtocolResult run_protocol(const SessionConfig& config, const ProtocolData& data);

}  // namespace ohz::fscil
