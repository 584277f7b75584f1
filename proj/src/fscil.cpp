#include "ohz/fscil.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "ohz/prep.hpp"
#include "ohz/probe.hpp"

namespace ohz::fscil {

namespace {

constexpr double kCollapseNorm = 1e-12;

Vector normalized_or_throw(const Vector& v, const std::string& what) {
  const double norm = v.norm();
  if (!(norm >= kCollapseNorm) || !std::isfinite(norm)) {
    throw ComputeError(what + ": vector collapsed to zero norm");
  }
  return v / norm;
}

Vector shot_mean(const Matrix& shots, const char* op) {
  if (shots.rows() == 0) throw UsageError(std::string(op) + ": no shots");
  require_finite(shots, op);
  Vector sum = Vector::Zero(shots.cols());
  for (Eigen::Index i = 0; i < shots.rows(); ++i) sum += shots.row(i).transpose();
  return sum / static_cast<double>(shots.rows());
}

void check_novel(const PrototypeBank& bank, const Matrix& shots, std::int64_t class_id,
                 const char* op) {
  if (bank.size() > 0 && static_cast<std::size_t>(shots.cols()) != bank.dim()) {
    throw UsageError(std::string(op) + ": shot width does not match the bank");
  }
  if (std::find(bank.class_ids.begin(), bank.class_ids.end(), class_id) !=
      bank.class_ids.end()) {
    throw UsageError(std::string(op) + ": class " + std::to_string(class_id) +
                     " already has a prototype");
  }
}

PrototypeBank append(const PrototypeBank& bank, const Vector& prototype, const Vector& anchor,
                     std::int64_t class_id, int session) {
  PrototypeBank out;
  const Eigen::Index c = static_cast<Eigen::Index>(bank.size());
  const Eigen::Index d = prototype.size();
  out.prototypes.resize(c + 1, d);
  out.anchors.resize(c + 1, d);
  if (c > 0) {
    out.prototypes.topRows(c) = bank.prototypes;
    out.anchors.topRows(c) = bank.anchors;
  }
  out.prototypes.row(c) = prototype.transpose();
  out.anchors.row(c) = anchor.transpose();
  out.class_ids = bank.class_ids;
  out.class_ids.push_back(class_id);
  out.session_of = bank.session_of;
  out.session_of.push_back(session);
  return out;
}

Vector softmax_scaled(const Vector& sims, double scale) {
  return softmax(sims * scale);
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::baseline: return "baseline";
    case Method::sppr: return "sppr";
    case Method::orco: return "orco";
    case Method::concm: return "concm";
  }
  return "baseline";
}

Method method_from_string(const std::string& name) {
  for (Method m : {Method::baseline, Method::sppr, Method::orco, Method::concm}) {
    if (to_string(m) == name) return m;
  }
  throw UsageError("unknown FSCIL method: " + name);
}

void SessionConfig::validate() const {
  if (base_class_count < 1) throw UsageError("base_class_count must be >= 1");
  if (shots < 1) throw UsageError("shots must be >= 1");
  if (test_sample_count < 1) throw UsageError("test_sample_count must be >= 1");
  std::set<std::int64_t> seen;
  for (const auto& session : sessions) {
    if (session.empty()) throw UsageError("incremental session with no classes");
    for (std::int64_t id : session) {
      if (!seen.insert(id).second) {
        throw UsageError("class " + std::to_string(id) + " appears in two sessions");
      }
    }
  }
  if (sppr.temperature <= 0.0) throw UsageError("sppr temperature must be positive");
  if (orco.steps < 0 || orco.step_size < 0.0) throw UsageError("invalid orco parameters");
  if (concm.aug_count < 0 || concm.aug_sigma < 0.0) throw UsageError("invalid concm parameters");
}

PrototypeBank base_prototypes(const Matrix& normalized, std::span<const std::int64_t> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != normalized.rows()) {
    throw UsageError("base_prototypes: label count does not match row count");
  }
  if (normalized.rows() == 0) throw UsageError("base_prototypes: no base samples");
  require_finite(normalized, "base_prototypes");

  std::map<std::int64_t, std::pair<Vector, std::size_t>> sums;
  for (Eigen::Index i = 0; i < normalized.rows(); ++i) {
    auto [it, inserted] = sums.try_emplace(labels[static_cast<std::size_t>(i)],
                                           Vector::Zero(normalized.cols()), 0);
    it->second.first += normalized.row(i).transpose();
    ++it->second.second;
  }

  PrototypeBank bank;
  const auto c = static_cast<Eigen::Index>(sums.size());
  bank.prototypes.resize(c, normalized.cols());
  Eigen::Index row = 0;
  for (const auto& [id, acc] : sums) {
    const Vector mean = acc.first / static_cast<double>(acc.second);
    bank.prototypes.row(row++) =
        normalized_or_throw(mean, "base_prototypes(class " + std::to_string(id) + ")")
            .transpose();
    bank.class_ids.push_back(id);
    bank.session_of.push_back(0);
  }
  bank.anchors = bank.prototypes;
  return bank;
}

std::int64_t ncm_predict(const PrototypeBank& bank, const Eigen::Ref<const Vector>& query) {
  if (bank.size() == 0) throw UsageError("ncm_predict: empty prototype bank");
  if (query.size() != bank.prototypes.cols()) {
    throw UsageError("ncm_predict: query width does not match the bank");
  }
  std::size_t best = 0;
  double best_sim = bank.prototypes.row(0).dot(query);
  for (std::size_t c = 1; c < bank.size(); ++c) {
    const double sim = bank.prototypes.row(static_cast<Eigen::Index>(c)).dot(query);
    if (sim > best_sim || (sim == best_sim && bank.class_ids[c] < bank.class_ids[best])) {
      best = c;
      best_sim = sim;
    }
  }
  return bank.class_ids[best];
}

PrototypeBank sppr_refine(const PrototypeBank& bank, const Matrix& shots_normalized,
                          std::int64_t class_id, int session, const SpprParams& params) {
  check_novel(bank, shots_normalized, class_id, "sppr_refine");
  const Vector m = normalized_or_throw(shot_mean(shots_normalized, "sppr_refine"),
                                       "sppr_refine shot mean");
  Vector refined = (1.0 - params.gamma) * m;
  if (bank.size() > 0 && params.gamma != 0.0) {
    const Vector sims = bank.prototypes * m;
    const Vector w = softmax_scaled(sims, 1.0 / params.temperature);
    refined += params.gamma * (bank.prototypes.transpose() * w);
  }
  return append(bank, normalized_or_throw(refined, "sppr_refine"), m, class_id, session);
}

double orco_loss(const Matrix& prototypes, const Matrix& anchors, double lambda_orth) {
  const double attraction = (prototypes - anchors).squaredNorm();
  Matrix gram = prototypes * prototypes.transpose();
  gram.diagonal().setZero();
  return attraction + lambda_orth * gram.squaredNorm();
}

PrototypeBank orco_update(const PrototypeBank& bank, const Matrix& shots_normalized,
                          std::int64_t class_id, int session, std::uint64_t seed,
                          const OrcoParams& params, OrcoTrace* trace) {
  check_novel(bank, shots_normalized, class_id, "orco_update");
  const Vector mean = shot_mean(shots_normalized, "orco_update");
  const Vector anchor = normalized_or_throw(mean, "orco_update shot mean");

  Rng rng(seed);
  Vector init = mean;
  for (Eigen::Index j = 0; j < init.size(); ++j) init[j] += params.perturb_sigma * rng.normal();
  PrototypeBank out =
      append(bank, normalized_or_throw(init, "orco_update initial prototype"), anchor,
             class_id, session);

  Matrix& p = out.prototypes;
  const Matrix& a = out.anchors;
  auto record = [&](int step) {
    const double loss = orco_loss(p, a, params.lambda_orth);
    if (!std::isfinite(loss)) {
      throw ComputeError("orco_update: non-finite loss at step " + std::to_string(step) +
                         " (step size too large?)");
    }
    if (trace != nullptr) trace->loss.push_back(loss);
  };
  record(0);
  for (int step = 1; step <= params.steps; ++step) {
    Matrix gram = p * p.transpose();
    gram.diagonal().setZero();
    const Matrix grad = 2.0 * (p - a) + 4.0 * params.lambda_orth * (gram * p);
    p -= params.step_size * grad;
    for (Eigen::Index c = 0; c < p.rows(); ++c) {
      const double norm = p.row(c).norm();
      if (!(norm >= kCollapseNorm) || !std::isfinite(norm)) {
        throw ComputeError("orco_update: prototype " + std::to_string(c) +
                           " collapsed at step " + std::to_string(step));
      }
      p.row(c) /= norm;
    }
    record(step);
  }
  return out;
}

PrototypeBank concm_calibrate(const PrototypeBank& bank, const Matrix& shots_normalized,
                              std::int64_t class_id, int session, std::uint64_t seed,
                              const ConcmParams& params) {
  check_novel(bank, shots_normalized, class_id, "concm_calibrate");
  std::vector<Eigen::Index> base_rows;
  for (std::size_t c = 0; c < bank.size(); ++c) {
    if (bank.session_of[c] == 0) base_rows.push_back(static_cast<Eigen::Index>(c));
  }
  if (base_rows.empty()) throw UsageError("concm_calibrate: bank has no base prototypes");

  const Vector q = normalized_or_throw(shot_mean(shots_normalized, "concm_calibrate"),
                                       "concm_calibrate shot mean");
  const Eigen::Index d = q.size();
  Matrix base(static_cast<Eigen::Index>(base_rows.size()), d);
  for (std::size_t r = 0; r < base_rows.size(); ++r) {
    base.row(static_cast<Eigen::Index>(r)) = bank.prototypes.row(base_rows[r]);
  }
  const Vector attention = softmax_scaled(base * q, 1.0 / std::sqrt(static_cast<double>(d)));
  const Vector context = base.transpose() * attention;
  const Vector calibrated = normalized_or_throw(params.alpha * q + (1.0 - params.alpha) * context,
                                                "concm_calibrate calibrated prototype");

  Rng rng(seed);
  Vector sum = calibrated;
  for (int s = 0; s < params.aug_count; ++s) {
    for (Eigen::Index j = 0; j < d; ++j) sum[j] += calibrated[j] + params.aug_sigma * rng.normal();
  }
  const Vector mean = sum / static_cast<double>(params.aug_count + 1);
  return append(bank, normalized_or_throw(mean, "concm_calibrate"), q, class_id, session);
}

SessionResult evaluate(const PrototypeBank& bank, const Matrix& test_normalized,
                       std::span<const std::int64_t> test_labels,
                       std::span<const std::int64_t> seen_class_ids, int session_index) {
  if (static_cast<Eigen::Index>(test_labels.size()) != test_normalized.rows()) {
    throw UsageError("evaluate: label count does not match row count");
  }
  SessionResult result;
  result.session_index = session_index;
  result.class_ids.assign(seen_class_ids.begin(), seen_class_ids.end());
  std::sort(result.class_ids.begin(), result.class_ids.end());
  std::map<std::int64_t, std::size_t> position;
  for (std::size_t i = 0; i < result.class_ids.size(); ++i) {
    position[result.class_ids[i]] = i;
  }
  for (std::int64_t id : bank.class_ids) {
    if (!position.contains(id)) {
      throw UsageError("evaluate: bank class " + std::to_string(id) + " is not in the seen set");
    }
  }

  const std::size_t c = result.class_ids.size();
  result.confusion.assign(c, std::vector<std::size_t>(c, 0));
  std::size_t total = 0;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < test_normalized.rows(); ++i) {
    const auto truth = position.find(test_labels[static_cast<std::size_t>(i)]);
    if (truth == position.end()) continue;
    const std::int64_t predicted = ncm_predict(bank, test_normalized.row(i).transpose());
    const std::size_t pred_pos = position.at(predicted);
    ++result.confusion[truth->second][pred_pos];
    ++total;
    if (pred_pos == truth->second) ++correct;
  }
  if (total == 0) throw UsageError("evaluate: no test rows from the seen classes");

  result.overall_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(total);
  result.per_class_recall.resize(c);
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t row_total =
        std::accumulate(result.confusion[k].begin(), result.confusion[k].end(), std::size_t{0});
    result.per_class_recall[k] =
        row_total == 0 ? 0.0
                       : static_cast<double>(result.confusion[k][k]) /
                             static_cast<double>(row_total);
  }
  return result;
}

ProtocolResult run_protocol(const SessionConfig& config, const ProtocolData& data) {
  config.validate();
  if (data.train.dim() != data.test.dim()) {
    throw UsageError("run_protocol: train and test feature widths differ");
  }

  std::set<std::int64_t> novel;
  for (const auto& session : config.sessions) novel.insert(session.begin(), session.end());
  std::vector<std::int64_t> base_ids;
  for (std::int64_t id : class_ids(data.train)) {
    if (!novel.contains(id) && base_ids.size() < config.base_class_count) base_ids.push_back(id);
  }
  if (base_ids.size() < config.base_class_count) {
    throw UsageError("run_protocol: training data has only " + std::to_string(base_ids.size()) +
                     " base classes");
  }
  const std::set<std::int64_t> base_set(base_ids.begin(), base_ids.end());

  // Rows by class in the training set.
  std::map<std::int64_t, std::vector<std::size_t>> train_rows;
  for (std::size_t i = 0; i < data.train.rows(); ++i) {
    train_rows[data.train.labels[i]].push_back(i);
  }
  for (std::int64_t id : novel) {
    if (train_rows[id].size() < config.shots) {
      throw UsageError("run_protocol: class " + std::to_string(id) + " has " +
                       std::to_string(train_rows[id].size()) + " training samples, " +
                       std::to_string(config.shots) + " shots requested");
    }
  }

  const Matrix train_raw = data.train.features_f64();
  std::vector<Eigen::Index> base_index;
  std::vector<std::int64_t> base_labels;
  for (std::size_t i = 0; i < data.train.rows(); ++i) {
    if (base_set.contains(data.train.labels[i])) {
      base_index.push_back(static_cast<Eigen::Index>(i));
      base_labels.push_back(data.train.labels[i]);
    }
  }
  const Matrix base_raw = train_raw(base_index, Eigen::all);
  const Preprocessor prep = fit_center(base_raw);
  const Matrix base_norm = center_normalize(base_raw, prep);

  // Fixed test subset, drawn from the protocol's classes only.
  ProtocolResult result;
  result.base_class_ids = base_ids;
  {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < data.test.rows(); ++i) {
      const std::int64_t y = data.test.labels[i];
      if (base_set.contains(y) || novel.contains(y)) candidates.push_back(i);
    }
    Rng rng(derive_seed(config.seed, "fscil.test_subset"));
    rng.shuffle(candidates);
    candidates.resize(std::min(candidates.size(), config.test_sample_count));
    std::sort(candidates.begin(), candidates.end());
    result.test_indices = std::move(candidates);
  }
  Matrix test_raw(static_cast<Eigen::Index>(result.test_indices.size()),
                  static_cast<Eigen::Index>(data.test.dim()));
  std::vector<std::int64_t> test_labels;
  for (std::size_t r = 0; r < result.test_indices.size(); ++r) {
    test_raw.row(static_cast<Eigen::Index>(r)) =
        data.test.features.row(static_cast<Eigen::Index>(result.test_indices[r])).cast<double>();
    test_labels.push_back(data.test.labels[result.test_indices[r]]);
  }
  const Matrix test_norm = center_normalize(test_raw, prep);

  PrototypeBank bank = base_prototypes(base_norm, base_labels);
  std::vector<std::int64_t> seen = base_ids;
  result.sessions.push_back(evaluate(bank, test_norm, test_labels, seen, 0));

  Rng shot_rng(derive_seed(config.seed, "fscil.shots"));
  for (std::size_t s = 0; s < config.sessions.size(); ++s) {
    const int session = static_cast<int>(s + 1);
    for (std::int64_t id : config.sessions[s]) {
      seen.push_back(id);
      // The shuffle is consumed for every class regardless of method, so
      // all methods see the same shots and smaller shot sets nest.
      std::vector<std::size_t> rows = train_rows[id];
      shot_rng.shuffle(rows);
      rows.resize(config.shots);
      std::sort(rows.begin(), rows.end());
      std::vector<Eigen::Index> idx(rows.begin(), rows.end());
      const Matrix shots = center_normalize(train_raw(idx, Eigen::all), prep);

      const std::string stage = "fscil.class." + std::to_string(id);
      switch (config.method) {
        case Method::baseline:
          break;
        case Method::sppr:
          bank = sppr_refine(bank, shots, id, session, config.sppr);
          break;
        case Method::orco:
          bank = orco_update(bank, shots, id, session, derive_seed(config.seed, stage),
                             config.orco);
          break;
        case Method::concm:
          bank = concm_calibrate(bank, shots, id, session, derive_seed(config.seed, stage),
                                 config.concm);
          break;
      }
    }
    result.sessions.push_back(evaluate(bank, test_norm, test_labels, seen, session));
  }

  result.summary = {config.method, config.shots, result.sessions.front().overall_accuracy,
                    result.sessions.back().overall_accuracy};
  return result;
}

}  // namespace ohz::fscil
