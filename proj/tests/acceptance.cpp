// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Tolerances are fixed below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ohz/cli.hpp"
#include "ohz/featstore.hpp"
#include "ohz/fscil.hpp"
#include "ohz/io.hpp"
#include "ohz/metrics.hpp"
#include "ohz/prep.hpp"
#include "ohz/probe.hpp"
#include "ohz/scores.hpp"
#include "synthetic.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace ohz;
using testing::ClusterSpec;

namespace {

constexpr double kAurocRelTol = 1e-12;
constexpr double kAurocSeconds = 5.0;
constexpr double kKnnSeconds = 5.0;
constexpr double kMahalanobisTol = 1e-9;
constexpr double kLedoitWolfTol = 1e-9;
constexpr double kGradEpsilon = 1e-5;
constexpr double kGradTol = 1e-6;
constexpr double kMinAuroc = 99.0;
constexpr double kMaxFpr95 = 5.0;
constexpr double kChanceLow = 45.0;
constexpr double kChanceHigh = 55.0;
constexpr double kOsrSeconds = 60.0;
constexpr double kOscrPerfectTol = 1e-9;
constexpr double kOscrAccuracySlack = 1e-12;
constexpr double kOrcoSlack = 1e-9;
constexpr double kFscilMinAccuracy = 95.0;
constexpr double kShotSaturationPp = 1.0;
constexpr double kFscilSeconds = 120.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* pattern, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), pattern, a);
  return buf;
}

// ---- oracles ----

double mann_whitney_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  double wins = 0.0;
  for (double o : ood) {
    for (double i : id) wins += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
  }
  return 100.0 * wins / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

std::vector<double> brute_knn(const Matrix& query, const Matrix& train, std::size_t k) {
  std::vector<double> out;
  for (Eigen::Index q = 0; q < query.rows(); ++q) {
    std::vector<std::pair<double, std::size_t>> all;
    for (Eigen::Index j = 0; j < train.rows(); ++j) {
      double sq = 0.0;
      for (Eigen::Index t = 0; t < query.cols(); ++t) {
        const double diff = query(q, t) - train(j, t);
        sq += diff * diff;
      }
      all.emplace_back(std::sqrt(sq), static_cast<std::size_t>(j));
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : a.second < b.second;
    });
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += all[j].first;
    out.push_back(sum / static_cast<double>(k));
  }
  return out;
}

double quadratic_min(const Vector& x, const Matrix& means, const Matrix& prec) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < means.rows(); ++c) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      for (Eigen::Index j = 0; j < x.size(); ++j) {
        s += (x(i) - means(c, i)) * prec(i, j) * (x(j) - means(c, j));
      }
    }
    best = std::min(best, s);
  }
  return best;
}

// Shrinkage from the textbook sums: explicit outer products per row.
std::pair<Matrix, double> ledoit_wolf_oracle(const Matrix& r) {
  const Eigen::Index n = r.rows();
  const Eigen::Index d = r.cols();
  Matrix s = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index a = 0; a < d; ++a) {
      for (Eigen::Index b = 0; b < d; ++b) s(a, b) += r(i, a) * r(i, b);
    }
  }
  s /= static_cast<double>(n);
  double m = 0.0;
  for (Eigen::Index a = 0; a < d; ++a) m += s(a, a);
  m /= static_cast<double>(d);
  double delta2 = 0.0;
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = 0; b < d; ++b) {
      const double t = s(a, b) - (a == b ? m : 0.0);
      delta2 += t * t;
    }
  }
  double beta_bar2 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index a = 0; a < d; ++a) {
      for (Eigen::Index b = 0; b < d; ++b) {
        const double t = r(i, a) * r(i, b) - s(a, b);
        beta_bar2 += t * t;
      }
    }
  }
  beta_bar2 /= static_cast<double>(n) * static_cast<double>(n);
  const double lambda = std::min(beta_bar2, delta2) / delta2;
  Matrix sigma = (1.0 - lambda) * s;
  for (Eigen::Index a = 0; a < d; ++a) sigma(a, a) += lambda * m;
  return {sigma, lambda};
}

double mean_ce(const ProbeModel& model, const Matrix& x, const std::vector<std::int64_t>& y) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::vector<double> z(static_cast<std::size_t>(model.W.rows()));
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < model.W.rows(); ++k) {
      double v = model.b(k);
      for (Eigen::Index j = 0; j < x.cols(); ++j) v += model.W(k, j) * x(i, j);
      z[static_cast<std::size_t>(k)] = v;
      mx = std::max(mx, v);
    }
    double se = 0.0;
    for (double v : z) se += std::exp(v - mx);
    total += mx + std::log(se) - z[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])];
  }
  return total / static_cast<double>(x.rows());
}

// ---- criteria ----

void check_auroc_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> coarse(0, 40);  // 41 levels force ties
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    std::vector<double> id(200);
    std::vector<double> ood(200);
    for (double& v : id) v = coarse(rng) * 0.25;
    for (double& v : ood) v = coarse(rng) * 0.25 + (inst % 5) * 0.5;
    const double got = auroc(id, ood);
    const double want = mann_whitney_auroc(id, ood);
    worst = std::max(worst, std::abs(got - want) / std::max(std::abs(want), 1e-300));
  }
  const double secs = seconds_since(t0);
  report(worst <= kAurocRelTol && secs < kAurocSeconds, "auroc_matches_mann_whitney",
         fmt("max relative error %.3e", worst) + fmt(", %.3f s", secs));
}

void check_knn_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> level(-3, 3);
  std::size_t mismatches = 0;
  for (int inst = 0; inst < 20; ++inst) {
    // Coarse coordinates and duplicated rows produce equal distances.
    Matrix train(400, 32);
    for (Eigen::Index i = 0; i < train.rows(); ++i) {
      if (i % 7 == 3) {
        train.row(i) = train.row(i - 1);
        continue;
      }
      for (Eigen::Index j = 0; j < 32; ++j) train(i, j) = level(rng) * 0.125;
    }
    Matrix query(50, 32);
    for (Eigen::Index i = 0; i < query.rows(); ++i) {
      if (i % 5 == 0) {
        query.row(i) = train.row(i * 7);
        continue;
      }
      for (Eigen::Index j = 0; j < 32; ++j) query(i, j) = level(rng) * 0.125;
    }
    const auto got = knn_score(query, train, 5).scores;
    const auto want = brute_knn(query, train, 5);
    for (std::size_t i = 0; i < want.size(); ++i) mismatches += got[i] != want[i];
  }
  const double secs = seconds_since(t0);
  report(mismatches == 0 && secs < kKnnSeconds, "knn_matches_brute_force",
         std::to_string(mismatches) + " mismatches over 1000 queries" + fmt(", %.3f s", secs));
}

void check_mahalanobis() {
  std::mt19937_64 rng(13);
  double worst_identity = 0.0;
  double worst_spd = 0.0;
  for (int inst = 0; inst < 10; ++inst) {
    ClassStats st;
    st.class_means = testing::random_matrix(rng, 6, 16);
    st.precision = Matrix::Identity(16, 16);
    st.covariance = Matrix::Identity(16, 16);
    const Matrix x = testing::random_matrix(rng, 40, 16);
    const auto got = mahalanobis_score(x, st).scores;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < 6; ++c) {
        best = std::min(best, (x.row(i) - st.class_means.row(c)).squaredNorm());
      }
      worst_identity = std::max(worst_identity, std::abs(got[static_cast<std::size_t>(i)] - best));
    }

    const Matrix sigma = testing::random_spd(rng, 16);
    st.covariance = sigma;
    st.precision = sigma.inverse();
    const auto got_spd = mahalanobis_score(x, st).scores;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double want = quadratic_min(x.row(i).transpose(), st.class_means, st.precision);
      worst_spd = std::max(worst_spd, std::abs(got_spd[static_cast<std::size_t>(i)] - want));
    }
  }
  report(worst_identity <= kMahalanobisTol && worst_spd <= kMahalanobisTol,
         "mahalanobis_reductions",
         fmt("identity max error %.3e", worst_identity) + fmt(", SPD max error %.3e", worst_spd));
}

void check_ledoit_wolf() {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> scale(0.2, 3.0);
  double worst = 0.0;
  bool in_range = true;
  double lo = 1.0;
  double hi = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    Matrix r = testing::random_matrix(rng, 500, 8);
    // Vary anisotropy so lambda covers a range.
    const double spread = (inst % 10) / 9.0;
    for (Eigen::Index j = 0; j < 8; ++j) r.col(j) *= 1.0 + spread * (scale(rng) - 1.0);
    if (inst % 4 == 0) r.col(1) = 0.7 * r.col(0) + 0.3 * r.col(1);
    const auto got = ledoit_wolf(r);
    const auto [sigma, lambda] = ledoit_wolf_oracle(r);
    worst = std::max(worst, (got.covariance - sigma).cwiseAbs().maxCoeff());
    worst = std::max(worst, std::abs(got.lambda - lambda));
    in_range = in_range && got.lambda >= 0.0 && got.lambda <= 1.0;
    lo = std::min(lo, got.lambda);
    hi = std::max(hi, got.lambda);
  }
  report(worst <= kLedoitWolfTol && in_range, "ledoit_wolf_matches_formula",
         fmt("max error %.3e", worst) + fmt(", lambda range [%.4f", lo) + fmt(", %.4f]", hi));
}

void check_gradient() {
  std::mt19937_64 rng(15);
  double worst = 0.0;
  for (int batch = 0; batch < 10; ++batch) {
    const Eigen::Index k = 3 + batch % 3;
    const Eigen::Index d = 4 + batch % 4;
    const Eigen::Index n = 5 + batch;
    ProbeModel model{testing::random_matrix(rng, k, d), testing::random_matrix(rng, k, 1).col(0)};
    const Matrix x = testing::random_matrix(rng, n, d);
    std::vector<std::int64_t> y;
    for (Eigen::Index i = 0; i < n; ++i) y.push_back(static_cast<std::int64_t>(rng() % k));
    const ProbeGradient g = cross_entropy_gradient(model, x, y);
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = 0; b <= d; ++b) {
        double& p = b < d ? model.W(a, b) : model.b(a);
        const double keep = p;
        p = keep + kGradEpsilon;
        const double up = mean_ce(model, x, y);
        p = keep - kGradEpsilon;
        const double down = mean_ce(model, x, y);
        p = keep;
        const double fd = (up - down) / (2.0 * kGradEpsilon);
        const double analytic = b < d ? g.dW(a, b) : g.db(a);
        worst = std::max(worst, std::abs(fd - analytic));
      }
    }
  }
  report(worst <= kGradTol, "probe_gradient_check", fmt("max abs error %.3e", worst));
}

struct OsrCase {
  FeatureSet train;
  FeatureSet id_test;
  FeatureSet ood_test;
};

// 6 known classes; the 4 unknown clusters are either new axes or copies of
// known clusters 0..3.
OsrCase make_osr_case(std::uint64_t seed, bool identical) {
  ClusterSpec spec;
  spec.dim = 64;
  spec.classes = 10;
  spec.per_class = 500;
  FeatureSet train = testing::gaussian_clusters(spec, seed);
  spec.per_class = 200;
  FeatureSet test = testing::gaussian_clusters(spec, seed + 1000);
  const SplitSpec split = build_first_k_split(class_ids(train), 6);
  OsrCase c{select(train, split, SplitRole::id_train), select(test, split, SplitRole::id_test),
            select(test, split, SplitRole::ood_test)};
  if (identical) {
    // Move each unknown cluster onto a known axis: identical distribution.
    const double axis = spec.separation * spec.sigma / std::sqrt(2.0);
    std::size_t row = 0;
    for (std::size_t i = 0; i < test.rows(); ++i) {
      const std::int64_t y = test.labels[i];
      if (y < 6) continue;
      c.ood_test.features(static_cast<Eigen::Index>(row), y) -= static_cast<float>(axis);
      c.ood_test.features(static_cast<Eigen::Index>(row), y - 6) += static_cast<float>(axis);
      ++row;
    }
  }
  return c;
}

struct OsrScores {
  std::map<ScoreKind, std::pair<std::vector<double>, std::vector<double>>> by_kind;
  std::vector<std::int64_t> predictions;
};

OsrScores score_case(const OsrCase& c, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = derive_seed(seed, "probe.shuffle");
  const ProbeModel probe = train_probe(c.train, cfg).model;
  const Matrix raw = c.train.features_f64();
  const Preprocessor prep = fit_center(raw);
  const Matrix train_norm = center_normalize(raw, prep);
  const ClassStats stats = fit_class_stats(train_norm, c.train.labels, 6);
  ScoringArtifacts art{&probe, &prep, &stats, &train_norm};
  const Matrix id = c.id_test.features_f64();
  const Matrix ood = c.ood_test.features_f64();
  OsrScores out;
  for (ScoreKind kind : kAllScoreKinds) {
    auto [s_id, s_ood] = score_pipeline(kind, art, id, ood);
    out.by_kind[kind] = {s_id.scores, s_ood.scores};
  }
  out.predictions = predict(probe, id);
  return out;
}

std::vector<std::pair<std::vector<double>, std::vector<double>>> consistency_fixtures;

void check_osr_separability() {
  const auto t0 = Clock::now();
  const OsrCase sep = make_osr_case(21, false);
  const OsrScores scores = score_case(sep, 21);
  bool ok = true;
  std::string detail;
  for (const auto& [kind, pair] : scores.by_kind) {
    const double au = auroc(pair.first, pair.second);
    const double fpr = fpr_at_tpr(pair.first, pair.second, 0.95).fpr_percent;
    ok = ok && au >= kMinAuroc && fpr <= kMaxFpr95;
    detail += to_string(kind) + fmt(" auroc %.3f", au) + fmt(" fpr95 %.3f; ", fpr);
    consistency_fixtures.push_back(pair);
  }

  std::map<ScoreKind, double> chance;
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const OsrScores s = score_case(make_osr_case(seed, true), seed);
    for (const auto& [kind, pair] : s.by_kind) {
      chance[kind] += auroc(pair.first, pair.second) / 20.0;
      if (seed < 103) consistency_fixtures.push_back(pair);
    }
  }
  for (const auto& [kind, mean] : chance) {
    ok = ok && mean >= kChanceLow && mean <= kChanceHigh;
    detail += to_string(kind) + fmt(" identical-mean auroc %.3f; ", mean);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < kOsrSeconds;
  report(ok, "synthetic_osr_separability", detail + fmt("%.1f s", secs));
}

void check_internal_consistency() {
  std::mt19937_64 rng(16);
  std::uniform_int_distribution<int> coarse(0, 30);
  for (int inst = 0; inst < 50; ++inst) {
    std::vector<double> id(150 + inst);
    std::vector<double> ood(100 + 2 * inst);
    for (double& v : id) v = coarse(rng) * 0.1;
    for (double& v : ood) v = coarse(rng) * 0.1 + 0.5;
    consistency_fixtures.emplace_back(id, ood);
  }
  std::size_t bad = 0;
  for (const auto& [id, ood] : consistency_fixtures) {
    const OperatingPoint op = fpr_at_tpr(id, ood, 0.95);
    const DecisionStats ds = decision_stats(id, ood, 0.95);
    const bool same = op.threshold == ds.threshold && op.fpr_percent == 100.0 * ds.fpr_id &&
                      ds.retention_rate == 1.0 - ds.fpr_id;
    bad += !same;
  }
  report(bad == 0, "fpr_and_decision_stats_agree",
         std::to_string(consistency_fixtures.size() - bad) + "/" +
             std::to_string(consistency_fixtures.size()) + " fixtures agree exactly");
}

void check_oscr() {
  std::vector<double> id(100);
  std::vector<double> ood(80);
  std::vector<std::int64_t> labels(100);
  for (std::size_t i = 0; i < id.size(); ++i) {
    id[i] = static_cast<double>(i) * 0.01;
    labels[i] = static_cast<std::int64_t>(i % 4);
  }
  for (std::size_t i = 0; i < ood.size(); ++i) ood[i] = 5.0 + static_cast<double>(i) * 0.01;
  const double perfect = oscr(id, labels, labels, ood).area;
  std::vector<std::int64_t> wrong(labels);
  for (auto& w : wrong) w = (w + 1) % 4;
  const double none = oscr(id, wrong, labels, ood).area;

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_excess = -1.0;
  for (int inst = 0; inst < 50; ++inst) {
    std::vector<double> si(120);
    std::vector<double> so(90);
    std::vector<std::int64_t> y(120);
    std::vector<std::int64_t> pred(120);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < si.size(); ++i) {
      si[i] = std::round(u(rng) * 20.0) / 20.0;
      y[i] = static_cast<std::int64_t>(rng() % 5);
      pred[i] = u(rng) < 0.7 ? y[i] : static_cast<std::int64_t>(rng() % 5);
      correct += pred[i] == y[i];
    }
    for (double& v : so) v = std::round((u(rng) + 0.3) * 20.0) / 20.0;
    const double acc = static_cast<double>(correct) / static_cast<double>(si.size());
    worst_excess = std::max(worst_excess, oscr(si, pred, y, so).area - acc);
  }
  const bool ok = std::abs(perfect - 1.0) <= kOscrPerfectTol && none == 0.0 &&
                  worst_excess <= kOscrAccuracySlack;
  report(ok, "oscr_properties",
         fmt("perfect area %.12f", perfect) + fmt(", misclassified area %.3g", none) +
             fmt(", max(area - accuracy) %.3e", worst_excess));
}

fscil::ProtocolData fscil_benchmark(std::uint64_t seed) {
  ClusterSpec spec;
  spec.dim = 64;
  spec.classes = 10;
  spec.per_class = 500;
  fscil::ProtocolData data{testing::gaussian_clusters(spec, seed), {}};
  spec.per_class = 200;
  data.test = testing::gaussian_clusters(spec, seed + 1);
  return data;
}

void check_fscil() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;

  const fscil::ProtocolData data = fscil_benchmark(31);
  fscil::SessionConfig cfg;
  cfg.shots = 5;
  cfg.method = fscil::Method::baseline;
  const auto base_run = fscil::run_protocol(cfg, data);
  bool zero_recall = true;
  for (const auto& s : base_run.sessions) {
    for (std::size_t i = 0; i < s.class_ids.size(); ++i) {
      if (s.class_ids[i] >= 7) zero_recall = zero_recall && s.per_class_recall[i] == 0.0;
    }
  }
  ok = ok && zero_recall;
  detail += std::string("baseline novel recall zero: ") + (zero_recall ? "yes" : "no");

  // Direct updates on a 9-class bank plus one novel class.
  ClusterSpec toy;
  toy.dim = 16;
  toy.classes = 10;
  toy.per_class = 20;
  const FeatureSet toy_set = testing::gaussian_clusters(toy, 32);
  const Matrix toy_raw = toy_set.features_f64();
  const Preprocessor toy_prep = fit_center(toy_raw);
  const Matrix toy_norm = center_normalize(toy_raw, toy_prep);
  std::vector<Eigen::Index> base_rows;
  std::vector<Eigen::Index> shot_rows;
  std::vector<std::int64_t> base_labels;
  for (std::size_t i = 0; i < toy_set.rows(); ++i) {
    if (toy_set.labels[i] < 9) {
      base_rows.push_back(static_cast<Eigen::Index>(i));
      base_labels.push_back(toy_set.labels[i]);
    } else if (shot_rows.size() < 5) {
      shot_rows.push_back(static_cast<Eigen::Index>(i));
    }
  }
  const fscil::PrototypeBank bank =
      fscil::base_prototypes(toy_norm(base_rows, Eigen::all), base_labels);
  const Matrix shots = toy_norm(shot_rows, Eigen::all);
  const auto sppr = fscil::sppr_refine(bank, shots, 9, 1);
  const auto concm = fscil::concm_calibrate(bank, shots, 9, 1, 5);
  const bool frozen = sppr.prototypes.topRows(9) == bank.prototypes &&
                      concm.prototypes.topRows(9) == bank.prototypes;
  fscil::OrcoTrace trace;
  fscil::orco_update(bank, shots, 9, 1, 7, {}, &trace);
  double worst_rise = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < trace.loss.size(); ++i) {
    worst_rise = std::max(worst_rise, trace.loss[i] - trace.loss[i - 1]);
  }
  const bool monotone = worst_rise <= kOrcoSlack;
  ok = ok && frozen && monotone;
  detail += std::string("; prior prototypes bit-identical: ") + (frozen ? "yes" : "no") +
            fmt("; orco max step rise %.3e", worst_rise);

  cfg.shots = 10;
  for (fscil::Method m : {fscil::Method::concm, fscil::Method::orco}) {
    cfg.method = m;
    const double acc = fscil::run_protocol(cfg, data).summary.overall_accuracy;
    ok = ok && acc >= kFscilMinAccuracy;
    detail += "; " + fscil::to_string(m) + fmt(" 10-shot %.2f", acc);
  }

  for (fscil::Method m : {fscil::Method::baseline, fscil::Method::sppr, fscil::Method::orco,
                          fscil::Method::concm}) {
    double one = 0.0;
    double five = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      fscil::SessionConfig c;
      c.method = m;
      c.seed = seed;
      c.shots = 1;
      one += fscil::run_protocol(c, data).summary.overall_accuracy / 10.0;
      c.shots = 5;
      five += fscil::run_protocol(c, data).summary.overall_accuracy / 10.0;
    }
    ok = ok && five >= one - kShotSaturationPp;
    detail += "; " + fscil::to_string(m) + fmt(" mean 1-shot %.2f", one) +
              fmt(" 5-shot %.2f", five);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < kFscilSeconds;
  report(ok, "fscil_structural_suite", detail + fmt("; %.1f s", secs));
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) {
      files[fs::relative(entry.path(), dir).string()] = io::read_file(entry.path());
    }
  }
  return files;
}

void check_cli_determinism() {
  testing::TempDir tmp;
  ClusterSpec spec;
  spec.dim = 32;
  spec.per_class = 60;
  write_feature_file(testing::gaussian_clusters(spec, 41), tmp / "train.ohfs");
  spec.per_class = 25;
  write_feature_file(testing::gaussian_clusters(spec, 42), tmp / "test.ohfs");
  const std::string train = (tmp / "train.ohfs").string();
  const std::string test = (tmp / "test.ohfs").string();

  bool ran = true;
  for (const char* name : {"a", "b"}) {
    const fs::path r = tmp / name;
    auto at = [&](const char* rel) { return (r / rel).string(); };
    const std::vector<std::vector<std::string>> commands = {
        {"split", "--train", train, "--test", test, "--known-count", "6", "--out", at("split")},
        {"probe-train", "--train", at("split/id_train.ohfs"), "--seed", "5", "--out",
         at("probe")},
        {"score", "--checkpoint", at("probe/probe.ckpt"), "--stats", at("probe/stats.ckpt"),
         "--train", at("split/id_train.ohfs"), "--id", at("split/id_test.ohfs"), "--ood",
         at("split/ood_test.ohfs"), "--out", at("scores")},
        {"eval", "--scores", at("scores"), "--out", at("eval")},
        {"fscil", "--train", train, "--test", test, "--seed", "5", "--out", at("fscil")},
        {"report", "--eval", at("eval"), "--fscil", at("fscil"), "--out", at("report")},
    };
    for (const auto& args : commands) ran = ran && cli::run(args) == cli::kExitOk;
  }
  const auto a = snapshot(tmp / "a");
  const auto b = snapshot(tmp / "b");
  std::size_t differing = 0;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    differing += it == b.end() || it->second != bytes;
  }
  const bool ok = ran && !a.empty() && a.size() == b.size() && differing == 0;
  report(ok, "cli_determinism",
         std::to_string(a.size()) + " output files across 6 commands, " +
             std::to_string(differing) + " differ");
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> criteria = {
      check_auroc_oracle,   check_knn_oracle,           check_mahalanobis,
      check_ledoit_wolf,    check_gradient,             check_osr_separability,
      check_internal_consistency, check_oscr,           check_fscil,
      check_cli_determinism};
  for (const auto& criterion : criteria) {
    try {
      criterion();
    } catch (const std::exception& e) {
      report(false, "criterion raised", e.what());
    }
  }
  std::printf("SKIP real_backbone_reproduction: needs extracted backbone features\n");
  std::printf("SUMMARY: %d failing criteria\n", failures);
  return failures == 0 ? 0 : 1;
}
