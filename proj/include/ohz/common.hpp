#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace ohz {

/// Row-major so that a row is one sample, matching the on-disk layout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Base of every error thrown by the library. The CLI maps the category to
/// an exit code.
class Error : public std::runtime_error {
 public:
  enum class Category { usage, io, compute };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(Category::usage, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(Category::io, what) {}
};

class ComputeError : public Error {
 public:
  explicit ComputeError(const std::string& what) : Error(Category::compute, what) {}
};

/// Derives a per-stage seed from the global seed: seed + FNV-1a(stage).
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage);

/// Seeded generator with portable draws. The standard distributions are
/// implementation-defined, so shuffles and Gaussian noise are computed here
/// to keep outputs identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n);
  /// Uniform double in [0, 1).
  double uniform();
  /// Standard normal (Box-Muller, one value per call).
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Throws ComputeError if any entry is NaN or infinite.
void require_finite(const Matrix& m, std::string_view what);
void require_finite(const Vector& v, std::string_view what);

}  // namespace ohz
