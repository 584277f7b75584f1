#include "ohz/common.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace ohz {

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : stage) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return global_seed + h;
}

std::uint64_t Rng::index(std::uint64_t n) {
  if (n == 0) throw ComputeError("Rng::index: empty range");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void require_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) throw ComputeError(std::string(what) + ": non-finite value");
}

void require_finite(const Vector& v, std::string_view what) {
  if (!v.allFinite()) throw ComputeError(std::string(what) + ": non-finite value");
}

}  // namespace ohz
