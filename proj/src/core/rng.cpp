#include "seqaug/core/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "seqaug/core/error.hpp"

namespace seqaug {

namespace {

std::mt19937_64 make_engine(const RngState& s) {
  std::seed_seq seq{static_cast<std::uint32_t>(s.seed), static_cast<std::uint32_t>(s.seed >> 32),
                    static_cast<std::uint32_t>(s.stream), static_cast<std::uint32_t>(s.stream >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

Rng::Rng(RngState state) : state_(state), engine_(make_engine(state)) {}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw InputError("Rng::below: empty range");
  // Rejection sampling keeps the result exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % n);
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

std::int64_t Rng::integer(std::int64_t lo, std::int64_t hi_inclusive) {
  if (hi_inclusive < lo) throw InputError("Rng::integer: empty range");
  return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi_inclusive - lo) + 1));
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Rng Rng::fork(std::uint64_t stream) const {
  // Mix the parent's stream into the child's so nested forks stay distinct.
  return Rng(RngState{state_.seed, state_.stream * 0x9E3779B97F4A7C15ULL + stream + 1});
}

}  // namespace seqaug
