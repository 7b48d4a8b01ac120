#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace seqaug {

struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

// Deterministic random source. The engine is std::mt19937_64 seeded through
// std::seed_seq, both of which are fully specified by the standard; the
// distributions are implemented here because the standard library ones are
// not reproducible across implementations.
class Rng {
 public:
  explicit Rng(RngState state = {});
  Rng(std::uint64_t seed, std::uint64_t stream) : Rng(RngState{seed, stream}) {}

  const RngState& state() const { return state_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  std::int64_t integer(std::int64_t lo, std::int64_t hi_inclusive);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();

  // Independent child stream; does not advance this generator.
  Rng fork(std::uint64_t stream) const;

 private:
  RngState state_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace seqaug
