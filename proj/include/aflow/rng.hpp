#ifndef AFLOW_RNG_HPP_
#define AFLOW_RNG_HPP_

#include <cstdint>
#include <random>
#include <string>

namespace aflow {

// Deterministic random stream. The raw engine is std::mt19937_64 (whose
// output sequence the standard pins exactly); all distributions are derived
// here by hand so results do not depend on the standard library vendor.
// State round-trips through text exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased (rejection sampling).
  std::int64_t uniform_int(std::int64_t n);

  // Standard normal via Box-Muller; draws two uniforms per call.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::string state_string() const;
  void set_state(const std::string& text);

  // Derives an independent stream for a named purpose from a base seed.
  static std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
};

}  // namespace aflow

#endif  // AFLOW_RNG_HPP_
