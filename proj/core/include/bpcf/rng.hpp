#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace bpcf {

// Derives a stream seed from a base seed, so that replications, methods and
// chains each consume an independent deterministic stream.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Thin wrapper around std::mt19937_64.  Distribution objects are constructed
// per call: draws depend only on the engine state, never on distribution
// object history, which keeps runs bit-reproducible across call sites.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform();                       // U(0, 1)
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double sd = 1.0);
  double gamma(double shape, double scale);       // mean = shape * scale
  double inverse_gamma(double shape, double scale);  // density x^{-shape-1} exp(-scale/x)
  double exponential(double rate = 1.0);
  bool bernoulli(double p);
  // Uniform over {0, ..., n-1}; n >= 1.
  int uniform_int(int n);

  // Engine state as text; restore() resumes the exact stream.
  std::string state() const;
  void restore(const std::string& text);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace bpcf
