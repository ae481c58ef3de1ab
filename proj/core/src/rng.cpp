#include "bpcf/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace bpcf {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined words.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  return d(engine_);
}

double Rng::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(engine_);
}

double Rng::normal(double mean, double sd) {
  std::normal_distribution<double> d(mean, sd);
  return d(engine_);
}

double Rng::gamma(double shape, double scale) {
  std::gamma_distribution<double> d(shape, scale);
  return d(engine_);
}

double Rng::inverse_gamma(double shape, double scale) {
  // 1/X ~ Gamma(shape, rate=scale) when X ~ InvGamma(shape, scale).
  std::gamma_distribution<double> d(shape, 1.0 / scale);
  return 1.0 / d(engine_);
}

double Rng::exponential(double rate) {
  std::exponential_distribution<double> d(rate);
  return d(engine_);
}

bool Rng::bernoulli(double p) {
  std::bernoulli_distribution d(p);
  return d(engine_);
}

int Rng::uniform_int(int n) {
  if (n < 1) throw std::invalid_argument("uniform_int: n must be >= 1");
  std::uniform_int_distribution<int> d(0, n - 1);
  return d(engine_);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::restore(const std::string& text) {
  std::istringstream is(text);
  is >> engine_;
  if (is.fail()) throw std::runtime_error("Rng::restore: malformed state string");
}

}  // namespace bpcf
