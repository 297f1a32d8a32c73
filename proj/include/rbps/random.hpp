#pragma once

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include <cstdint>
#include <random>

#include "rbps/gauss.hpp"

namespace rbps {

using Rng = std::mt19937_64;

namespace detail {
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}
}  // namespace detail

// Stream tags keep the counter spaces of different consumers disjoint.
enum class StreamTag : std::uint64_t {
  Simulate = 1,
  Propagate = 2,
  Resample = 3,
  Backward = 4,
  Batch = 5,
  Mcmc = 6,
  Plain = 7,
};

/// Counter-derived stream: the same (seed, tag, a, b) always yields the same sequence.
inline Rng make_stream(std::uint64_t seed, StreamTag tag, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = detail::splitmix64(seed);
  h = detail::splitmix64(h ^ static_cast<std::uint64_t>(tag));
  h = detail::splitmix64(h ^ a);
  h = detail::splitmix64(h ^ (b + 0x632BE59BD9B4E019ULL));
  return Rng(h);
}

inline double standard_normal(Rng& rng) {
  boost::random::normal_distribution<double> nd;
  return nd(rng);
}

inline double uniform01(Rng& rng) {
  boost::random::uniform_01<double> u;
  return u(rng);
}

inline Vector standard_normal_vector(Eigen::Index n, Rng& rng) {
  boost::random::normal_distribution<double> nd;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

inline Vector sample(const MomentGaussian<double>& g, Rng& rng) {
  return g.mean + g.sqrt_cov * standard_normal_vector(g.dim(), rng);
}

}  // namespace rbps
