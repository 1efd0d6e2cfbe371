#pragma once

#include <cstdint>
#include <random>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/student_t_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

namespace hosar {

/// Purpose tags that separate the random streams drawn for one replication.
enum class StreamTag : std::uint64_t {
  Weights = 0x57,
  Regressors = 0x58,
  Errors = 0x55,
  Generic = 0x47,
};

/// SplitMix64 finalizer; used only to derive engine seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t stream_key(std::uint64_t master_seed, std::uint64_t index, std::uint64_t tag) {
  return mix64(master_seed ^ mix64(index ^ mix64(tag)));
}

/// A reproducible random stream keyed by (master seed, index, purpose).
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard; distributions come from Boost.Random, whose algorithms do not
/// vary across standard-library implementations. Together these make every
/// draw a pure function of the key on any platform.
class Stream {
 public:
  Stream(std::uint64_t master_seed, std::uint64_t index, StreamTag tag)
      : engine_(stream_key(master_seed, index, static_cast<std::uint64_t>(tag))) {}

  explicit Stream(std::uint64_t seed) : Stream(seed, 0, StreamTag::Generic) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return boost::random::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  double normal(double mean = 0.0, double sd = 1.0) {
    return boost::random::normal_distribution<double>(mean, sd)(engine_);
  }

  double student_t(double dof) { return boost::random::student_t_distribution<double>(dof)(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace hosar
