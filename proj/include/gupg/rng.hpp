#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace gupg {

/// Seeded random stream with counter-based splitting.
///
/// Every stream is a std::mt19937_64 whose seed is a SplitMix64 hash of a
/// root seed and a list of stream indices, so stream (seed, i) is the same
/// whether episodes are generated serially or on worker threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Independent child stream for index `stream`.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);
  static Rng derive(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream);

  /// Uniform in [0, 1).
  double uniform();
  /// Uniform integer in [0, n).
  int uniform_int(int n);
  /// Index drawn from a probability row; round-off falls back to the last positive entry.
  int categorical(const Eigen::Ref<const Eigen::VectorXd>& probs);
  double normal();
  double gamma(double shape);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace gupg
