#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

namespace homophily {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds (Salmon, Moraes, Dror & Shaw 2011).
PhiloxCounter philox4x32(PhiloxCounter ctr, PhiloxKey key);

/// 64-bit finalizer used to derive keys from seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Independent stream domains. Adding a value here never shifts existing
/// streams, so keep the numbering stable.
enum class StreamPurpose : std::uint32_t {
  Population = 1,
  Classification = 2,
  Treatment = 3,
  ListOrder = 4,
  ListShuffle = 5,
  Dyad = 6,
  Baseline = 7,
  MonteCarlo = 8,
  Placebo = 9,
  Generic = 10,
};

/// Counter-based random stream keyed by (seed, purpose, replication, a, b).
///
/// Every value is a pure function of the key and the draw index, so two
/// streams built from the same key produce the same sequence regardless of
/// which thread builds them or in what order. The draw index occupies the
/// first counter word; (a, b, replication) occupy the rest.
class CounterStream {
 public:
  using result_type = std::uint64_t;

  CounterStream(std::uint64_t seed, StreamPurpose purpose,
                std::uint32_t replication = 0, std::uint32_t a = 0,
                std::uint32_t b = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on (0, 1).
  double uniform_open();
  bool bernoulli(double p);
  double exponential(double rate);
  /// Standard normal via Box-Muller (consumes two uniforms).
  double normal();
  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto k = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[k]);
    }
  }

 private:
  void refill();

  PhiloxKey key_{};
  PhiloxCounter counter_{};
  PhiloxCounter block_{};
  int used_ = 4;
};

}  // namespace homophily
