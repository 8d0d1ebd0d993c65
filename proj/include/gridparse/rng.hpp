#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>

namespace gridparse {

// Counter-based generator: draw n of stream (seed, stream) is
// splitmix64(key + n * golden_gamma), key = splitmix64(seed ^ splitmix64(stream)).
// Algorithm id "splitmix64-ctr/1". All conversions to reals are done here so
// draw sequences do not depend on the standard library's distributions.
class RngStream {
 public:
  static constexpr const char* kAlgorithm = "splitmix64-ctr/1";

  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi] inclusive (Lemire rejection, unbiased).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(n) - 1));
  }
  bool bernoulli(double p) { return uniform() < p; }
  // Box-Muller; the second variate is cached.
  double normal();

  // Derive an independent child stream (e.g. one per worker or per purpose).
  RngStream split(std::uint64_t child) const;

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace gridparse
