#pragma once

#include <cstdint>
#include <limits>
#include <string_view>
#include <vector>

namespace thinsec {

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_string(std::string_view s);

/// Counter-based random stream: output i is mix64(key + i * golden), so a
/// stream is fully determined by its key and any (seed, epoch, index) tuple
/// can be materialised independently of every other one. Distributions are
/// implemented here rather than taken from <random> so sequences are
/// identical across standard libraries.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed) : key_(mix64(seed)) {}
  RngStream(std::uint64_t seed, std::uint64_t a) : key_(mix64(mix64(seed) ^ mix64(a + 0x51ed27ull))) {}
  RngStream(std::uint64_t seed, std::uint64_t a, std::uint64_t b)
      : key_(mix64(RngStream(seed, a).key_ ^ mix64(b + 0x9e3779b9ull))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  // [0, 1)
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // integer in [0, n)
  std::uint64_t below(std::uint64_t n);
  std::int64_t integer(std::int64_t lo, std::int64_t hi_inclusive);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace thinsec
