#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace vle {

/// Deterministic random source.
///
/// Generator identity: "mt19937_64/boxmuller". Raw draws come from
/// std::mt19937_64 (whose output sequence is fixed by the C++ standard, so
/// streams are identical across platforms), uniform doubles take the top 53
/// bits, normals use the Box-Muller transform, and bounded integers use
/// rejection sampling. None of the std::*_distribution classes are used
/// because their algorithms are implementation-defined.
class Rng {
 public:
  static constexpr const char* kGeneratorId = "mt19937_64/boxmuller";

  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Standard normal deviate. Produced in pairs; the second of each pair is
  // cached and returned by the next call.
  double normal();

  // Uniform integer on [0, n). Unbiased (tail rejection).
  std::uint64_t below(std::uint64_t n);

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n);

  // k distinct indices from [0, population), returned in ascending order.
  std::vector<std::size_t> sample_indices(std::size_t population, std::size_t k);

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a 64-bit hash; used to derive per-item seeds from string ids.
std::uint64_t fnv1a64(std::string_view s);

// Stable seed combiner (splitmix64 finalizer over seed ^ salt).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace vle
