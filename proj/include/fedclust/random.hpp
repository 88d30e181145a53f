#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedclust {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a root seed and a list of keys
/// (e.g. client id and round). Order of keys matters.
constexpr std::uint64_t derive_seed(std::uint64_t root,
                                    std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t h = mix64(root);
  for (std::uint64_t k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

/// Stream tags so that different consumers of the root seed never collide.
namespace stream {
inline constexpr std::uint64_t kModelInit = 1;
inline constexpr std::uint64_t kBlobs = 2;
inline constexpr std::uint64_t kPartition = 3;
inline constexpr std::uint64_t kSplit = 4;
inline constexpr std::uint64_t kLocalTrain = 5;
inline constexpr std::uint64_t kParticipation = 6;
inline constexpr std::uint64_t kLocalSplit = 7;
}  // namespace stream

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, bound) by rejection; bound must be > 0.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) {
  const std::uint64_t limit = Rng::max() - Rng::max() % bound;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % bound;
}

/// In-place Fisher-Yates shuffle driven by `uniform_below`, so the permutation
/// is identical across standard library implementations.
template <typename Range>
void fisher_yates(Range& range, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(std::size(range));
  if (n < 2) return;
  for (std::uint64_t i = n - 1; i > 0; --i) {
    const std::uint64_t j = uniform_below(rng, i + 1);
    using std::swap;
    swap(range[i], range[j]);
  }
}

}  // namespace fedclust
