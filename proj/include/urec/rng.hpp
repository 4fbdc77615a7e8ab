#pragma once

#include <cstdint>
#include <random>

namespace urec {

// SplitMix64 finaliser; used to derive independent stream seeds.
constexpr auto mix_seed(std::uint64_t x) -> std::uint64_t
{
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr auto derive_seed(std::uint64_t seed, std::uint64_t stream) -> std::uint64_t
{
  return mix_seed(mix_seed(seed) ^ mix_seed(stream + 0x632BE59BD9B4E019ULL));
}

constexpr auto derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) -> std::uint64_t
{
  return derive_seed(derive_seed(seed, a), b);
}

/// Portable random source. std::mt19937_64 output is fully specified by the
/// standard, but the <random> distributions are not, so the conversions are
/// done here.
class Rng
{
public:
  explicit Rng(std::uint64_t seed)
    : engine_{seed}
  {
  }

  auto next() -> std::uint64_t { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  auto uniform() -> double { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  auto uniform(double lo, double hi) -> double { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), rejection sampled to avoid modulo bias.
  auto below(std::uint64_t n) -> std::uint64_t
  {
    std::uint64_t const limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  auto integer(std::int64_t lo, std::int64_t hi) -> std::int64_t
  {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

private:
  std::mt19937_64 engine_;
};

} // namespace urec
