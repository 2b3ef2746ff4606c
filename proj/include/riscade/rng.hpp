#ifndef RISCADE_RNG_HPP
#define RISCADE_RNG_HPP

#include <cmath>
#include <complex>
#include <cstdint>

namespace riscade {

// Purpose tags for deriving independent sub-streams. Every consumer of
// randomness splits the master seed with a tag plus its own indices, so
// parallel generation over (region, user, sample) is reproducible and
// chunk-order independent.
enum StreamTag : std::uint64_t {
  kTagPaths = 1,
  kTagFrozenBsRis = 2,
  kTagPilots = 3,
  kTagPrecoder = 4,
  kTagObservationNoise = 5,
  kTagLabelDesign = 6,
  kTagLabelNoise = 7,
  kTagModelInit = 8,
  kTagBatch = 9,
  kTagTestSet = 10,
  kTagEvalNoise = 11,
  kTagPretrain = 12,
  kTagShuffle = 13,
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

// Deterministic, splittable pseudorandom source (xoshiro256** core,
// splitmix64 key mixing). All distributions are pinned implementations so
// the same (seed, split keys) always yields the same values, independent
// of platform or standard-library version.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(seed) { reseed(); }

  // Derives an independent stream from this stream's key and the given ids.
  template <typename... Ids>
  Rng split(Ids... ids) const {
    std::uint64_t k = key_;
    ((k = detail::splitmix64(k ^ detail::splitmix64(static_cast<std::uint64_t>(ids) + 0x632be59bd9b4e019ULL))), ...);
    return Rng(k, 0);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; second value of each pair is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Circular complex Gaussian CN(0, 1): real and imaginary parts N(0, 1/2).
  std::complex<double> cgauss() {
    const double re = normal();
    const double im = normal();
    return {re * 0.70710678118654752440, im * 0.70710678118654752440};
  }

  // Fair +-1.
  double pm1() { return (next_u64() >> 63) ? 1.0 : -1.0; }

  // Uniform integer in [0, n), n > 0 (Lemire-style rejection-free enough
  // for n far below 2^64; uses 128-bit multiply).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

 private:
  Rng(std::uint64_t key, int) : key_(key) { reseed(); }

  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  void reseed() {
    std::uint64_t s = key_;
    for (auto& w : s_) w = detail::splitmix64(s ^= 0xd1b54a32d192ed03ULL);
    have_spare_ = false;
    spare_ = 0.0;
  }

  std::uint64_t key_;
  std::uint64_t s_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace riscade

#endif  // RISCADE_RNG_HPP
