#pragma once

// Reproducibility contract: every stochastic piece of the pipeline (splits,
// parameter init, dropout masks, reparameterization noise, shuffles) draws
// from this stream. The generator is pinned to a fixed algorithm so a seed
// fully determines the byte-level outputs of a run:
//
//   * state: xoshiro256**, seeded by four successive SplitMix64 steps;
//   * uniform doubles: top 53 bits of the next 64-bit word, giving [0, 1);
//   * standard normals: Box-Muller, consuming exactly two uniforms per draw
//     (no caching of the second pair member);
//   * bounded integers: 128-bit multiply-high of the next word (Lemire-style
//     without rejection), used by the Fisher-Yates shuffle.

#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace cvae::nd {

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : state_) w = splitmix64(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; u1 is mapped into (0, 1] so the log is
  // always finite.
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi() * u2);
  }

  // Uniform integer in [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    const unsigned __int128 wide =
        static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::array<std::uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

  // Derives an independent sub-seed for a named purpose, so one run seed can
  // fan out into decoupled streams (split / init / noise / shuffle).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t purpose) {
    std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (purpose + 1));
    std::uint64_t a = splitmix64(x);
    std::uint64_t b = splitmix64(x);
    return a ^ rotl(b, 31);
  }

 private:
  static constexpr double two_pi() { return 6.283185307179586476925286766559; }

  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::array<std::uint64_t, 4> state_{};
};

}  // namespace cvae::nd
