#pragma once
#include <array>
#include <cstdint>
#include <vector>

namespace dpu {

// xoshiro256++ with splitmix64 seeding. Self-contained so that streams are
// bit-identical across platforms and standard libraries; state is four words
// and serializes directly into checkpoints.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed);

  std::uint64_t next_u64();

  // uniform in [0, 1), 53-bit resolution
  double uniform();
  // uniform in [lo, hi)
  double uniform(double lo, double hi);
  // uniform integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n);
  // standard normal via Box-Muller (no cached spare, keeps the state minimal)
  double normal();

  // Fisher-Yates draw of k distinct indices from [0, n)
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  // derive an independent seed for a child stream
  std::uint64_t fork_seed();

  std::array<std::uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace dpu
