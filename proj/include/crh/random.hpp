#pragma once

#include <cstdint>
#include <random>

namespace crh {

using Rng = std::mt19937_64;

// Independent consumers of randomness. Each gets its own engine derived from
// the run seed so toggling one feature never shifts another's draws.
enum class Stream : std::uint32_t {
  codebook = 1,
  init_assignment = 2,
  model_init = 3,
  batch_order = 4,
  greedy_order = 5,
  synthetic = 6,
};

inline Rng make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

inline Rng make_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32)};
  return Rng(seq);
}

}  // namespace crh
