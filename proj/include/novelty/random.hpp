#pragma once

#include <cstdint>
#include <random>

namespace novelty {

using Rng = std::mt19937_64;

// Independent sub-seed for a named stream, so stages do not share RNG state.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Stream ids used by the pipeline.
namespace streams {
inline constexpr std::uint64_t kTrainData = 1;
inline constexpr std::uint64_t kTestData = 2;
inline constexpr std::uint64_t kNovelData = 3;
inline constexpr std::uint64_t kKnownUnknowns = 4;
inline constexpr std::uint64_t kInit = 5;
inline constexpr std::uint64_t kInitialTraining = 6;
inline constexpr std::uint64_t kExtension = 7;
inline constexpr std::uint64_t kFinetune = 8;
inline constexpr std::uint64_t kKMeans = 9;
inline constexpr std::uint64_t kFalsePositives = 10;
inline constexpr std::uint64_t kSubsample = 11;
}  // namespace streams

}  // namespace novelty
