#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace icl {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

// Independent stream for (seed, stream id).
Rng make_rng(std::uint64_t seed, std::uint64_t stream);

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& text);

// Well-known stream ids.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kTrainData = 2;
inline constexpr std::uint64_t kCurriculum = 3;
inline constexpr std::uint64_t kValidation = 4;
inline constexpr std::uint64_t kTest = 5;
inline constexpr std::uint64_t kProbe = 6;
inline constexpr std::uint64_t kInstruction = 7;
}  // namespace streams

}  // namespace icl
