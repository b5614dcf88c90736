#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "icl/adam.hpp"
#include "icl/model.hpp"

namespace icl {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
  ModelState model;
  AdamState optimizer;
  std::string rng_state;  // textual std::mt19937_64 state of the training data stream
  std::uint64_t step = 0;
};

// Byte layout documented in docs/checkpoint_format.md.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace icl
