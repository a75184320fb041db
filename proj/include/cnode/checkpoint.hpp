#pragma once

#include <cstdint>
#include <string>

#include "cnode/param_vector.hpp"

namespace cnode::diffcore {

struct CheckpointError : Error {
  using Error::Error;
};

// FNV-1a, used to stamp checkpoints with a hash of the model description.
std::uint64_t fnv1a(const std::string& text);

// Binary checkpoint: magic, format version, model hash, segment table
// (name, count), then all values as little-endian IEEE doubles in segment
// order. Loading verifies magic, version, hash, and finiteness.
void save_checkpoint(const std::string& path, const ParamVector& params,
                     std::uint64_t model_hash);

ParamVector load_checkpoint(const std::string& path, std::uint64_t model_hash);

}  // namespace cnode::diffcore
