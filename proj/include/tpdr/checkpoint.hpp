#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "tpdr/encoder.hpp"

namespace tpdr {

/// Both encoder towers plus what is needed to reproduce their inputs.
struct Checkpoint {
  EncoderConfig config;
  EncoderParams query;
  EncoderParams product;
  std::string tokenizer_ref;  // path of the tokenizer the ids came from
  std::uint64_t step = 0;
};

/// Content hash (FNV-1a 64, hex) of config shape and every tensor of both
/// towers.
std::string fingerprint(const Checkpoint& checkpoint);

/// Binary: "TPDRCKP1", JSON header (config, tokenizer_ref, step, tensor
/// names and sizes), then raw little-endian doubles for the query tower
/// followed by the product tower.
void save_checkpoint(const Checkpoint& checkpoint,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

bool bit_identical(const EncoderParams& a, const EncoderParams& b);

}  // namespace tpdr
