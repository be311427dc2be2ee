#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cull/model/layered_model.hpp"

namespace cull {

// Checkpoint layout (all integers and reals little-endian):
//
//   magic    8 bytes  "CULLCKPT"
//   version  u32      kCheckpointVersion
//   config   u32 arch, i32 d_model, heads, d_ffn, n_encoder_layers,
//            n_decoder_layers, vocab_size, max_len, u64 seed
//   weights  u32 count, then per tensor: u32 name_len, name,
//            u32 rows, u32 cols, rows*cols f32
//   mask     u32 count, then per layer: u8 section, u32 index
//   adapters u8 present; if 1: u32 rank, f64 alpha, f64 dropout,
//            u32 n_roles, per role u32 name_len + name, u8 base_frozen,
//            u32 count, per adapter: u32 name_len, name, tensor a, tensor b
//   trailer  4 bytes  "END\0"
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize(const LayeredModel& m);
LayeredModel deserialize(const std::string& bytes);

void save(const LayeredModel& m, const std::filesystem::path& path);
LayeredModel load(const std::filesystem::path& path);

/// Hex FNV-1a digest of the serialized model.
std::string model_hash(const LayeredModel& m);

}  // namespace cull
