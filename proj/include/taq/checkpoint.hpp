#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "taq/model.hpp"

namespace taq {

inline constexpr char kCheckpointMagic[4] = {'T', 'A', 'Q', 'M'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

// Binary layout (all integers and floats little-endian):
//
//   "TAQM" | version u16
//   config: n_layers, d_model, n_heads, vocab, max_seq, d_ff (u32 each), seed u64
//   plan:   present u8, then n_layers bytes of bits (32 = full precision)
//   count u32, then per tensor:
//     name_len u16 | name (UTF-8) | mode u8 | rows u32 | cols u32
//     mode 0: rows*cols float64, row-major
//     mode 1: group_size u32 | groups u32 | per group:
//             bits u8 | scale f64 | zero_point f64 | codes bit-packed to a
//             whole byte
//
// Quantized matrices are stored only as codes; on load their float weights
// are the dequantized values.
std::vector<std::uint8_t> serialize_checkpoint(
    const Model& model, const std::optional<std::vector<int>>& plan_bits = {});

struct LoadedCheckpoint {
  Model model;
  std::optional<std::vector<int>> plan_bits;
};

// Throws IoError on malformed input.
LoadedCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::optional<std::vector<int>>& plan_bits = {});
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace taq
