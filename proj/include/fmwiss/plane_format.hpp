#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fmwiss/coseg.hpp"
#include "fmwiss/tensor.hpp"

namespace fmwiss {

// Little-endian plane container shared by the mask cache and the backend
// transports:
//   "FMWM" | version u16 = 1 | flags u16 (bit0: binary payload) |
//   H u32 | W u32 | C u16 | C x id u16 | source u8 |
//   C planes of H*W bytes (0/255) or H*W float32.
inline constexpr std::uint16_t kPlaneFormatVersion = 1;
inline constexpr std::uint16_t kPlaneFlagBinary = 0x1;

std::size_t plane_header_size(std::size_t channels);

std::vector<std::uint8_t> encode_mask_cache(const PseudoLabelSet& pls);
PseudoLabelSet decode_mask_cache(const std::vector<std::uint8_t>& bytes, std::string image_id);

void write_mask_cache(const std::filesystem::path& path, const PseudoLabelSet& pls);
PseudoLabelSet read_mask_cache(const std::filesystem::path& path);

// Float variant (flags bit0 = 0); channel ids are the plane indices.
std::vector<std::uint8_t> encode_float_planes(const Tensor& tensor);
Tensor decode_float_planes(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
// Writes through a temporary sibling and renames it into place.
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace fmwiss
