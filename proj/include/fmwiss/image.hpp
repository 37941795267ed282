#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fmwiss {

using ClassId = std::uint16_t;
inline constexpr ClassId kBackgroundId = 0;
// Unlabelled pixels: no class is positive there, evaluation skips them.
inline constexpr ClassId kVoidId = 0xFFFF;

// 8-bit RGB image, interleaved, row-major.
struct Image {
  std::string id;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::string image_id, int h, int w)
      : id(std::move(image_id)), height(h), width(w),
        rgb(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t* pixel(int i, int j) {
    return rgb.data() + (static_cast<std::size_t>(i) * width + j) * 3;
  }
  const std::uint8_t* pixel(int i, int j) const {
    return rgb.data() + (static_cast<std::size_t>(i) * width + j) * 3;
  }
  bool operator==(const Image&) const = default;
};

// Per-pixel class ids at image resolution.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<ClassId> ids;

  LabelMap() = default;
  LabelMap(int h, int w, ClassId fill = kBackgroundId)
      : height(h), width(w), ids(static_cast<std::size_t>(h) * w, fill) {}

  ClassId& at(int i, int j) { return ids[static_cast<std::size_t>(i) * width + j]; }
  ClassId at(int i, int j) const { return ids[static_cast<std::size_t>(i) * width + j]; }
  bool operator==(const LabelMap&) const = default;
};

// Binary PPM (P6) for images, binary PGM (P5, 8 or 16 bit) for label maps.
Image read_ppm(const std::filesystem::path& path, std::string id);
void write_ppm(const std::filesystem::path& path, const Image& image);
LabelMap read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const LabelMap& labels);

std::vector<std::uint8_t> encode_ppm(const Image& image);
Image decode_ppm(const std::vector<std::uint8_t>& bytes, std::string id);

}  // namespace fmwiss
