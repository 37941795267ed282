#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "fmwiss/image.hpp"
#include "fmwiss/losses.hpp"
#include "fmwiss/rng.hpp"
#include "fmwiss/tensor.hpp"

namespace fmwiss {

struct InstanceCrop {
  ClassId class_id = kBackgroundId;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, height*width*3
  Mask mask;

  bool operator==(const InstanceCrop&) const = default;
};

void validate_crop(const InstanceCrop& crop);

// Per-old-class FIFO archives of at most `capacity` crops.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::size_t capacity, std::set<ClassId> old_classes);

  void insert(InstanceCrop crop);
  std::pair<ClassId, const InstanceCrop*> sample(Rng& rng) const;

  std::size_t capacity() const noexcept { return capacity_; }
  const std::set<ClassId>& old_classes() const noexcept { return old_classes_; }
  const std::map<ClassId, std::deque<InstanceCrop>>& archives() const noexcept { return archives_; }
  std::uint64_t inserted(ClassId id) const;
  bool empty() const;

  bool operator==(const MemoryBank&) const = default;

 private:
  std::size_t capacity_ = 50;
  std::set<ClassId> old_classes_;
  std::map<ClassId, std::deque<InstanceCrop>> archives_;
  std::map<ClassId, std::uint64_t> inserted_;
};

void bank_insert(MemoryBank& bank, InstanceCrop crop);
std::pair<ClassId, InstanceCrop> bank_sample(const MemoryBank& bank, Rng& rng);

struct PasteResult {
  Image image;
  std::optional<PasteMask> paste;  // full image resolution
};

// With probability p (and a nonempty bank) pastes one archived instance at a
// uniform position; crops larger than the image are centre-cropped first.
PasteResult copy_paste(const Image& image, const MemoryBank& bank, double p, Rng& rng);

// Tight-box crops of the 4-connected components of each class in `classes`.
std::vector<InstanceCrop> extract_instances(const Image& image, const LabelMap& labels,
                                            const std::set<ClassId>& classes,
                                            std::size_t min_pixels = 1);

// "FMWB" | version u16 | class count u16 | per class: id u16, crop count u16,
// per crop: H u32, W u32, RGB (3*H*W), mask (H*W, 0/255).
std::vector<std::uint8_t> encode_bank(const MemoryBank& bank);
MemoryBank decode_bank(const std::vector<std::uint8_t>& bytes, std::size_t capacity);
void save_bank(const std::filesystem::path& path, const MemoryBank& bank);
MemoryBank load_bank(const std::filesystem::path& path, std::size_t capacity);

}  // namespace fmwiss
