#include "fmwiss/memory_paste.hpp"

#include <algorithm>

#include "fmwiss/byte_io.hpp"
#include "fmwiss/error.hpp"
#include "fmwiss/plane_format.hpp"
#include "fmwiss/synthetic.hpp"

namespace fmwiss {
namespace {

constexpr std::string_view kBankMagic = "FMWB";
constexpr std::uint16_t kBankVersion = 1;

}  // namespace

void validate_crop(const InstanceCrop& crop) {
  if (crop.height < 1 || crop.width < 1 || crop.mask.height != crop.height ||
      crop.mask.width != crop.width ||
      crop.rgb.size() != static_cast<std::size_t>(crop.height) * crop.width * 3) {
    fail(ErrorCode::kShapeMismatch, "crop patch and mask shapes differ");
  }
  if (crop.mask.popcount() == 0) fail(ErrorCode::kEmptyForeground, "crop mask has no foreground");
}

MemoryBank::MemoryBank(std::size_t capacity, std::set<ClassId> old_classes)
    : capacity_(capacity), old_classes_(std::move(old_classes)) {
  old_classes_.erase(kBackgroundId);
}

void MemoryBank::insert(InstanceCrop crop) {
  if (!old_classes_.count(crop.class_id)) {
    fail(ErrorCode::kNotOldClass, "class " + std::to_string(crop.class_id) + " is not an old class");
  }
  validate_crop(crop);
  ++inserted_[crop.class_id];
  if (capacity_ == 0) return;
  auto& archive = archives_[crop.class_id];
  archive.push_back(std::move(crop));
  while (archive.size() > capacity_) archive.pop_front();
}

std::uint64_t MemoryBank::inserted(ClassId id) const {
  auto it = inserted_.find(id);
  return it == inserted_.end() ? 0 : it->second;
}

bool MemoryBank::empty() const {
  return std::all_of(archives_.begin(), archives_.end(), [](const auto& kv) { return kv.second.empty(); });
}

std::pair<ClassId, const InstanceCrop*> MemoryBank::sample(Rng& rng) const {
  std::vector<ClassId> nonempty;
  for (const auto& [id, archive] : archives_) {
    if (!archive.empty()) nonempty.push_back(id);
  }
  if (nonempty.empty()) fail(ErrorCode::kEmptyBank, "memory bank holds no instances");
  const ClassId cls = nonempty[uniform_index(rng, nonempty.size())];
  const auto& archive = archives_.at(cls);
  return {cls, &archive[uniform_index(rng, archive.size())]};
}

void bank_insert(MemoryBank& bank, InstanceCrop crop) { bank.insert(std::move(crop)); }

std::pair<ClassId, InstanceCrop> bank_sample(const MemoryBank& bank, Rng& rng) {
  auto [cls, crop] = bank.sample(rng);
  return {cls, *crop};
}

PasteResult copy_paste(const Image& image, const MemoryBank& bank, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::kInvalidArgument, "paste probability outside [0, 1]");
  PasteResult out{image, std::nullopt};
  const double u = uniform_unit(rng);
  if (!(u < p) || bank.empty()) return out;
  const auto [cls, crop] = bank.sample(rng);

  const int h = std::min(crop->height, image.height);
  const int w = std::min(crop->width, image.width);
  const int off_y = (crop->height - h) / 2;
  const int off_x = (crop->width - w) / 2;
  bool any = false;
  for (int y = 0; y < h && !any; ++y) {
    for (int x = 0; x < w && !any; ++x) any = crop->mask.at(off_y + y, off_x + x) != 0;
  }
  if (!any) return out;

  const int top = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(image.height - h + 1)));
  const int left = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(image.width - w + 1)));
  PasteMask paste{cls, Mask(image.height, image.width)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!crop->mask.at(off_y + y, off_x + x)) continue;
      const std::uint8_t* src =
          crop->rgb.data() + (static_cast<std::size_t>(off_y + y) * crop->width + off_x + x) * 3;
      std::copy_n(src, 3, out.image.pixel(top + y, left + x));
      paste.mask.at(top + y, left + x) = 1;
    }
  }
  out.paste = std::move(paste);
  return out;
}

std::vector<InstanceCrop> extract_instances(const Image& image, const LabelMap& labels,
                                            const std::set<ClassId>& classes, std::size_t min_pixels) {
  if (labels.height != image.height || labels.width != image.width) {
    fail(ErrorCode::kShapeMismatch, "label map does not match image " + image.id);
  }
  const RegionMap regions = label_regions(labels);
  std::vector<InstanceCrop> out;
  for (std::size_t r = 0; r < regions.boxes.size(); ++r) {
    const auto& box = regions.boxes[r];
    if (!classes.count(box.label)) continue;
    InstanceCrop crop;
    crop.class_id = box.label;
    crop.height = box.bottom - box.top + 1;
    crop.width = box.right - box.left + 1;
    crop.rgb.assign(static_cast<std::size_t>(crop.height) * crop.width * 3, 0);
    crop.mask = Mask(crop.height, crop.width);
    for (int y = 0; y < crop.height; ++y) {
      for (int x = 0; x < crop.width; ++x) {
        const int i = box.top + y;
        const int j = box.left + x;
        if (regions.region[static_cast<std::size_t>(i) * labels.width + j] != static_cast<int>(r)) continue;
        crop.mask.at(y, x) = 1;
        std::copy_n(image.pixel(i, j), 3, crop.rgb.data() + (static_cast<std::size_t>(y) * crop.width + x) * 3);
      }
    }
    if (crop.mask.popcount() >= std::max<std::size_t>(1, min_pixels)) out.push_back(std::move(crop));
  }
  return out;
}

std::vector<std::uint8_t> encode_bank(const MemoryBank& bank) {
  ByteWriter w;
  w.bytes(kBankMagic);
  w.u16(kBankVersion);
  std::vector<ClassId> classes(bank.old_classes().begin(), bank.old_classes().end());
  w.u16(static_cast<std::uint16_t>(classes.size()));
  for (ClassId id : classes) {
    w.u16(id);
    auto it = bank.archives().find(id);
    const std::size_t count = it == bank.archives().end() ? 0 : it->second.size();
    if (count > 0xffff) fail(ErrorCode::kInvalidArgument, "archive too large for the bank format");
    w.u16(static_cast<std::uint16_t>(count));
    if (count == 0) continue;
    for (const auto& crop : it->second) {
      w.u32(static_cast<std::uint32_t>(crop.height));
      w.u32(static_cast<std::uint32_t>(crop.width));
      w.raw(crop.rgb.data(), crop.rgb.size());
      for (auto b : crop.mask.bits) w.u8(b ? 255 : 0);
    }
  }
  return w.take();
}

MemoryBank decode_bank(const std::vector<std::uint8_t>& bytes, std::size_t capacity) {
  ByteReader r(bytes, "memory bank");
  r.expect_magic(kBankMagic);
  if (r.u16() != kBankVersion) r.bad("unsupported version");
  const auto class_count = r.u16();
  std::vector<std::pair<ClassId, std::vector<InstanceCrop>>> parsed;
  std::set<ClassId> classes;
  for (std::uint16_t c = 0; c < class_count; ++c) {
    const ClassId id = r.u16();
    if (!classes.insert(id).second || id == kBackgroundId) r.bad("bad class id " + std::to_string(id));
    const auto count = r.u16();
    std::vector<InstanceCrop> crops;
    for (std::uint16_t k = 0; k < count; ++k) {
      InstanceCrop crop;
      crop.class_id = id;
      crop.height = static_cast<int>(r.u32());
      crop.width = static_cast<int>(r.u32());
      const std::size_t n = static_cast<std::size_t>(crop.height) * crop.width;
      if (crop.height < 1 || crop.width < 1 || n > r.remaining()) r.bad("bad crop extents");
      const std::uint8_t* rgb = r.raw(n * 3);
      crop.rgb.assign(rgb, rgb + n * 3);
      crop.mask = Mask(crop.height, crop.width);
      const std::uint8_t* m = r.raw(n);
      for (std::size_t p = 0; p < n; ++p) {
        if (m[p] != 0 && m[p] != 255) r.bad("mask byte is neither 0 nor 255");
        crop.mask.bits[p] = m[p] ? 1 : 0;
      }
      crops.push_back(std::move(crop));
    }
    parsed.emplace_back(id, std::move(crops));
  }
  r.expect_end();
  MemoryBank bank(capacity, classes);
  for (auto& [id, crops] : parsed) {
    for (auto& crop : crops) bank.insert(std::move(crop));
  }
  return bank;
}

void save_bank(const std::filesystem::path& path, const MemoryBank& bank) {
  write_file_bytes(path, encode_bank(bank));
}

MemoryBank load_bank(const std::filesystem::path& path, std::size_t capacity) {
  return decode_bank(read_file_bytes(path), capacity);
}

}  // namespace fmwiss
