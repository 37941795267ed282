#include "doctest.h"
#include "helpers.hpp"

#include <filesystem>

#include "fmwiss/memory_paste.hpp"
#include "fmwiss/plane_format.hpp"

using namespace fmwiss;

namespace {

InstanceCrop solid_crop(ClassId id, int h, int w, std::uint8_t shade) {
  InstanceCrop c;
  c.class_id = id;
  c.height = h;
  c.width = w;
  c.rgb.assign(static_cast<std::size_t>(h * w * 3), shade);
  c.mask = Mask(h, w, 1);
  return c;
}

Image noise_image(std::mt19937_64& rng, int h, int w) {
  Image img("n", h, w);
  for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng() % 256);
  return img;
}

}  // namespace

TEST_CASE("bank_insert appends and evicts the oldest entry") {
  MemoryBank bank(2, {1, 2});
  bank_insert(bank, solid_crop(1, 2, 2, 10));
  CHECK(bank.archives().at(1).size() == 1);
  bank_insert(bank, solid_crop(1, 2, 2, 20));
  bank_insert(bank, solid_crop(1, 2, 2, 30));
  const auto& a = bank.archives().at(1);
  REQUIRE(a.size() == 2);
  CHECK(a[0].rgb[0] == 20);
  CHECK(a[1].rgb[0] == 30);
  CHECK(bank.inserted(1) == 3);
  CHECK(MemoryBank().capacity() == 50);

  CHECK_ERROR_CODE(bank_insert(bank, solid_crop(3, 1, 1, 0)), ErrorCode::kNotOldClass);
  InstanceCrop blank = solid_crop(1, 2, 2, 0);
  blank.mask = Mask(2, 2);
  CHECK_ERROR_CODE(bank_insert(bank, blank), ErrorCode::kEmptyForeground);
  InstanceCrop skew = solid_crop(1, 2, 2, 0);
  skew.mask = Mask(2, 3, 1);
  CHECK_ERROR_CODE(bank_insert(bank, skew), ErrorCode::kShapeMismatch);
}

TEST_CASE("bank_sample picks uniformly among nonempty archives") {
  MemoryBank one(5, {4});
  bank_insert(one, solid_crop(4, 3, 2, 77));
  Rng rng(1);
  const auto [cls, crop] = bank_sample(one, rng);
  CHECK(cls == 4);
  CHECK(crop == one.archives().at(4).front());

  MemoryBank two(5, {1, 2});
  for (int k = 0; k < 5; ++k) bank_insert(two, solid_crop(1, 1, 1, static_cast<std::uint8_t>(k)));
  bank_insert(two, solid_crop(2, 1, 1, 200));
  Rng a(2), b(2);
  std::map<ClassId, int> hits;
  for (int k = 0; k < 2000; ++k) {
    const auto x = bank_sample(two, a);
    const auto y = bank_sample(two, b);
    CHECK(x.second == y.second);
    ++hits[x.first];
  }
  // Class first, then crop: class 2 wins half the draws despite holding one crop.
  CHECK(hits[2] > 900);
  CHECK(hits[2] < 1100);

  MemoryBank empty(5, {1});
  CHECK_ERROR_CODE(bank_sample(empty, rng), ErrorCode::kEmptyBank);
}

TEST_CASE("copy_paste identity cases") {
  std::mt19937_64 gen(3);
  const Image img = noise_image(gen, 10, 12);
  MemoryBank bank(3, {1});
  bank_insert(bank, solid_crop(1, 3, 3, 9));
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    const auto r = copy_paste(img, bank, 0.0, rng);
    CHECK(r.image == img);
    CHECK_FALSE(r.paste.has_value());
  }
  const auto e = copy_paste(img, MemoryBank(3, {1}), 1.0, rng);
  CHECK(e.image == img);
  CHECK_FALSE(e.paste.has_value());
  CHECK_ERROR_CODE(copy_paste(img, bank, 1.5, rng), ErrorCode::kInvalidArgument);
}

TEST_CASE("copy_paste writes crop pixels exactly and only under the mask") {
  std::mt19937_64 gen(5);
  const Image img = noise_image(gen, 16, 16);
  InstanceCrop crop;
  crop.class_id = 2;
  crop.height = 3;
  crop.width = 4;
  crop.rgb.resize(36);
  for (auto& b : crop.rgb) b = static_cast<std::uint8_t>(gen() % 256);
  crop.mask = Mask(3, 4);
  crop.mask.at(0, 1) = crop.mask.at(1, 1) = crop.mask.at(1, 2) = crop.mask.at(2, 3) = 1;
  MemoryBank bank(1, {2});
  bank_insert(bank, crop);

  Rng a(6), b(6);
  const auto r = copy_paste(img, bank, 1.0, a);
  CHECK(copy_paste(img, bank, 1.0, b).image == r.image);
  REQUIRE(r.paste.has_value());
  CHECK(r.paste->class_id == 2);
  CHECK(r.paste->mask.popcount() == 4);
  // Locate the top-left anchor from the first pasted pixel, (0, 1) of the crop.
  int top = -1, left = -1;
  for (int i = 0; i < 16 && top < 0; ++i) {
    for (int j = 0; j < 16; ++j) {
      if (r.paste->mask.at(i, j)) {
        top = i;
        left = j - 1;
        break;
      }
    }
  }
  for (int i = 0; i < 16; ++i) {
    for (int j = 0; j < 16; ++j) {
      const bool under = r.paste->mask.at(i, j) != 0;
      for (int ch = 0; ch < 3; ++ch) {
        if (under) {
          CHECK(crop.mask.at(i - top, j - left) == 1);
          CHECK(r.image.pixel(i, j)[ch] == crop.rgb[((i - top) * 4 + (j - left)) * 3 + ch]);
        } else {
          CHECK(r.image.pixel(i, j)[ch] == img.pixel(i, j)[ch]);
        }
      }
    }
  }
}

TEST_CASE("oversized crops are centre-cropped to fit") {
  InstanceCrop big;
  big.class_id = 1;
  big.height = 7;
  big.width = 9;
  big.rgb.resize(7 * 9 * 3);
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 9; ++x) {
      for (int c = 0; c < 3; ++c) big.rgb[(y * 9 + x) * 3 + c] = static_cast<std::uint8_t>(y * 16 + x);
    }
  }
  big.mask = Mask(7, 9, 1);
  MemoryBank bank(1, {1});
  bank_insert(bank, big);
  const Image img("small", 3, 5);
  Rng rng(7);
  const auto r = copy_paste(img, bank, 1.0, rng);
  REQUIRE(r.paste.has_value());
  CHECK(r.paste->mask.popcount() == 15);
  // Offset (2, 2) into the crop.
  CHECK(r.image.pixel(0, 0)[0] == 2 * 16 + 2);
  CHECK(r.image.pixel(2, 4)[0] == 4 * 16 + 6);
}

TEST_CASE("extract_instances crops connected components") {
  Image img("e", 6, 6);
  for (int p = 0; p < 36; ++p) img.rgb[p * 3] = static_cast<std::uint8_t>(p);
  LabelMap labels(6, 6);
  labels.at(0, 0) = labels.at(0, 1) = labels.at(1, 1) = 1;
  labels.at(4, 4) = 1;
  labels.at(3, 0) = labels.at(4, 0) = 2;
  const auto crops = extract_instances(img, labels, {1});
  REQUIRE(crops.size() == 2);
  CHECK(crops[0].height == 2);
  CHECK(crops[0].width == 2);
  CHECK(crops[0].mask.popcount() == 3);
  CHECK(crops[0].mask.at(1, 0) == 0);
  CHECK(crops[0].rgb[(1 * 2 + 1) * 3] == 7);
  CHECK(crops[1].mask.popcount() == 1);
  CHECK(extract_instances(img, labels, {1}, 2).size() == 1);
  CHECK(extract_instances(img, labels, {1, 2}).size() == 3);
  CHECK_ERROR_CODE(extract_instances(img, LabelMap(5, 6), {1}), ErrorCode::kShapeMismatch);
}

TEST_CASE("bank file round-trips and layout") {
  MemoryBank bank(3, {1, 5});
  bank_insert(bank, solid_crop(1, 2, 3, 40));
  bank_insert(bank, solid_crop(5, 1, 1, 41));
  bank_insert(bank, solid_crop(5, 2, 2, 42));
  const auto bytes = encode_bank(bank);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "FMWB");
  // magic, version, class count, then per class id + count, per crop H, W, RGB, mask.
  const std::size_t want = 4 + 2 + 2 + (2 + 2) * 2 + (4 + 4 + 18 + 6) + (4 + 4 + 3 + 1) + (4 + 4 + 12 + 4);
  CHECK(bytes.size() == want);
  const MemoryBank back = decode_bank(bytes, 3);
  CHECK(back.archives() == bank.archives());
  CHECK(encode_bank(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "fmwiss_bank.fmwb";
  save_bank(path, bank);
  CHECK(load_bank(path, 3).archives() == bank.archives());
  std::filesystem::remove(path);

  auto bad = bytes;
  bad.resize(bad.size() - 3);
  CHECK_ERROR_CODE(decode_bank(bad, 3), ErrorCode::kFormatError);
}
