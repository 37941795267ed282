#include "fmwiss/image.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fmwiss/error.hpp"

namespace fmwiss {
namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIoError, "short write to " + path.string());
}

struct Netpbm {
  std::string magic;
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t offset = 0;
};

// Parses the ASCII header; comments start with '#'.
Netpbm parse_header(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  Netpbm h;
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip_space();
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    if (t.empty()) fail(ErrorCode::kFormatError, "truncated netpbm header in " + what);
    return t;
  };
  try {
    h.magic = token();
    h.width = std::stoi(token());
    h.height = std::stoi(token());
    h.maxval = std::stoi(token());
  } catch (const std::logic_error&) {
    fail(ErrorCode::kFormatError, "bad netpbm header in " + what);
  }
  if (pos >= bytes.size()) fail(ErrorCode::kFormatError, "missing netpbm payload in " + what);
  h.offset = pos + 1;  // single whitespace byte ends the header
  if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) {
    fail(ErrorCode::kFormatError, "bad netpbm extents in " + what);
  }
  return h;
}

}  // namespace

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  std::ostringstream header;
  header << "P6\n" << image.width << " " << image.height << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  bytes.insert(bytes.end(), image.rgb.begin(), image.rgb.end());
  return bytes;
}

Image decode_ppm(const std::vector<std::uint8_t>& bytes, std::string id) {
  const Netpbm h = parse_header(bytes, id);
  if (h.magic != "P6" || h.maxval != 255) {
    fail(ErrorCode::kFormatError, "expected 8-bit P6 image for " + id);
  }
  Image image(std::move(id), h.height, h.width);
  if (bytes.size() - h.offset < image.rgb.size()) {
    fail(ErrorCode::kFormatError, "truncated PPM payload for " + image.id);
  }
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(h.offset), image.rgb.size(),
              image.rgb.begin());
  return image;
}

Image read_ppm(const std::filesystem::path& path, std::string id) {
  return decode_ppm(read_all(path), std::move(id));
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  write_all(path, encode_ppm(image));
}

LabelMap read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  const Netpbm h = parse_header(bytes, path.string());
  if (h.magic != "P5") fail(ErrorCode::kFormatError, "expected P5 label map " + path.string());
  LabelMap labels(h.height, h.width);
  const std::size_t n = labels.ids.size();
  const bool wide = h.maxval > 255;
  if (bytes.size() - h.offset < n * (wide ? 2 : 1)) {
    fail(ErrorCode::kFormatError, "truncated PGM payload " + path.string());
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (wide) {
      labels.ids[k] = static_cast<ClassId>((bytes[h.offset + 2 * k] << 8) | bytes[h.offset + 2 * k + 1]);
    } else {
      labels.ids[k] = bytes[h.offset + k];
    }
  }
  return labels;
}

void write_pgm(const std::filesystem::path& path, const LabelMap& labels) {
  ClassId max_id = 1;
  for (ClassId id : labels.ids) max_id = std::max(max_id, id);
  const bool wide = max_id > 255;
  std::ostringstream header;
  header << "P5\n" << labels.width << " " << labels.height << "\n" << (wide ? 65535 : 255) << "\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  for (ClassId id : labels.ids) {
    if (wide) bytes.push_back(static_cast<std::uint8_t>(id >> 8));
    bytes.push_back(static_cast<std::uint8_t>(id & 0xff));
  }
  write_all(path, bytes);
}

}  // namespace fmwiss
