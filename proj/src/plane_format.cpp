#include "fmwiss/plane_format.hpp"

#include <fstream>
#include <iterator>
#include <set>
#include <system_error>

#include "fmwiss/byte_io.hpp"
#include "fmwiss/error.hpp"

namespace fmwiss {
namespace {

constexpr std::string_view kMagic = "FMWM";

struct PlaneHeader {
  std::uint16_t flags = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<std::uint16_t> ids;
  std::uint8_t source = 0;
};

void write_header(ByteWriter& w, const PlaneHeader& h) {
  w.bytes(kMagic);
  w.u16(kPlaneFormatVersion);
  w.u16(h.flags);
  w.u32(h.height);
  w.u32(h.width);
  w.u16(static_cast<std::uint16_t>(h.ids.size()));
  for (auto id : h.ids) w.u16(id);
  w.u8(h.source);
}

PlaneHeader read_header(ByteReader& r) {
  r.expect_magic(kMagic);
  PlaneHeader h;
  const auto version = r.u16();
  if (version != kPlaneFormatVersion) r.bad("unsupported version " + std::to_string(version));
  h.flags = r.u16();
  h.height = r.u32();
  h.width = r.u32();
  const auto count = r.u16();
  for (std::uint16_t k = 0; k < count; ++k) h.ids.push_back(r.u16());
  h.source = r.u8();
  return h;
}

}  // namespace

std::size_t plane_header_size(std::size_t channels) { return 4 + 2 + 2 + 4 + 4 + 2 + 2 * channels + 1; }

std::vector<std::uint8_t> encode_mask_cache(const PseudoLabelSet& pls) {
  if (pls.masks.size() > 0xffff) fail(ErrorCode::kInvalidArgument, "too many mask planes");
  PlaneHeader h;
  h.flags = kPlaneFlagBinary;
  h.height = static_cast<std::uint32_t>(pls.height);
  h.width = static_cast<std::uint32_t>(pls.width);
  h.source = static_cast<std::uint8_t>(pls.source);
  for (const auto& [id, mask] : pls.masks) {
    if (mask.height != pls.height || mask.width != pls.width) {
      fail(ErrorCode::kShapeMismatch, "mask plane of class " + std::to_string(id) + " has wrong shape");
    }
    h.ids.push_back(id);
  }
  ByteWriter w;
  write_header(w, h);
  for (const auto& [id, mask] : pls.masks) {
    for (auto b : mask.bits) w.u8(b ? 255 : 0);
  }
  return w.take();
}

PseudoLabelSet decode_mask_cache(const std::vector<std::uint8_t>& bytes, std::string image_id) {
  ByteReader r(bytes, "mask cache " + image_id);
  const PlaneHeader h = read_header(r);
  if (!(h.flags & kPlaneFlagBinary)) r.bad("payload is not binary");
  if (h.source > 1) r.bad("bad source byte");
  PseudoLabelSet pls;
  pls.image_id = std::move(image_id);
  pls.height = static_cast<int>(h.height);
  pls.width = static_cast<int>(h.width);
  pls.source = static_cast<LabelSource>(h.source);
  const std::size_t n = static_cast<std::size_t>(h.height) * h.width;
  for (auto id : h.ids) {
    const std::uint8_t* p = r.raw(n);
    Mask m(pls.height, pls.width);
    for (std::size_t k = 0; k < n; ++k) {
      if (p[k] != 0 && p[k] != 255) r.bad("mask byte is neither 0 nor 255");
      m.bits[k] = p[k] ? 1 : 0;
    }
    if (!pls.masks.emplace(static_cast<ClassId>(id), std::move(m)).second) r.bad("duplicate class id");
  }
  r.expect_end();
  return pls;
}

void write_mask_cache(const std::filesystem::path& path, const PseudoLabelSet& pls) {
  write_file_bytes(path, encode_mask_cache(pls));
}

PseudoLabelSet read_mask_cache(const std::filesystem::path& path) {
  return decode_mask_cache(read_file_bytes(path), path.stem().string());
}

std::vector<std::uint8_t> encode_float_planes(const Tensor& tensor) {
  if (tensor.channels() > 0xffff) fail(ErrorCode::kInvalidArgument, "too many planes");
  PlaneHeader h;
  h.height = static_cast<std::uint32_t>(tensor.height());
  h.width = static_cast<std::uint32_t>(tensor.width());
  for (int c = 0; c < tensor.channels(); ++c) h.ids.push_back(static_cast<std::uint16_t>(c));
  ByteWriter w;
  write_header(w, h);
  for (double v : tensor.data()) w.f32(static_cast<float>(v));
  return w.take();
}

Tensor decode_float_planes(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "float planes");
  const PlaneHeader h = read_header(r);
  if (h.flags & kPlaneFlagBinary) r.bad("expected float payload");
  Tensor out(static_cast<int>(h.ids.size()), static_cast<int>(h.height), static_cast<int>(h.width));
  if (r.remaining() != out.size() * 4) r.bad("payload size does not match header");
  for (double& v : out.data()) v = r.f32();
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIoError, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::kIoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot move " + tmp.string() + " to " + path.string());
}

}  // namespace fmwiss
