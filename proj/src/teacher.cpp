#include "fmwiss/teacher.hpp"

#include <cmath>

#include "fmwiss/byte_io.hpp"
#include "fmwiss/error.hpp"
#include "fmwiss/plane_format.hpp"

namespace fmwiss {
namespace {

constexpr std::string_view kTeacherMagic = "FMWT";
constexpr std::uint16_t kTeacherVersion = 1;
constexpr double kEmbedEps = 1e-12;

}  // namespace

TeacherHead::TeacherHead(const TeacherConfig& cfg, Rng& init) : cfg_(cfg) {
  if (cfg.rates.empty() || cfg.outputs < 1 || cfg.branch_channels < 1) {
    fail(ErrorCode::kInvalidArgument, "bad teacher configuration");
  }
  for (int rate : cfg.rates) branches_.emplace_back(cfg.in_channels, cfg.branch_channels, 3, rate, init);
  merge_ = Conv2d(embedding_dim(), cfg.outputs, 1, 1, init);
}

TeacherHead::Pass TeacherHead::forward(const Tensor& features) const {
  if (features.channels() != cfg_.in_channels) {
    fail(ErrorCode::kShapeMismatch, "teacher expects " + std::to_string(cfg_.in_channels) + " feature channels");
  }
  Pass pass;
  pass.concat = Tensor(embedding_dim(), features.height(), features.width());
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    pass.concat.set_channels(static_cast<int>(b) * cfg_.branch_channels, branches_[b].forward(features));
  }
  pass.activated = pass.concat;
  relu_inplace(pass.activated);
  pass.logits = merge_.forward(pass.activated);

  const std::size_t n = pass.concat.plane_size();
  pass.embeddings = pass.concat;
  pass.norms.assign(n, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    double sq = 0.0;
    for (int c = 0; c < embedding_dim(); ++c) sq += pass.concat.plane(c)[p] * pass.concat.plane(c)[p];
    const double norm = std::max(std::sqrt(sq), kEmbedEps);
    pass.norms[p] = norm;
    for (int c = 0; c < embedding_dim(); ++c) pass.embeddings.plane(c)[p] /= norm;
  }
  return pass;
}

Tensor TeacherHead::backward(const Tensor& features, const Pass& pass, const Tensor& dlogits,
                             const Tensor& dembeddings, bool want_dfeatures) {
  Tensor dconcat = merge_.backward(pass.activated, dlogits, true);
  relu_backward_inplace(pass.concat, dconcat);
  if (!dembeddings.empty()) {
    // d(z/|z|) = (de - e (e . de)) / |z|
    const int dim = embedding_dim();
    for (std::size_t p = 0; p < pass.norms.size(); ++p) {
      double dot = 0.0;
      for (int c = 0; c < dim; ++c) dot += pass.embeddings.plane(c)[p] * dembeddings.plane(c)[p];
      if (dot == 0.0) {
        bool any = false;
        for (int c = 0; c < dim && !any; ++c) any = dembeddings.plane(c)[p] != 0.0;
        if (!any) continue;
      }
      for (int c = 0; c < dim; ++c) {
        dconcat.plane(c)[p] +=
            (dembeddings.plane(c)[p] - pass.embeddings.plane(c)[p] * dot) / pass.norms[p];
      }
    }
  }
  Tensor dfeatures;
  if (want_dfeatures) dfeatures = Tensor(features.channels(), features.height(), features.width());
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const Tensor dy = dconcat.slice_channels(static_cast<int>(b) * cfg_.branch_channels, cfg_.branch_channels);
    const Tensor dx = branches_[b].backward(features, dy, want_dfeatures);
    if (want_dfeatures) {
      for (std::size_t k = 0; k < dx.size(); ++k) dfeatures.data()[k] += dx.data()[k];
    }
  }
  return dfeatures;
}

std::vector<Param*> TeacherHead::params() {
  std::vector<Param*> out;
  for (auto& b : branches_) {
    out.push_back(&b.weight);
    out.push_back(&b.bias);
  }
  out.push_back(&merge_.weight);
  out.push_back(&merge_.bias);
  return out;
}

std::vector<std::uint8_t> encode_teacher_checkpoint(TeacherHead& head) {
  const auto params = head.params();
  const auto values = export_parameters(params);
  ByteWriter w;
  w.bytes(kTeacherMagic);
  w.u16(kTeacherVersion);
  w.u64(values.size());
  for (float v : values) w.f32(v);
  return w.take();
}

void decode_teacher_checkpoint(const std::vector<std::uint8_t>& bytes, TeacherHead& head) {
  ByteReader r(bytes, "teacher checkpoint");
  r.expect_magic(kTeacherMagic);
  if (r.u16() != kTeacherVersion) r.bad("unsupported version");
  const std::uint64_t count = r.u64();
  const auto params = head.params();
  if (count != parameter_count(params)) r.bad("parameter count does not match the teacher layout");
  std::vector<float> values(count);
  for (float& v : values) v = r.f32();
  r.expect_end();
  import_parameters(params, values);
}

void save_teacher(const std::filesystem::path& path, TeacherHead& head) {
  write_file_bytes(path, encode_teacher_checkpoint(head));
}

void load_teacher(const std::filesystem::path& path, TeacherHead& head) {
  decode_teacher_checkpoint(read_file_bytes(path), head);
}

}  // namespace fmwiss
