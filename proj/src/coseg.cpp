#include "fmwiss/coseg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "fmwiss/error.hpp"

namespace fmwiss {
namespace {

constexpr double kMinNorm = 1e-12;

void check_percent(double percent) {
  if (!(percent > 0.0 && percent <= 100.0)) {
    fail(ErrorCode::kBadPercentage, "K must be in (0, 100], got " + std::to_string(percent));
  }
}

template <typename Fn>
auto call_backend(const char* what, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& ex) {
    fail(ErrorCode::kBackendFailure, std::string(what) + ": " + ex.what());
  }
}

}  // namespace

int ScoreMap::index_of(ClassId id) const {
  auto it = std::find(classes.begin(), classes.end(), id);
  return it == classes.end() ? -1 : static_cast<int>(it - classes.begin());
}

FusionOp parse_fusion(const std::string& name) {
  if (name == "union") return FusionOp::kUnion;
  if (name == "intersection") return FusionOp::kIntersection;
  if (name == "none") return FusionOp::kNone;
  fail(ErrorCode::kConfigError, "unknown fusion op '" + name + "'");
}

std::string fusion_name(FusionOp op) {
  switch (op) {
    case FusionOp::kUnion: return "union";
    case FusionOp::kIntersection: return "intersection";
    case FusionOp::kNone: return "none";
  }
  return "union";
}

DenseFeatureMap normalize_features(const DenseFeatureMap& raw) {
  if (raw.dim() < 1) fail(ErrorCode::kDimMismatch, "feature map has no channels");
  DenseFeatureMap out = raw;
  const std::size_t n = raw.values.plane_size();
  for (std::size_t p = 0; p < n; ++p) {
    double sq = 0.0;
    for (int c = 0; c < raw.dim(); ++c) {
      const double v = raw.values.plane(c)[p];
      sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (!(norm >= kMinNorm)) {
      fail(ErrorCode::kZeroVector, "feature vector " + std::to_string(p) + " has zero norm");
    }
    for (int c = 0; c < raw.dim(); ++c) out.values.plane(c)[p] /= norm;
  }
  return out;
}

std::string fill_template(const std::string& tmpl, const std::string& class_name) {
  const auto pos = tmpl.find("{}");
  if (pos == std::string::npos) return tmpl + " " + class_name;
  return tmpl.substr(0, pos) + class_name + tmpl.substr(pos + 2);
}

std::vector<std::string> default_prompt_templates() {
  return {"a photo of a {}.", "a photo of the {}.", "a rendering of a {}.",
          "a close-up photo of a {}."};
}

std::vector<std::string> load_prompt_templates(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open prompt file " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.find("{}") == std::string::npos) {
      fail(ErrorCode::kFormatError, "prompt template without {} placeholder: " + line);
    }
    out.push_back(line);
  }
  if (out.empty()) fail(ErrorCode::kFormatError, "prompt file " + path + " has no templates");
  return out;
}

TextEmbeddingMatrix encode_text(VlpBackend& backend, const std::vector<ClassId>& classes,
                                const std::vector<std::string>& templates,
                                const std::map<ClassId, std::string>& class_names) {
  if (classes.empty()) fail(ErrorCode::kEmptyClassSet, "no classes to encode");
  if (templates.empty()) fail(ErrorCode::kInvalidArgument, "no prompt templates");
  std::set<ClassId> sorted(classes.begin(), classes.end());
  TextEmbeddingMatrix out;
  for (ClassId id : sorted) {
    auto it = class_names.find(id);
    const std::string name = it == class_names.end() ? std::to_string(id) : it->second;
    std::vector<double> mean;
    for (const auto& tmpl : templates) {
      const auto e = call_backend("embed_text", [&] { return backend.embed_text(fill_template(tmpl, name)); });
      if (mean.empty()) mean.assign(e.size(), 0.0);
      if (e.size() != mean.size() || e.empty()) {
        fail(ErrorCode::kDimMismatch, "prompt embeddings disagree in dimension");
      }
      for (std::size_t k = 0; k < e.size(); ++k) mean[k] += e[k];
    }
    for (double& v : mean) v /= static_cast<double>(templates.size());
    const double norm = std::sqrt(std::inner_product(mean.begin(), mean.end(), mean.begin(), 0.0));
    if (!(norm >= kMinNorm)) fail(ErrorCode::kZeroVector, "text embedding of '" + name + "'");
    for (double& v : mean) v /= norm;
    out.classes.push_back(id);
    out.rows.push_back(std::move(mean));
  }
  return out;
}

ScoreMap initial_mask(const DenseFeatureMap& features, const TextEmbeddingMatrix& text) {
  if (features.dim() != text.dim()) {
    fail(ErrorCode::kDimMismatch, "feature dim " + std::to_string(features.dim()) +
                                      " vs text dim " + std::to_string(text.dim()));
  }
  ScoreMap out;
  out.classes = text.classes;
  out.values = Tensor(static_cast<int>(text.classes.size()), features.height(), features.width());
  const std::size_t n = features.values.plane_size();
  for (std::size_t k = 0; k < text.rows.size(); ++k) {
    auto dst = out.values.plane(static_cast<int>(k));
    for (int c = 0; c < features.dim(); ++c) {
      const double t = text.rows[k][static_cast<std::size_t>(c)];
      const auto src = features.values.plane(c);
      for (std::size_t p = 0; p < n; ++p) dst[p] += src[p] * t;
    }
  }
  return out;
}

Mask binarize_topk(std::span<const double> values, int height, int width, double percent) {
  check_percent(percent);
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (values.size() != n) fail(ErrorCode::kShapeMismatch, "plane size does not match h*w");
  const auto keep = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(percent * static_cast<double>(n) / 100.0)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // NaN sorts last.
  auto before = [&](std::size_t a, std::size_t b) {
    const double va = values[a];
    const double vb = values[b];
    const bool na = std::isnan(va);
    const bool nb = std::isnan(vb);
    if (na != nb) return nb;
    if (!na && va != vb) return va > vb;
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), before);
  Mask out(height, width);
  for (std::size_t k = 0; k < keep; ++k) out.bits[order[k]] = 1;
  return out;
}

Mask foreground_of(const ScoreMap& init, ClassId class_id, double k_fg) {
  const int idx = init.index_of(class_id);
  if (idx < 0) fail(ErrorCode::kUnknownClass, "class " + std::to_string(class_id) + " not in score map");
  const int h = init.values.height();
  const int w = init.values.width();
  Mask top = binarize_topk(init.values.plane(idx), h, w, k_fg);
  const auto own = init.values.plane(idx);
  for (std::size_t p = 0; p < top.bits.size(); ++p) {
    if (!top.bits[p]) continue;
    for (int c = 0; c < init.values.channels(); ++c) {
      if (c == idx) continue;
      const double other = init.values.plane(c)[p];
      // argmax with ties to the lower channel
      if (other > own[p] || (other == own[p] && c < idx)) {
        top.bits[p] = 0;
        break;
      }
    }
  }
  return top;
}

std::vector<GridPoint> sample_seeds(const Mask& foreground, int count, Rng& rng) {
  if (count < 1) fail(ErrorCode::kInvalidArgument, "seed count must be >= 1");
  std::vector<std::size_t> pool;
  for (std::size_t p = 0; p < foreground.bits.size(); ++p) {
    if (foreground.bits[p]) pool.push_back(p);
  }
  if (pool.empty()) fail(ErrorCode::kEmptyForeground, "no foreground pixels to seed from");
  std::vector<std::size_t> picked;
  if (pool.size() < static_cast<std::size_t>(count)) {
    for (int k = 0; k < count; ++k) picked.push_back(pool[uniform_index(rng, pool.size())]);
  } else {
    std::sample(pool.begin(), pool.end(), std::back_inserter(picked), count, rng);
  }
  std::vector<GridPoint> seeds;
  seeds.reserve(picked.size());
  for (std::size_t p : picked) {
    seeds.push_back({static_cast<int>(p / static_cast<std::size_t>(foreground.width)),
                     static_cast<int>(p % static_cast<std::size_t>(foreground.width))});
  }
  return seeds;
}

Mask seed_attention_mask(SslBackend& backend, const Image& image,
                         const std::vector<GridPoint>& seeds, GridShape seed_grid,
                         double percent) {
  check_percent(percent);
  if (seeds.empty()) fail(ErrorCode::kEmptyForeground, "no seeds");
  Tensor mean;
  for (const auto& seed : seeds) {
    const AttentionStack att =
        call_backend("attention", [&] { return backend.attention(image, seed, seed_grid); });
    const Tensor& heads = att.heads;
    if (heads.channels() < 1) fail(ErrorCode::kBackendFailure, "attention stack has no heads");
    if (mean.empty()) {
      mean = Tensor(1, heads.height(), heads.width());
    } else if (!mean.same_grid(heads)) {
      fail(ErrorCode::kShapeMismatch, "attention grids differ between seeds");
    }
    Tensor head_mean(1, heads.height(), heads.width());
    for (int c = 0; c < heads.channels(); ++c) {
      const auto src = heads.plane(c);
      auto dst = head_mean.plane(0);
      for (std::size_t p = 0; p < src.size(); ++p) dst[p] += src[p];
    }
    auto acc = mean.plane(0);
    const auto hm = head_mean.plane(0);
    for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += hm[p] / heads.channels();
  }
  for (double& v : mean.data()) v /= static_cast<double>(seeds.size());
  return binarize_topk(mean.plane(0), mean.height(), mean.width(), percent);
}

Mask fuse_masks(const Mask& init_bin, const Mask& seeds_bin, FusionOp op) {
  if (!init_bin.same_shape(seeds_bin)) fail(ErrorCode::kShapeMismatch, "fusion inputs differ in shape");
  Mask out = init_bin;
  if (op == FusionOp::kNone) return out;
  for (std::size_t p = 0; p < out.bits.size(); ++p) {
    out.bits[p] = op == FusionOp::kUnion ? (init_bin.bits[p] | seeds_bin.bits[p])
                                         : (init_bin.bits[p] & seeds_bin.bits[p]);
  }
  return out;
}

PseudoLabelSet generate_pseudo_labels(const Image& image, const std::vector<ClassId>& image_labels,
                                      const std::vector<ClassId>& step_classes,
                                      const std::map<ClassId, std::string>& class_names,
                                      VlpBackend& vlp, SslBackend& ssl, const CosegConfig& cfg,
                                      Rng& rng) {
  if (image_labels.empty()) fail(ErrorCode::kInvalidArgument, image.id + ": no image-level labels");
  const std::set<ClassId> labels(image_labels.begin(), image_labels.end());
  for (ClassId c : labels) {
    if (std::find(step_classes.begin(), step_classes.end(), c) == step_classes.end()) {
      fail(ErrorCode::kUnknownClass, image.id + ": label " + std::to_string(c) + " is not a step class");
    }
  }
  const DenseFeatureMap features =
      normalize_features(call_backend("image_features", [&] { return vlp.image_features(image); }));
  const TextEmbeddingMatrix text = encode_text(vlp, step_classes, cfg.templates, class_names);
  const ScoreMap init = initial_mask(features, text);
  const GridShape grid{features.height(), features.width()};

  PseudoLabelSet out;
  out.image_id = image.id;
  out.height = image.height;
  out.width = image.width;
  bool all_fused = cfg.fusion != FusionOp::kNone;
  for (ClassId c : labels) {
    const Mask init_bin = foreground_of(init, c, cfg.k_fg_percent);
    const Mask init_full = upsample_nearest(init_bin, image.height, image.width);
    if (cfg.fusion == FusionOp::kNone) {
      out.masks.emplace(c, init_full);
      continue;
    }
    std::vector<GridPoint> seeds;
    try {
      seeds = sample_seeds(init_bin, cfg.num_seeds, rng);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptyForeground) throw;
      all_fused = false;
      out.masks.emplace(c, init_full);
      continue;
    }
    const Mask seeds_bin = seed_attention_mask(ssl, image, seeds, grid, cfg.k_percent);
    out.masks.emplace(c, fuse_masks(init_full, upsample_nearest(seeds_bin, image.height, image.width),
                                    cfg.fusion));
  }
  out.source = all_fused ? LabelSource::kFused : LabelSource::kInitOnly;
  return out;
}

}  // namespace fmwiss
