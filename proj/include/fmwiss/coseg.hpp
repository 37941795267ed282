#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fmwiss/image.hpp"
#include "fmwiss/rng.hpp"
#include "fmwiss/tensor.hpp"

namespace fmwiss {

// h x w grid of d-dimensional vectors; `values` has d channels.
struct DenseFeatureMap {
  Tensor values;

  int height() const noexcept { return values.height(); }
  int width() const noexcept { return values.width(); }
  int dim() const noexcept { return values.channels(); }
};

struct TextEmbeddingMatrix {
  std::vector<ClassId> classes;
  std::vector<std::vector<double>> rows;

  int dim() const noexcept { return rows.empty() ? 0 : static_cast<int>(rows.front().size()); }
};

// Per-pixel class scores; channel k belongs to classes[k].
struct ScoreMap {
  std::vector<ClassId> classes;
  Tensor values;

  int index_of(ClassId id) const;  // -1 when absent
};

// n attention heads over an h x w grid, all entries >= 0.
struct AttentionStack {
  Tensor heads;
};

struct GridPoint {
  int i = 0;
  int j = 0;
  bool operator==(const GridPoint&) const = default;
};

struct GridShape {
  int height = 0;
  int width = 0;
};

enum class FusionOp { kUnion, kIntersection, kNone };
enum class LabelSource : std::uint8_t { kInitOnly = 0, kFused = 1 };

FusionOp parse_fusion(const std::string& name);
std::string fusion_name(FusionOp op);

struct PseudoLabelSet {
  std::string image_id;
  int height = 0;
  int width = 0;
  std::map<ClassId, Mask> masks;
  LabelSource source = LabelSource::kFused;

  bool operator==(const PseudoLabelSet&) const = default;
};

// Vision-language provider: dense image features and prompt embeddings in a
// shared space. Implementations must be deterministic and tolerate
// concurrent calls.
class VlpBackend {
 public:
  virtual ~VlpBackend() = default;
  virtual DenseFeatureMap image_features(const Image& image) = 0;
  virtual std::vector<double> embed_text(const std::string& prompt) = 0;
};

// Self-supervised provider: last-block attention of the token under `seed`
// (given on a `seed_grid`); the backend maps the seed to its own tokens.
class SslBackend {
 public:
  virtual ~SslBackend() = default;
  virtual AttentionStack attention(const Image& image, GridPoint seed, GridShape seed_grid) = 0;
};

DenseFeatureMap normalize_features(const DenseFeatureMap& raw);

TextEmbeddingMatrix encode_text(VlpBackend& backend, const std::vector<ClassId>& classes,
                                const std::vector<std::string>& templates,
                                const std::map<ClassId, std::string>& class_names);

std::string fill_template(const std::string& tmpl, const std::string& class_name);
std::vector<std::string> default_prompt_templates();
std::vector<std::string> load_prompt_templates(const std::string& path);

ScoreMap initial_mask(const DenseFeatureMap& features, const TextEmbeddingMatrix& text);

// Keeps exactly ceil(percent/100 * h*w) pixels: the largest values, ties
// going to the earlier pixel in row-major order.
Mask binarize_topk(std::span<const double> values, int height, int width, double percent);

Mask foreground_of(const ScoreMap& init, ClassId class_id, double k_fg);

std::vector<GridPoint> sample_seeds(const Mask& foreground, int count, Rng& rng);

// Mean over heads, then over seeds, then top-K. Result is on the backend's
// attention grid.
Mask seed_attention_mask(SslBackend& backend, const Image& image,
                         const std::vector<GridPoint>& seeds, GridShape seed_grid,
                         double percent);

Mask fuse_masks(const Mask& init_bin, const Mask& seeds_bin, FusionOp op);

struct CosegConfig {
  double k_percent = 70.0;     // attention binarization
  double k_fg_percent = 70.0;  // initial-mask foreground
  int num_seeds = 9;
  FusionOp fusion = FusionOp::kUnion;
  std::vector<std::string> templates = default_prompt_templates();
};

PseudoLabelSet generate_pseudo_labels(const Image& image, const std::vector<ClassId>& image_labels,
                                      const std::vector<ClassId>& step_classes,
                                      const std::map<ClassId, std::string>& class_names,
                                      VlpBackend& vlp, SslBackend& ssl, const CosegConfig& cfg,
                                      Rng& rng);

}  // namespace fmwiss
