#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fmwiss/coseg.hpp"
#include "fmwiss/image.hpp"
#include "fmwiss/label_space.hpp"

namespace fmwiss {

// Procedural toy world: two-tone shapes on a textured background. Every
// object has a "head" (upper part of its box) and a "body" drawn in two
// class-specific colors.
struct SyntheticSpec {
  int height = 64;
  int width = 64;
  int min_size = 22;
  int max_size = 28;
  double head_fraction = 0.4;
  int clutter = 20;  // unlabelled (void) patches of arbitrary color per image
};

struct SyntheticSample {
  Image image;
  LabelMap labels;
  std::set<ClassId> classes;
};

SyntheticSample render_synthetic(const SyntheticSpec& spec, std::string id,
                                 const std::vector<ClassId>& objects, Rng& rng);

struct SyntheticDataset {
  std::vector<SyntheticSample> train;
  std::vector<SyntheticSample> val;
  DatasetIndex train_index;
  DatasetIndex val_index;

  const SyntheticSample* find(const std::string& id) const;
};

struct SyntheticCounts {
  int base_images = 48;      // step-0 images, base classes only
  int step_images = 100;     // per incremental step
  int val_images = 48;
  double old_in_step = 0.3;  // chance a step image also holds an old object
};

SyntheticDataset make_synthetic_dataset(const SyntheticSpec& spec, const Taxonomy& taxonomy,
                                        const SyntheticCounts& counts, std::uint64_t seed);

using GroundTruthProvider = std::function<LabelMap(const std::string& image_id)>;

// Connected regions (4-neighbour, equal label) of a label grid.
struct RegionMap {
  int height = 0;
  int width = 0;
  std::vector<int> region;  // per cell
  struct Box { int top, left, bottom, right; ClassId label; };
  std::vector<Box> boxes;   // per region, inclusive bounds
};
RegionMap label_regions(const LabelMap& labels);

// Samples `labels` at the centre of each stride x stride cell.
LabelMap label_grid(const LabelMap& labels, int stride);

struct SyntheticVlpParams {
  int stride = 4;
  int dim = 16;
  double noise = 0.45;        // norm of the additive feature noise
  double body_weight = 0.25;  // class prototype weight below an object's head
  double prompt_noise = 0.1;
  double head_fraction = 0.4;
  std::uint64_t seed = 0;
};

// Scores derived from hidden ground truth: strong on object heads, weak on
// bodies, plus seeded noise.
class SyntheticVlpBackend final : public VlpBackend {
 public:
  SyntheticVlpBackend(GroundTruthProvider gt, std::map<ClassId, std::string> names,
                      SyntheticVlpParams params = {});
  DenseFeatureMap image_features(const Image& image) override;
  std::vector<double> embed_text(const std::string& prompt) override;

  std::vector<double> prototype(ClassId id) const;

 private:
  GroundTruthProvider gt_;
  std::map<ClassId, std::string> names_;
  SyntheticVlpParams params_;
};

struct SyntheticSslParams {
  int stride = 4;
  int heads = 4;
  double same_region = 1.0;
  double other_object = 0.15;
  double background = 0.05;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

// Category-agnostic attention: the seed's whole connected region lights up.
class SyntheticSslBackend final : public SslBackend {
 public:
  SyntheticSslBackend(GroundTruthProvider gt, SyntheticSslParams params = {});
  AttentionStack attention(const Image& image, GridPoint seed, GridShape seed_grid) override;

 private:
  GroundTruthProvider gt_;
  SyntheticSslParams params_;
};

// Maps a cell of `from` onto the cell of `to` containing its centre.
GridPoint map_grid_point(GridPoint p, GridShape from, GridShape to);

}  // namespace fmwiss
