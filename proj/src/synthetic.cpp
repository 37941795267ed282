#include "fmwiss/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <deque>
#include <numeric>

#include "fmwiss/error.hpp"

namespace fmwiss {
namespace {

using Rgb = std::array<int, 3>;

struct Palette {
  Rgb head;
  Rgb body;
};

Palette palette_of(ClassId id) {
  switch (id) {
    case 1: return {{215, 50, 45}, {165, 35, 30}};
    case 2: return {{45, 190, 70}, {30, 135, 50}};
    case 3: return {{60, 80, 225}, {230, 205, 40}};
    default: break;
  }
  Rng rng(splitmix64(0xc0105ULL + id));
  Palette p;
  for (int k = 0; k < 3; ++k) {
    p.head[k] = 30 + static_cast<int>(uniform_index(rng, 200));
    p.body[k] = 30 + static_cast<int>(uniform_index(rng, 200));
  }
  return p;
}

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Shape membership inside a box of size (h, w) at local coordinates (y, x).
bool inside_shape(int kind, int y, int x, int h, int w) {
  const double cy = (h - 1) / 2.0;
  const double cx = (w - 1) / 2.0;
  const double dy = (y - cy) / (h / 2.0);
  const double dx = (x - cx) / (w / 2.0);
  switch (kind) {
    case 0: return true;
    case 1: return dy * dy + dx * dx <= 1.0;
    default: return std::abs(dy) + std::abs(dx) <= 1.0;
  }
}

std::vector<double> random_unit(Rng& rng, int dim) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double sq = 0.0;
  for (double& x : v) {
    x = standard_normal(rng);
    sq += x * x;
  }
  const double n = std::sqrt(sq);
  for (double& x : v) x /= n;
  return v;
}

}  // namespace

SyntheticSample render_synthetic(const SyntheticSpec& spec, std::string id,
                                 const std::vector<ClassId>& objects, Rng& rng) {
  SyntheticSample s;
  s.image = Image(std::move(id), spec.height, spec.width);
  s.labels = LabelMap(spec.height, spec.width);
  const double tilt_y = (uniform_unit(rng) - 0.5) * 30.0;
  const double tilt_x = (uniform_unit(rng) - 0.5) * 30.0;
  for (int i = 0; i < spec.height; ++i) {
    for (int j = 0; j < spec.width; ++j) {
      const double shade = tilt_y * i / spec.height + tilt_x * j / spec.width;
      const double n = (uniform_unit(rng) - 0.5) * 36.0;
      auto* px = s.image.pixel(i, j);
      px[0] = clamp_byte(120 + shade + n);
      px[1] = clamp_byte(120 + shade + n);
      px[2] = clamp_byte(128 + shade + n);
    }
  }
  // Clutter: small patches of arbitrary color left unlabelled (void).
  for (int k = 0; k < spec.clutter; ++k) {
    const int size = 3 + static_cast<int>(uniform_index(rng, 6));
    const int top = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(spec.height - size + 1)));
    const int left = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(spec.width - size + 1)));
    Rgb c;
    for (int& v : c) v = 20 + static_cast<int>(uniform_index(rng, 216));
    for (int y = top; y < top + size; ++y) {
      for (int x = left; x < left + size; ++x) {
        auto* px = s.image.pixel(y, x);
        for (int q = 0; q < 3; ++q) px[q] = clamp_byte(c[static_cast<std::size_t>(q)]);
        s.labels.at(y, x) = kVoidId;
      }
    }
  }
  for (ClassId cls : objects) {
    const int span = spec.max_size - spec.min_size + 1;
    const int h = std::min(spec.height, spec.min_size + static_cast<int>(uniform_index(rng, span)));
    const int w = std::min(spec.width, spec.min_size + static_cast<int>(uniform_index(rng, span)));
    const int top = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(spec.height - h + 1)));
    const int left = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(spec.width - w + 1)));
    const Palette pal = palette_of(cls);
    const int kind = cls % 3;
    const int head_rows = static_cast<int>(std::lround(h * spec.head_fraction));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!inside_shape(kind, y, x, h, w)) continue;
        const Rgb& c = y < head_rows ? pal.head : pal.body;
        const double n = (uniform_unit(rng) - 0.5) * 24.0;
        auto* px = s.image.pixel(top + y, left + x);
        for (int k = 0; k < 3; ++k) px[k] = clamp_byte(c[static_cast<std::size_t>(k)] + n);
        s.labels.at(top + y, left + x) = cls;
      }
    }
  }
  for (ClassId id : s.labels.ids) {
    if (id != kBackgroundId && id != kVoidId) s.classes.insert(id);
  }
  return s;
}

const SyntheticSample* SyntheticDataset::find(const std::string& id) const {
  for (const auto* set : {&train, &val}) {
    for (const auto& s : *set) {
      if (s.image.id == id) return &s;
    }
  }
  return nullptr;
}

SyntheticDataset make_synthetic_dataset(const SyntheticSpec& spec, const Taxonomy& taxonomy,
                                        const SyntheticCounts& counts, std::uint64_t seed) {
  SyntheticDataset ds;
  Rng rng = make_stream(seed, "synthetic-data");
  auto pick = [&](const std::vector<ClassId>& pool) { return pool[uniform_index(rng, pool.size())]; };
  auto add = [&](std::vector<SyntheticSample>& dst, DatasetIndex& index, SyntheticSample s, bool gt) {
    if (s.classes.empty()) return;
    index.entries.push_back({s.image.id, s.classes, gt});
    dst.push_back(std::move(s));
  };
  char buf[32];
  const auto& base = taxonomy.new_classes(0);
  for (int k = 0; k < counts.base_images; ++k) {
    std::vector<ClassId> objs{pick(base)};
    if (uniform_unit(rng) < 0.5) objs.push_back(pick(base));
    std::snprintf(buf, sizeof buf, "b%04d", k);
    add(ds.train, ds.train_index, render_synthetic(spec, buf, objs, rng), true);
  }
  for (int step = 1; step < taxonomy.num_steps(); ++step) {
    const auto old_set = classes_seen(taxonomy, step - 1);
    const std::vector<ClassId> old(old_set.begin(), old_set.end());
    for (int k = 0; k < counts.step_images; ++k) {
      std::vector<ClassId> objs;
      if (uniform_unit(rng) < counts.old_in_step) objs.push_back(pick(old));
      objs.push_back(pick(taxonomy.new_classes(step)));
      std::snprintf(buf, sizeof buf, "s%d_%04d", step, k);
      add(ds.train, ds.train_index, render_synthetic(spec, buf, objs, rng), false);
    }
  }
  const auto all_set = classes_seen(taxonomy, taxonomy.num_steps() - 1);
  const std::vector<ClassId> all(all_set.begin(), all_set.end());
  for (int k = 0; k < counts.val_images; ++k) {
    std::vector<ClassId> objs{pick(all)};
    const int extra = static_cast<int>(uniform_index(rng, 3));
    for (int e = 0; e < extra; ++e) objs.push_back(pick(all));
    std::snprintf(buf, sizeof buf, "v%04d", k);
    add(ds.val, ds.val_index, render_synthetic(spec, buf, objs, rng), true);
  }
  return ds;
}

RegionMap label_regions(const LabelMap& labels) {
  RegionMap rm;
  rm.height = labels.height;
  rm.width = labels.width;
  rm.region.assign(labels.ids.size(), -1);
  std::deque<std::size_t> queue;
  for (std::size_t start = 0; start < labels.ids.size(); ++start) {
    if (rm.region[start] >= 0) continue;
    const int r = static_cast<int>(rm.boxes.size());
    const ClassId lbl = labels.ids[start];
    RegionMap::Box box{labels.height, labels.width, -1, -1, lbl};
    rm.region[start] = r;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t p = queue.front();
      queue.pop_front();
      const int i = static_cast<int>(p / static_cast<std::size_t>(labels.width));
      const int j = static_cast<int>(p % static_cast<std::size_t>(labels.width));
      box.top = std::min(box.top, i);
      box.left = std::min(box.left, j);
      box.bottom = std::max(box.bottom, i);
      box.right = std::max(box.right, j);
      const int di[] = {-1, 1, 0, 0};
      const int dj[] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int ni = i + di[k];
        const int nj = j + dj[k];
        if (ni < 0 || nj < 0 || ni >= labels.height || nj >= labels.width) continue;
        const std::size_t q = static_cast<std::size_t>(ni) * labels.width + nj;
        if (rm.region[q] >= 0 || labels.ids[q] != lbl) continue;
        rm.region[q] = r;
        queue.push_back(q);
      }
    }
    rm.boxes.push_back(box);
  }
  return rm;
}

LabelMap label_grid(const LabelMap& labels, int stride) {
  const int h = std::max(1, labels.height / stride);
  const int w = std::max(1, labels.width / stride);
  LabelMap out(h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const int si = std::min(labels.height - 1, i * stride + stride / 2);
      const int sj = std::min(labels.width - 1, j * stride + stride / 2);
      out.at(i, j) = labels.at(si, sj);
    }
  }
  return out;
}

GridPoint map_grid_point(GridPoint p, GridShape from, GridShape to) {
  const int i = static_cast<int>((2LL * p.i + 1) * to.height / (2LL * from.height));
  const int j = static_cast<int>((2LL * p.j + 1) * to.width / (2LL * from.width));
  return {std::clamp(i, 0, to.height - 1), std::clamp(j, 0, to.width - 1)};
}

SyntheticVlpBackend::SyntheticVlpBackend(GroundTruthProvider gt, std::map<ClassId, std::string> names,
                                         SyntheticVlpParams params)
    : gt_(std::move(gt)), names_(std::move(names)), params_(params) {
  if (params_.stride < 1 || params_.dim < 1) fail(ErrorCode::kInvalidArgument, "bad synthetic VLP params");
}

// Ids below `dim` get mutually orthonormal prototypes (seeded Gram-Schmidt),
// so class scores only leak through the noise.
std::vector<double> SyntheticVlpBackend::prototype(ClassId id) const {
  const auto draw = [this](ClassId k) {
    Rng rng(splitmix64(params_.seed ^ (0x5eedULL + k * 0x1000193ULL)));
    return random_unit(rng, params_.dim);
  };
  if (id >= params_.dim) return draw(id);
  std::vector<std::vector<double>> basis;
  for (ClassId k = 0; k <= id; ++k) {
    std::vector<double> v = draw(k);
    for (const auto& b : basis) {
      const double dot = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
      for (std::size_t c = 0; c < v.size(); ++c) v[c] -= dot * b[c];
    }
    const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  return basis.back();
}

DenseFeatureMap SyntheticVlpBackend::image_features(const Image& image) {
  const LabelMap grid = label_grid(gt_(image.id), params_.stride);
  const RegionMap regions = label_regions(grid);
  Rng rng = make_stream(params_.seed, "synthetic-vlp", image.id);
  const std::vector<double> bg = prototype(kBackgroundId);
  std::map<ClassId, std::vector<double>> protos;
  DenseFeatureMap out{Tensor(params_.dim, grid.height, grid.width)};
  const double per_dim = params_.noise / std::sqrt(static_cast<double>(params_.dim));
  for (int i = 0; i < grid.height; ++i) {
    for (int j = 0; j < grid.width; ++j) {
      const ClassId lbl = grid.at(i, j);
      double w_cls = 0.0;
      if (lbl != kBackgroundId && lbl != kVoidId) {
        const auto& box = regions.boxes[static_cast<std::size_t>(regions.region[static_cast<std::size_t>(i) * grid.width + j])];
        const int rows = box.bottom - box.top + 1;
        const bool head = (i - box.top) < std::max(1, static_cast<int>(std::lround(rows * params_.head_fraction)));
        w_cls = head ? 1.0 : params_.body_weight;
        if (!protos.count(lbl)) protos[lbl] = prototype(lbl);
      }
      for (int c = 0; c < params_.dim; ++c) {
        double v = (1.0 - w_cls) * bg[static_cast<std::size_t>(c)];
        if (w_cls > 0.0) v += w_cls * protos[lbl][static_cast<std::size_t>(c)];
        out.values.at(c, i, j) = v + per_dim * standard_normal(rng);
      }
    }
  }
  return out;
}

std::vector<double> SyntheticVlpBackend::embed_text(const std::string& prompt) {
  const std::string* best = nullptr;
  ClassId best_id = kBackgroundId;
  for (const auto& [id, name] : names_) {
    if (!name.empty() && prompt.find(name) != std::string::npos &&
        (best == nullptr || name.size() > best->size())) {
      best = &name;
      best_id = id;
    }
  }
  Rng rng(splitmix64(params_.seed ^ fnv1a64(prompt)));
  std::vector<double> v = best ? prototype(best_id) : random_unit(rng, params_.dim);
  const double per_dim = params_.prompt_noise / std::sqrt(static_cast<double>(params_.dim));
  for (double& x : v) x += per_dim * standard_normal(rng);
  return v;
}

SyntheticSslBackend::SyntheticSslBackend(GroundTruthProvider gt, SyntheticSslParams params)
    : gt_(std::move(gt)), params_(params) {
  if (params_.stride < 1 || params_.heads < 1) fail(ErrorCode::kInvalidArgument, "bad synthetic SSL params");
}

AttentionStack SyntheticSslBackend::attention(const Image& image, GridPoint seed, GridShape seed_grid) {
  const LabelMap grid = label_grid(gt_(image.id), params_.stride);
  const RegionMap regions = label_regions(grid);
  const GridPoint q = map_grid_point(seed, seed_grid, {grid.height, grid.width});
  const int seed_region = regions.region[static_cast<std::size_t>(q.i) * grid.width + q.j];
  Rng rng = make_stream(params_.seed, "synthetic-ssl",
                        image.id + ":" + std::to_string(q.i) + "," + std::to_string(q.j));
  AttentionStack out{Tensor(params_.heads, grid.height, grid.width)};
  for (int h = 0; h < params_.heads; ++h) {
    auto plane = out.heads.plane(h);
    for (std::size_t p = 0; p < plane.size(); ++p) {
      double base = params_.background;
      if (regions.region[p] == seed_region) {
        base = params_.same_region;
      } else if (grid.ids[p] != kBackgroundId) {
        base = params_.other_object;
      }
      plane[p] = std::max(0.0, base + params_.noise * standard_normal(rng));
    }
  }
  return out;
}

}  // namespace fmwiss
