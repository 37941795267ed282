#include "fmwiss/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "fmwiss/error.hpp"

namespace fmwiss {

double soft_bce(const Tensor& probs, const Tensor& targets, Tensor* grad) {
  if (!probs.same_shape(targets)) fail(ErrorCode::kShapeMismatch, "BCE probs and targets differ in shape");
  const auto p = probs.data();
  const auto t = targets.data();
  const double n = static_cast<double>(p.size());
  if (grad) *grad = Tensor(probs.channels(), probs.height(), probs.width());
  if (p.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double pc = std::clamp(p[k], kProbClamp, 1.0 - kProbClamp);
    sum += t[k] * std::log(pc) + (1.0 - t[k]) * std::log(1.0 - pc);
    if (grad && pc == p[k]) grad->data()[k] = -(t[k] / pc - (1.0 - t[k]) / (1.0 - pc)) / n;
  }
  return -sum / n;
}

Tensor soft_bce_logit_grad(const Tensor& probs, const Tensor& targets) {
  if (!probs.same_shape(targets)) fail(ErrorCode::kShapeMismatch, "BCE probs and targets differ in shape");
  Tensor g(probs.channels(), probs.height(), probs.width());
  const double n = static_cast<double>(probs.size());
  for (std::size_t k = 0; k < g.size(); ++k) g.data()[k] = (probs.data()[k] - targets.data()[k]) / n;
  return g;
}

Tensor pseudo_targets(const PseudoLabelSet& pls, std::span<const ClassId> classes, int height, int width) {
  Tensor out(static_cast<int>(classes.size()), height, width);
  for (std::size_t k = 0; k < classes.size(); ++k) {
    auto it = pls.masks.find(classes[k]);
    if (it == pls.masks.end()) continue;
    const Mask m = (it->second.height == height && it->second.width == width)
                       ? it->second
                       : downsample_nearest(it->second, height, width);
    auto dst = out.plane(static_cast<int>(k));
    for (std::size_t p = 0; p < dst.size(); ++p) dst[p] = m.bits[p];
  }
  return out;
}

double loss_bce_new(const Tensor& probs_new, const PseudoLabelSet& pseudo,
                    std::span<const ClassId> new_classes, Tensor* grad) {
  if (probs_new.channels() != static_cast<int>(new_classes.size())) {
    fail(ErrorCode::kShapeMismatch, "new-class probabilities do not cover the step classes");
  }
  for (const auto& [id, mask] : pseudo.masks) {
    if (std::find(new_classes.begin(), new_classes.end(), id) == new_classes.end()) {
      fail(ErrorCode::kShapeMismatch, "pseudo label for class " + std::to_string(id) + " outside the step");
    }
  }
  return soft_bce(probs_new, pseudo_targets(pseudo, new_classes, probs_new.height(), probs_new.width()), grad);
}

double loss_bce_old(const Tensor& probs_old, const Tensor& targets, Tensor* grad) {
  return soft_bce(probs_old, targets, grad);
}

Tensor build_old_targets(const Tensor& old_probs, std::span<const ClassId> old_channels,
                         const std::optional<PasteMask>& paste) {
  if (old_probs.channels() != static_cast<int>(old_channels.size())) {
    fail(ErrorCode::kShapeMismatch, "old probabilities do not match the old channel list");
  }
  Tensor out = old_probs;
  if (!paste) return out;
  auto it = std::find(old_channels.begin(), old_channels.end(), paste->class_id);
  if (it == old_channels.end() || paste->class_id == kBackgroundId) {
    fail(ErrorCode::kUnknownClass, "pasted class " + std::to_string(paste->class_id) + " is not an old class");
  }
  if (paste->mask.height != old_probs.height() || paste->mask.width != old_probs.width()) {
    fail(ErrorCode::kShapeMismatch, "paste mask does not match the probability grid");
  }
  auto plane = out.plane(static_cast<int>(it - old_channels.begin()));
  for (std::size_t p = 0; p < plane.size(); ++p) {
    if (paste->mask.bits[p]) plane[p] = 1.0;
  }
  return out;
}

ContrastBatch sample_contrast_points(std::span<const PseudoLabelSet> batch, GridShape grid,
                                     int per_class, Rng& rng) {
  if (per_class < 1) fail(ErrorCode::kInvalidArgument, "per_class must be >= 1");
  std::map<ClassId, std::vector<std::pair<int, int>>> pool;
  for (std::size_t item = 0; item < batch.size(); ++item) {
    for (const auto& [id, mask] : batch[item].masks) {
      const Mask m = (mask.height == grid.height && mask.width == grid.width)
                         ? mask
                         : downsample_nearest(mask, grid.height, grid.width);
      auto& dst = pool[id];
      for (std::size_t p = 0; p < m.bits.size(); ++p) {
        if (m.bits[p]) dst.emplace_back(static_cast<int>(item), static_cast<int>(p));
      }
    }
  }
  ContrastBatch out;
  for (const auto& [id, pixels] : pool) {
    if (pixels.empty()) continue;
    std::vector<std::pair<int, int>> picked;
    if (pixels.size() < static_cast<std::size_t>(per_class)) {
      for (int k = 0; k < per_class; ++k) picked.push_back(pixels[uniform_index(rng, pixels.size())]);
    } else {
      std::sample(pixels.begin(), pixels.end(), std::back_inserter(picked), per_class, rng);
    }
    for (const auto& [item, pixel] : picked) out.anchors.push_back({item, pixel, id, {}});
  }
  if (out.anchors.empty()) fail(ErrorCode::kNoForeground, "no pseudo-label foreground in the batch");
  return out;
}

double loss_dcl(const ContrastBatch& batch, double tau, std::vector<std::vector<double>>* grads) {
  if (!(tau > 0.0) || !std::isfinite(tau)) fail(ErrorCode::kBadTemperature, "tau must be positive");
  const auto& a = batch.anchors;
  const std::size_t n = a.size();
  if (n == 0) fail(ErrorCode::kInvalidArgument, "contrastive loss needs at least one anchor");
  const std::size_t dim = a[0].embedding.size();
  for (const auto& x : a) {
    if (x.embedding.size() != dim) fail(ErrorCode::kDimMismatch, "anchor embeddings differ in dimension");
  }
  std::vector<double> sim(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double s = std::inner_product(a[i].embedding.begin(), a[i].embedding.end(),
                                          a[j].embedding.begin(), 0.0) / tau;
      sim[i * n + j] = s;
      sim[j * n + i] = s;
    }
  }
  // dL/dsim before the final 1/count scaling
  std::vector<double> dsim(grads ? n * n : 0, 0.0);
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < n; ++i) {
    pos.clear();
    neg.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (a[j].class_id != a[i].class_id) {
        neg.push_back(j);
      } else if (j != i) {
        pos.push_back(j);
      }
    }
    if (pos.empty()) continue;
    ++counted;
    if (neg.empty()) continue;
    double neg_max = -INFINITY;
    for (std::size_t j : neg) neg_max = std::max(neg_max, sim[i * n + j]);
    const double inv_pos = 1.0 / static_cast<double>(pos.size());
    double anchor_loss = 0.0;
    for (std::size_t q : pos) {
      const double s_pos = sim[i * n + q];
      const double m = std::max(s_pos, neg_max);
      double denom = std::exp(s_pos - m);
      for (std::size_t j : neg) denom += std::exp(sim[i * n + j] - m);
      anchor_loss += std::log(denom) - (s_pos - m);
      if (grads) {
        dsim[i * n + q] += inv_pos * (std::exp(s_pos - m) / denom - 1.0);
        for (std::size_t j : neg) dsim[i * n + j] += inv_pos * std::exp(sim[i * n + j] - m) / denom;
      }
    }
    total += anchor_loss * inv_pos;
  }
  const double loss = counted ? total / static_cast<double>(counted) : 0.0;
  if (grads) {
    grads->assign(n, std::vector<double>(dim, 0.0));
    if (counted) {
      const double scale = 1.0 / (static_cast<double>(counted) * tau);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double g = dsim[i * n + j];
          if (g == 0.0) continue;
          for (std::size_t d = 0; d < dim; ++d) {
            (*grads)[i][d] += scale * g * a[j].embedding[d];
            (*grads)[j][d] += scale * g * a[i].embedding[d];
          }
        }
      }
    }
  }
  return loss;
}

}  // namespace fmwiss
