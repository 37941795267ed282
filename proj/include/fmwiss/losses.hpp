#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fmwiss/coseg.hpp"
#include "fmwiss/rng.hpp"
#include "fmwiss/tensor.hpp"

namespace fmwiss {

inline constexpr double kProbClamp = 1e-7;

// Mean soft-target binary cross-entropy over every (channel, pixel) entry:
//   -1/N * sum [t log p + (1 - t) log(1 - p)],  p clamped to [eps, 1 - eps].
// When `grad` is set it receives dL/dp (zero where the clamp is active).
double soft_bce(const Tensor& probs, const Tensor& targets, Tensor* grad = nullptr);

// Gradient of soft_bce w.r.t. the logits behind `probs`: (p - t) / N.
Tensor soft_bce_logit_grad(const Tensor& probs, const Tensor& targets);

// Pseudo-label planes for `classes`, nearest-resampled to h x w. Classes
// without a plane get an all-zero target.
Tensor pseudo_targets(const PseudoLabelSet& pls, std::span<const ClassId> classes, int height, int width);

double loss_bce_new(const Tensor& probs_new, const PseudoLabelSet& pseudo,
                    std::span<const ClassId> new_classes, Tensor* grad = nullptr);
double loss_bce_old(const Tensor& probs_old, const Tensor& targets, Tensor* grad = nullptr);

struct PasteMask {
  ClassId class_id = kBackgroundId;
  Mask mask;
};

// Old-model probabilities with the pasted class forced to 1 under the paste.
Tensor build_old_targets(const Tensor& old_probs, std::span<const ClassId> old_channels,
                         const std::optional<PasteMask>& paste);

struct ContrastAnchor {
  int item = 0;   // index into the mini-batch
  int pixel = 0;  // row-major index on the embedding grid
  ClassId class_id = kBackgroundId;
  std::vector<double> embedding;
};

struct ContrastBatch {
  std::vector<ContrastAnchor> anchors;
};

// Per present class, `per_class` foreground pixels drawn without
// replacement (with replacement when fewer exist). Masks are resampled to
// `grid`. Embeddings are left empty for the caller to gather.
ContrastBatch sample_contrast_points(std::span<const PseudoLabelSet> batch, GridShape grid,
                                     int per_class, Rng& rng);

// Dense InfoNCE over anchors: positives share the anchor's class, negatives
// do not. Mean over anchors with at least one positive. `grads`, when set,
// receives dL/d(embedding) per anchor.
double loss_dcl(const ContrastBatch& batch, double tau,
                std::vector<std::vector<double>>* grads = nullptr);

}  // namespace fmwiss
