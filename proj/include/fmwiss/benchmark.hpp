#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "fmwiss/coseg.hpp"
#include "fmwiss/distill.hpp"
#include "fmwiss/eval_protocol.hpp"
#include "fmwiss/synthetic.hpp"

namespace fmwiss {

// Confusion matrix over `evaluated` classes (a superset of the model's).
// Ground-truth pixels of classes outside `channels` are skipped.
ConfusionMatrix evaluate_model(const StudentModel& model, std::span<const SyntheticSample> samples,
                               std::span<const ClassId> channels, int stride,
                               const std::vector<ClassId>& evaluated);

// Base / new / all groups for a step.
ClassGroups step_groups(const Taxonomy& taxonomy, int step);

// In-memory synthetic incremental run: base training, pseudo labels for the
// first incremental step, the step itself, and evaluation on held-out images.
struct BenchmarkConfig {
  SyntheticSpec spec;
  SyntheticCounts counts;
  TrainConfig train;
  FusionOp fusion = FusionOp::kUnion;
  std::vector<ClassId> base_classes{1, 2};
  std::vector<ClassId> new_classes{3};
  std::map<ClassId, std::string> class_names{{1, "sign"}, {2, "leaf"}, {3, "kite"}};
};

BenchmarkConfig default_benchmark_config();

struct BenchmarkBase {
  Taxonomy taxonomy;
  SyntheticDataset data;
  BaseResult base;
  double base_miou = 0.0;  // base-class mean IoU of the base checkpoint
};

struct BenchmarkOutcome {
  double base_before = 0.0;
  double base_after = 0.0;
  double new_iou = 0.0;
  double pseudo_iou = 0.0;  // pseudo-label quality against hidden ground truth
  std::uint64_t student_digest = 0;
  std::vector<EpochMetrics> log;
  ConfusionMatrix confusion;
};

BenchmarkBase prepare_benchmark(const BenchmarkConfig& cfg);
BenchmarkOutcome run_benchmark_step(const BenchmarkBase& base, const BenchmarkConfig& cfg);

}  // namespace fmwiss
