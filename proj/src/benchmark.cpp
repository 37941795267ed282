#include "fmwiss/benchmark.hpp"

#include <algorithm>

#include "fmwiss/error.hpp"
#include "fmwiss/rng.hpp"

namespace fmwiss {
namespace {

std::vector<ClassId> classes_in(const LabelMap& labels, std::span<const ClassId> wanted) {
  std::vector<ClassId> out;
  for (ClassId c : wanted) {
    if (std::find(labels.ids.begin(), labels.ids.end(), c) != labels.ids.end()) out.push_back(c);
  }
  return out;
}

double group_mean(const ConfusionMatrix& cm, const std::set<ClassId>& members) {
  const auto report = miou(cm, {{"g", members}});
  return report.at("g").mean.value_or(0.0);
}

std::vector<ClassId> all_classes(const Taxonomy& tax) {
  const auto seen = classes_seen(tax, tax.num_steps() - 1);
  return {seen.begin(), seen.end()};
}

}  // namespace

ConfusionMatrix evaluate_model(const StudentModel& model, std::span<const SyntheticSample> samples,
                               std::span<const ClassId> channels, int stride,
                               const std::vector<ClassId>& evaluated) {
  constexpr ClassId kIgnore = 0xFFFF;
  ConfusionMatrix cm(evaluated);
  for (const auto& s : samples) {
    // Classes the model has not been taught yet are left out of the count.
    LabelMap gt = s.labels;
    for (ClassId& id : gt.ids) {
      if (std::find(channels.begin(), channels.end(), id) == channels.end()) id = kIgnore;
    }
    confusion_update(cm, gt, predict(model, s.image, channels, stride), kIgnore);
  }
  return cm;
}

ClassGroups step_groups(const Taxonomy& taxonomy, int step) {
  std::set<ClassId> base(taxonomy.new_classes(0).begin(), taxonomy.new_classes(0).end());
  std::set<ClassId> fresh;
  for (int s = 1; s <= step; ++s) fresh.insert(taxonomy.new_classes(s).begin(), taxonomy.new_classes(s).end());
  std::set<ClassId> all = base;
  all.insert(fresh.begin(), fresh.end());
  ClassGroups groups{{"base", base}};
  if (!fresh.empty()) groups.emplace_back("new", fresh);
  groups.emplace_back("all", all);
  return groups;
}

BenchmarkConfig default_benchmark_config() {
  BenchmarkConfig cfg;
  // Desk scale: objects cover ~12-19% of a 64x64 image, so the top-K
  // percentages shrink accordingly; the tiny net needs a larger step size.
  cfg.train.k_percent = 15.0;
  cfg.train.k_fg_percent = 10.0;
  cfg.train.lr = 0.2;
  cfg.train.batch = 2;
  cfg.train.epochs = 15;
  cfg.train.warmup_epochs = 5;
  cfg.train.base_epochs = 15;
  return cfg;
}

BenchmarkBase prepare_benchmark(const BenchmarkConfig& cfg) {
  BenchmarkBase out;
  out.taxonomy = build_taxonomy(cfg.base_classes, {cfg.new_classes}, cfg.class_names);
  out.data = make_synthetic_dataset(cfg.spec, out.taxonomy, cfg.counts, cfg.train.seed);
  const auto base_ids = split_dataset(out.data.train_index, out.taxonomy, 0, Protocol::kDisjoint);
  std::vector<LabeledSample> samples;
  for (const auto& id : base_ids) {
    const SyntheticSample* s = out.data.find(id);
    samples.push_back({s->image, s->labels});
  }
  out.base = train_base(samples, out.taxonomy, cfg.train);
  const auto channels = channel_classes(out.taxonomy, 0);
  const ConfusionMatrix cm = evaluate_model(out.base.model, out.data.val, channels, cfg.train.stride, all_classes(out.taxonomy));
  std::set<ClassId> base(cfg.base_classes.begin(), cfg.base_classes.end());
  out.base_miou = group_mean(cm, base);
  return out;
}

BenchmarkOutcome run_benchmark_step(const BenchmarkBase& prepared, const BenchmarkConfig& cfg) {
  const Taxonomy& tax = prepared.taxonomy;
  const SyntheticDataset& data = prepared.data;
  BenchmarkOutcome out;
  out.base_before = prepared.base_miou;

  GroundTruthProvider gt = [&data](const std::string& id) {
    const SyntheticSample* s = data.find(id);
    if (!s) fail(ErrorCode::kBackendFailure, "no hidden ground truth for " + id);
    return s->labels;
  };
  const std::map<ClassId, std::string>& names = tax.class_names;
  SyntheticVlpParams vp;
  vp.stride = cfg.train.stride;
  vp.seed = cfg.train.seed;
  vp.head_fraction = cfg.spec.head_fraction;
  SyntheticSslParams sp;
  sp.stride = cfg.train.stride;
  sp.seed = cfg.train.seed;
  SyntheticVlpBackend vlp(gt, names, vp);
  SyntheticSslBackend ssl(gt, sp);

  CosegConfig ccfg;
  ccfg.k_percent = cfg.train.k_percent;
  ccfg.k_fg_percent = cfg.train.k_fg_percent;
  ccfg.num_seeds = cfg.train.n_seeds;
  ccfg.fusion = cfg.fusion;

  const int step = 1;
  const auto& fresh = tax.new_classes(step);
  Rng coseg_rng = make_stream(cfg.train.seed, "coseg", "1");
  std::vector<StepSample> samples;
  std::uint64_t inter = 0;
  std::uint64_t uni = 0;
  for (const auto& id : split_dataset(data.train_index, tax, step, Protocol::kOverlap)) {
    const SyntheticSample* s = data.find(id);
    const auto labels = classes_in(s->labels, fresh);
    if (labels.empty()) continue;
    PseudoLabelSet pls = generate_pseudo_labels(s->image, labels, fresh, names, vlp, ssl, ccfg, coseg_rng);
    for (const auto& [c, mask] : pls.masks) {
      for (std::size_t p = 0; p < mask.bits.size(); ++p) {
        const bool truth = s->labels.ids[p] == c;
        inter += mask.bits[p] && truth;
        uni += mask.bits[p] || truth;
      }
    }
    samples.push_back({s->image, std::move(pls)});
  }
  out.pseudo_iou = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;

  StepResult result = run_incremental_step(prepared.base.model, samples, prepared.base.bank, tax, step, cfg.train);
  const auto channels = channel_classes(tax, step);
  const ConfusionMatrix cm = evaluate_model(result.student, data.val, channels, cfg.train.stride, all_classes(tax));
  out.base_after = group_mean(cm, std::set<ClassId>(cfg.base_classes.begin(), cfg.base_classes.end()));
  out.new_iou = group_mean(cm, std::set<ClassId>(cfg.new_classes.begin(), cfg.new_classes.end()));
  const auto bytes = encode_student_checkpoint(result.student, taxonomy_digest(tax));
  out.student_digest = fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  out.log = std::move(result.log);
  out.confusion = cm;
  return out;
}

}  // namespace fmwiss
