#include "fmwiss/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fmwiss/byte_io.hpp"
#include "fmwiss/error.hpp"
#include "fmwiss/losses.hpp"
#include "fmwiss/plane_format.hpp"
#include "fmwiss/synthetic.hpp"

namespace fmwiss {
namespace {

constexpr std::string_view kStudentMagic = "FMWS";
constexpr std::uint16_t kStudentVersion = 1;

void check_unit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) fail(ErrorCode::kConfigError, std::string(name) + " must lie in [0, 1]");
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t k = 0; k < dst.size(); ++k) dst.data()[k] += src.data()[k];
}

void scale(Tensor& t, double s) {
  for (double& v : t.data()) v *= s;
}

void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) p->zero_grad();
}

// One-hot ground truth on the model grid (cell-centre labels).
Tensor grid_one_hot(const LabelMap& labels, std::span<const ClassId> channels, int height, int width) {
  Tensor out(static_cast<int>(channels.size()), height, width);
  const int stride_y = labels.height / height;
  const int stride_x = labels.width / width;
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const ClassId id = labels.at(std::min(labels.height - 1, i * stride_y + stride_y / 2),
                                   std::min(labels.width - 1, j * stride_x + stride_x / 2));
      auto it = std::find(channels.begin(), channels.end(), id);
      if (it != channels.end()) out.at(static_cast<int>(it - channels.begin()), i, j) = 1.0;
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t k = 0; k < n; k += static_cast<std::size_t>(batch)) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(k),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, k + static_cast<std::size_t>(batch))));
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  check_unit(alpha, "alpha");
  check_unit(beta, "beta");
  check_unit(paste_prob, "paste_prob");
  if (!(lambda_dcl >= 0.0)) fail(ErrorCode::kConfigError, "lambda_dcl must be >= 0");
  if (!(tau > 0.0)) fail(ErrorCode::kConfigError, "tau must be > 0");
  if (!(k_percent > 0.0 && k_percent <= 100.0) || !(k_fg_percent > 0.0 && k_fg_percent <= 100.0)) {
    fail(ErrorCode::kConfigError, "K percentages must lie in (0, 100]");
  }
  if (n_seeds < 1 || per_class_points < 1) fail(ErrorCode::kConfigError, "seed and point counts must be >= 1");
  if (warmup_epochs < 0 || epochs < warmup_epochs || base_epochs < 0) {
    fail(ErrorCode::kConfigError, "need epochs >= warmup_epochs >= 0");
  }
  if (!(lr > 0.0) || !(momentum >= 0.0) || !(weight_decay >= 0.0)) fail(ErrorCode::kConfigError, "bad SGD settings");
  if (batch < 1 || stride < 1 || width < 1 || teacher_branch_channels < 1) {
    fail(ErrorCode::kConfigError, "batch, stride and widths must be >= 1");
  }
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"lambda_dcl", c.lambda_dcl}, {"alpha", c.alpha}, {"beta", c.beta}, {"tau", c.tau},
          {"K", c.k_percent}, {"K_fg", c.k_fg_percent}, {"n_seeds", c.n_seeds},
          {"per_class_points", c.per_class_points}, {"bank_capacity", c.bank_capacity},
          {"paste_prob", c.paste_prob}, {"warmup_epochs", c.warmup_epochs}, {"epochs", c.epochs},
          {"base_epochs", c.base_epochs}, {"lr", c.lr}, {"momentum", c.momentum},
          {"weight_decay", c.weight_decay}, {"batch", c.batch}, {"seed", c.seed},
          {"stride", c.stride}, {"width", c.width}, {"teacher_branch_channels", c.teacher_branch_channels},
          {"new_row_init", c.new_row_init}, {"hard_over_all_classes", c.hard_over_all_classes}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) fail(ErrorCode::kConfigError, "train config must be an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "lambda_dcl") c.lambda_dcl = v.get<double>();
      else if (key == "alpha") c.alpha = v.get<double>();
      else if (key == "beta") c.beta = v.get<double>();
      else if (key == "tau") c.tau = v.get<double>();
      else if (key == "K") c.k_percent = v.get<double>();
      else if (key == "K_fg") c.k_fg_percent = v.get<double>();
      else if (key == "n_seeds") c.n_seeds = v.get<int>();
      else if (key == "per_class_points") c.per_class_points = v.get<int>();
      else if (key == "bank_capacity") c.bank_capacity = v.get<std::size_t>();
      else if (key == "paste_prob") c.paste_prob = v.get<double>();
      else if (key == "warmup_epochs") c.warmup_epochs = v.get<int>();
      else if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "base_epochs") c.base_epochs = v.get<int>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "momentum") c.momentum = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "batch") c.batch = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "stride") c.stride = v.get<int>();
      else if (key == "width") c.width = v.get<int>();
      else if (key == "teacher_branch_channels") c.teacher_branch_channels = v.get<int>();
      else if (key == "new_row_init") c.new_row_init = v.get<double>();
      else if (key == "hard_over_all_classes") c.hard_over_all_classes = v.get<bool>();
      else fail(ErrorCode::kConfigError, "unknown train key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kConfigError, std::string("train config: ") + ex.what());
  }
  return c;
}

StudentModel::StudentModel(int width, int outputs, Rng& init)
    : conv1_(3, width, 3, 1, init),
      conv2_(width, width, 3, 1, init),
      conv3_(width, width, 3, 2, init),
      classifier_(width, outputs, 1, 1, init) {}

StudentModel::Pass StudentModel::forward(const Tensor& input) const {
  Pass p;
  p.input = input;
  p.pre1 = conv1_.forward(input);
  p.act1 = p.pre1;
  relu_inplace(p.act1);
  p.pre2 = conv2_.forward(p.act1);
  p.act2 = p.pre2;
  relu_inplace(p.act2);
  p.pre3 = conv3_.forward(p.act2);
  p.features = p.pre3;
  relu_inplace(p.features);
  p.logits = classifier_.forward(p.features);
  return p;
}

void StudentModel::backward(const Pass& p, const Tensor& dlogits, const Tensor& dfeatures) {
  Tensor d = dlogits.empty() ? Tensor(p.features.channels(), p.features.height(), p.features.width())
                             : classifier_.backward(p.features, dlogits, true);
  if (!dfeatures.empty()) add_into(d, dfeatures);
  relu_backward_inplace(p.pre3, d);
  d = conv3_.backward(p.act2, d, true);
  relu_backward_inplace(p.pre2, d);
  d = conv2_.backward(p.act1, d, true);
  relu_backward_inplace(p.pre1, d);
  conv1_.backward(p.input, d, false);
}

void StudentModel::extend_outputs(int rows, Rng& init, double scale) { classifier_.add_outputs(rows, init, scale); }

std::vector<Param*> StudentModel::params() {
  return {&conv1_.weight, &conv1_.bias, &conv2_.weight, &conv2_.bias,
          &conv3_.weight, &conv3_.bias, &classifier_.weight, &classifier_.bias};
}

std::vector<std::uint8_t> encode_student_checkpoint(StudentModel& model, std::uint64_t digest) {
  const auto values = export_parameters(model.params());
  ByteWriter w;
  w.bytes(kStudentMagic);
  w.u16(kStudentVersion);
  w.u64(digest);
  w.u64(values.size());
  for (float v : values) w.f32(v);
  return w.take();
}

void decode_student_checkpoint(const std::vector<std::uint8_t>& bytes, StudentModel& model,
                               std::uint64_t expected_digest) {
  ByteReader r(bytes, "student checkpoint");
  r.expect_magic(kStudentMagic);
  if (r.u16() != kStudentVersion) r.bad("unsupported version");
  if (r.u64() != expected_digest) r.bad("taxonomy digest does not match the run configuration");
  const std::uint64_t count = r.u64();
  const auto params = model.params();
  if (count != parameter_count(params)) r.bad("parameter count does not match the model layout");
  std::vector<float> values(count);
  for (float& v : values) v = r.f32();
  r.expect_end();
  import_parameters(params, values);
}

void save_student(const std::filesystem::path& path, StudentModel& model, std::uint64_t digest) {
  write_file_bytes(path, encode_student_checkpoint(model, digest));
}

void load_student(const std::filesystem::path& path, StudentModel& model, std::uint64_t digest) {
  decode_student_checkpoint(read_file_bytes(path), model, digest);
}

Tensor one_hot_hard(const Tensor& probs, std::span<const ClassId> channel_ids) {
  if (!channel_ids.empty() && channel_ids.size() != static_cast<std::size_t>(probs.channels())) {
    fail(ErrorCode::kShapeMismatch, "channel id list does not match the probability channels");
  }
  Tensor out(probs.channels(), probs.height(), probs.width());
  if (probs.channels() == 0) return out;
  for (std::size_t p = 0; p < probs.plane_size(); ++p) {
    int best = 0;
    for (int c = 1; c < probs.channels(); ++c) {
      const double v = probs.plane(c)[p];
      const double b = probs.plane(best)[p];
      const bool lower_id = channel_ids.empty() ? false : channel_ids[static_cast<std::size_t>(c)] <
                                                              channel_ids[static_cast<std::size_t>(best)];
      if (v > b || (v == b && lower_id)) best = c;
    }
    out.plane(best)[p] = 1.0;
  }
  return out;
}

Tensor combine_supervision(const Tensor& teacher_probs, const Tensor& old_probs,
                           const Taxonomy& taxonomy, int step, double alpha, double beta,
                           bool hard_over_all_classes) {
  if (step < 1) fail(ErrorCode::kStepOutOfRange, "supervision mixing needs an incremental step");
  check_unit(alpha, "alpha");
  check_unit(beta, "beta");
  const auto channels = channel_classes(taxonomy, step);
  const int n_all = static_cast<int>(channels.size());
  const int n_old = static_cast<int>(channel_classes(taxonomy, step - 1).size());
  if (teacher_probs.channels() != n_all || old_probs.channels() != n_old ||
      !teacher_probs.same_grid(old_probs)) {
    fail(ErrorCode::kShapeMismatch, "teacher/old-model probabilities do not match the step layout");
  }
  Tensor hard;
  if (hard_over_all_classes) {
    hard = one_hot_hard(teacher_probs, channels);
  } else {
    const Tensor fresh = one_hot_hard(teacher_probs.slice_channels(n_old, n_all - n_old),
                                      std::span<const ClassId>(channels).subspan(static_cast<std::size_t>(n_old)));
    hard = Tensor(n_all, teacher_probs.height(), teacher_probs.width());
    hard.set_channels(n_old, fresh);
  }
  Tensor q(n_all, teacher_probs.height(), teacher_probs.width());
  for (int c = 0; c < n_all; ++c) {
    const auto t = teacher_probs.plane(c);
    auto dst = q.plane(c);
    if (c >= n_old) {
      const auto h = hard.plane(c);
      for (std::size_t p = 0; p < dst.size(); ++p) dst[p] = alpha * h[p] + (1.0 - alpha) * t[p];
    } else {
      const auto o = old_probs.plane(c);
      for (std::size_t p = 0; p < dst.size(); ++p) dst[p] = beta * o[p] + (1.0 - beta) * t[p];
    }
  }
  return q;
}

double loss_bce_all(const Tensor& student_probs, const Tensor& q, Tensor* grad) {
  return soft_bce(student_probs, q, grad);
}

double total_loss(double l_new, double l_dcl, double l_old, double l_all, double lambda) {
  const double total = l_new + lambda * l_dcl + l_old + l_all;
  if (!std::isfinite(total)) fail(ErrorCode::kNonFinite, "loss components are not finite");
  return total;
}

nlohmann::json metrics_to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch}, {"l_new", m.l_new}, {"l_dcl", m.l_dcl},
          {"l_old", m.l_old}, {"l_all", m.l_all}, {"total", m.total}};
}

std::string metrics_jsonl(std::span<const EpochMetrics> log) {
  std::ostringstream out;
  for (const auto& m : log) out << metrics_to_json(m).dump() << "\n";
  return out.str();
}

BaseResult train_base(std::span<const LabeledSample> data, const Taxonomy& taxonomy, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) fail(ErrorCode::kInvalidArgument, "no base-step images");
  const auto channels = channel_classes(taxonomy, 0);
  Rng init = make_stream(cfg.seed, "init", "base");
  Rng order = make_stream(cfg.seed, "shuffle", "base");
  BaseResult out{StudentModel(cfg.width, static_cast<int>(channels.size()), init),
                 MemoryBank(cfg.bank_capacity, classes_seen(taxonomy, 0)), {}};
  const std::set<ClassId> base(taxonomy.new_classes(0).begin(), taxonomy.new_classes(0).end());
  auto params = out.model.params();

  std::vector<Tensor> inputs;
  std::vector<Tensor> targets;
  std::vector<std::vector<InstanceCrop>> crops;
  for (const auto& s : data) {
    inputs.push_back(image_to_input(s.image, cfg.stride));
    targets.push_back(grid_one_hot(s.labels, channels, inputs.back().height(), inputs.back().width()));
    crops.push_back(extract_instances(s.image, s.labels, base));
  }

  for (int epoch = 0; epoch < cfg.base_epochs; ++epoch) {
    double sum = 0.0;
    int batches = 0;
    for (const auto& batch : epoch_batches(data.size(), cfg.batch, order)) {
      zero_grads(params);
      double batch_loss = 0.0;
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (std::size_t idx : batch) {
        const auto pass = out.model.forward(inputs[idx]);
        const Tensor probs = sigmoid(pass.logits);
        batch_loss += loss_bce_all(probs, targets[idx]) * inv;
        Tensor g = soft_bce_logit_grad(probs, targets[idx]);
        scale(g, inv);
        out.model.backward(pass, g, {});
        for (const auto& crop : crops[idx]) out.bank.insert(crop);
      }
      sgd_step(params, cfg.sgd());
      sum += batch_loss;
      ++batches;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.l_all = batches ? sum / batches : 0.0;
    m.total = total_loss(0.0, 0.0, 0.0, m.l_all, cfg.lambda_dcl);
    out.log.push_back(m);
  }
  return out;
}

StepResult run_incremental_step(const StudentModel& previous, std::span<const StepSample> data,
                                const MemoryBank& bank, const Taxonomy& taxonomy, int step,
                                const TrainConfig& cfg) {
  cfg.validate();
  if (step < 1 || step >= taxonomy.num_steps()) fail(ErrorCode::kStepOutOfRange, "bad incremental step");
  if (data.empty()) fail(ErrorCode::kMissingPseudoLabels, "no step images");
  const auto channels = channel_classes(taxonomy, step);
  const auto old_channels = channel_classes(taxonomy, step - 1);
  const auto& fresh = taxonomy.new_classes(step);
  const int n_all = static_cast<int>(channels.size());
  const int n_old = static_cast<int>(old_channels.size());
  if (previous.outputs() != n_old) fail(ErrorCode::kShapeMismatch, "previous model does not cover the old classes");
  for (const auto& s : data) {
    if (s.pseudo.height != s.image.height || s.pseudo.width != s.image.width) {
      fail(ErrorCode::kMissingPseudoLabels, "pseudo labels of " + s.image.id + " do not match the image");
    }
  }

  const std::string key = std::to_string(step);
  Rng init = make_stream(cfg.seed, "init", key);
  Rng order = make_stream(cfg.seed, "shuffle", key);
  Rng paste_rng = make_stream(cfg.seed, "paste", key);
  Rng sampling = make_stream(cfg.seed, "sampling", key);

  StepResult out;
  out.student = previous;
  out.student.extend_outputs(n_all - n_old, init, cfg.new_row_init);
  TeacherConfig tcfg;
  tcfg.in_channels = out.student.feature_channels();
  tcfg.branch_channels = cfg.teacher_branch_channels;
  tcfg.outputs = n_all;
  out.teacher = TeacherHead(tcfg, init);
  auto student_params = out.student.params();
  auto teacher_params = out.teacher.params();
  const int dim = out.teacher.embedding_dim();

  struct Item {
    Tensor input;
    StudentModel::Pass student;
    TeacherHead::Pass teacher;
    Tensor teacher_probs;
    Tensor old_probs;
    PseudoLabelSet grid_pseudo;
    Tensor dteacher_logits;
    Tensor dembeddings;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool joint = epoch >= cfg.warmup_epochs;
    EpochMetrics m;
    m.epoch = epoch;
    int batches = 0;
    for (const auto& batch : epoch_batches(data.size(), cfg.batch, order)) {
      zero_grads(teacher_params);
      zero_grads(student_params);
      const double inv = 1.0 / static_cast<double>(batch.size());
      std::vector<Item> items(batch.size());
      double l_new = 0.0;
      double l_old = 0.0;
      double l_all = 0.0;
      std::vector<PseudoLabelSet> grid_sets;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const StepSample& sample = data[batch[b]];
        Item& it = items[b];
        PasteResult pasted = copy_paste(sample.image, bank, cfg.paste_prob, paste_rng);
        it.input = image_to_input(pasted.image, cfg.stride);
        const int h = it.input.height();
        const int w = it.input.width();
        it.student = out.student.forward(it.input);
        it.teacher = out.teacher.forward(it.student.features);
        it.teacher_probs = sigmoid(it.teacher.logits);
        it.old_probs = sigmoid(previous.logits(it.input));

        std::optional<PasteMask> grid_paste;
        if (pasted.paste) grid_paste = PasteMask{pasted.paste->class_id, downsample_nearest(pasted.paste->mask, h, w)};
        it.grid_pseudo.image_id = sample.image.id;
        it.grid_pseudo.height = h;
        it.grid_pseudo.width = w;
        for (const auto& [id, mask] : sample.pseudo.masks) {
          Mask g = downsample_nearest(mask, h, w);
          // pasted old-class pixels no longer show the new object
          if (grid_paste) {
            for (std::size_t p = 0; p < g.bits.size(); ++p) {
              if (grid_paste->mask.bits[p]) g.bits[p] = 0;
            }
          }
          it.grid_pseudo.masks.emplace(id, std::move(g));
        }
        grid_sets.push_back(it.grid_pseudo);

        const Tensor probs_old = it.teacher_probs.slice_channels(0, n_old);
        const Tensor probs_new = it.teacher_probs.slice_channels(n_old, n_all - n_old);
        const Tensor new_targets = pseudo_targets(it.grid_pseudo, fresh, h, w);
        const Tensor old_targets = build_old_targets(it.old_probs, old_channels, grid_paste);
        l_new += soft_bce(probs_new, new_targets) * inv;
        l_old += soft_bce(probs_old, old_targets) * inv;
        it.dteacher_logits = Tensor(n_all, h, w);
        Tensor g_old = soft_bce_logit_grad(probs_old, old_targets);
        Tensor g_new = soft_bce_logit_grad(probs_new, new_targets);
        scale(g_old, inv);
        scale(g_new, inv);
        it.dteacher_logits.set_channels(0, g_old);
        it.dteacher_logits.set_channels(n_old, g_new);
      }

      double l_dcl = 0.0;
      const GridShape grid{items.front().input.height(), items.front().input.width()};
      ContrastBatch contrast;
      bool have_contrast = true;
      try {
        contrast = sample_contrast_points(grid_sets, grid, cfg.per_class_points, sampling);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNoForeground) throw;
        have_contrast = false;
      }
      if (have_contrast) {
        for (auto& a : contrast.anchors) {
          const auto& emb = items[static_cast<std::size_t>(a.item)].teacher.embeddings;
          a.embedding.resize(static_cast<std::size_t>(dim));
          for (int c = 0; c < dim; ++c) a.embedding[static_cast<std::size_t>(c)] = emb.plane(c)[static_cast<std::size_t>(a.pixel)];
        }
        std::vector<std::vector<double>> grads;
        l_dcl = loss_dcl(contrast, cfg.tau, &grads);
        if (cfg.lambda_dcl > 0.0) {
          for (std::size_t k = 0; k < contrast.anchors.size(); ++k) {
            const auto& a = contrast.anchors[k];
            Item& it = items[static_cast<std::size_t>(a.item)];
            if (it.dembeddings.empty()) it.dembeddings = Tensor(dim, grid.height, grid.width);
            for (int c = 0; c < dim; ++c) {
              it.dembeddings.plane(c)[static_cast<std::size_t>(a.pixel)] += cfg.lambda_dcl * grads[k][static_cast<std::size_t>(c)];
            }
          }
        }
      }

      for (Item& it : items) {
        Tensor dfeatures = out.teacher.backward(it.student.features, it.teacher, it.dteacher_logits,
                                                it.dembeddings, joint);
        if (!joint) continue;
        const Tensor q = combine_supervision(it.teacher_probs, it.old_probs, taxonomy, step, cfg.alpha,
                                             cfg.beta, cfg.hard_over_all_classes);
        const Tensor student_probs = sigmoid(it.student.logits);
        l_all += loss_bce_all(student_probs, q) * inv;
        Tensor g = soft_bce_logit_grad(student_probs, q);
        scale(g, inv);
        out.student.backward(it.student, g, dfeatures);
      }
      sgd_step(teacher_params, cfg.sgd());
      if (joint) sgd_step(student_params, cfg.sgd());

      m.l_new += l_new;
      m.l_dcl += l_dcl;
      m.l_old += l_old;
      m.l_all += l_all;
      ++batches;
    }
    if (batches) {
      m.l_new /= batches;
      m.l_dcl /= batches;
      m.l_old /= batches;
      m.l_all /= batches;
    }
    m.total = total_loss(m.l_new, m.l_dcl, m.l_old, m.l_all, cfg.lambda_dcl);
    out.log.push_back(m);
  }
  return out;
}

LabelMap predict(const StudentModel& model, const Image& image, std::span<const ClassId> channels, int stride) {
  if (channels.size() != static_cast<std::size_t>(model.outputs())) {
    fail(ErrorCode::kShapeMismatch, "channel list does not match the model outputs");
  }
  const Tensor logits = upsample_bilinear(model.logits(image_to_input(image, stride)), image.height, image.width);
  LabelMap out(image.height, image.width);
  for (std::size_t p = 0; p < logits.plane_size(); ++p) {
    int best = 0;
    for (int c = 1; c < logits.channels(); ++c) {
      if (logits.plane(c)[p] > logits.plane(best)[p]) best = c;
    }
    out.ids[p] = channels[static_cast<std::size_t>(best)];
  }
  return out;
}

}  // namespace fmwiss
