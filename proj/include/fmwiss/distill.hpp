#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fmwiss/coseg.hpp"
#include "fmwiss/label_space.hpp"
#include "fmwiss/memory_paste.hpp"
#include "fmwiss/nn.hpp"
#include "fmwiss/teacher.hpp"

namespace fmwiss {

struct TrainConfig {
  double lambda_dcl = 0.1;
  double alpha = 0.5;
  double beta = 0.9;
  double tau = 0.1;
  double k_percent = 70.0;
  double k_fg_percent = 70.0;
  int n_seeds = 9;
  int per_class_points = 10;
  std::size_t bank_capacity = 50;
  double paste_prob = 0.5;
  int warmup_epochs = 5;
  int epochs = 40;
  int base_epochs = 40;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch = 24;
  std::uint64_t seed = 0;

  // Reference network shape.
  int stride = 4;
  int width = 16;
  int teacher_branch_channels = 8;
  double new_row_init = 0.01;
  // Argmax for |.|_hard over every teacher channel (false: new classes only).
  bool hard_over_all_classes = true;

  void validate() const;
  SgdConfig sgd() const { return {lr, momentum, weight_decay}; }
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
// Unknown keys are rejected; missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// Desk-scale reference segmentation net: three 3x3 conv blocks (the last
// dilated by 2) and a 1x1 classifier. Works at 1/stride of the image.
class StudentModel {
 public:
  StudentModel() = default;
  StudentModel(int width, int outputs, Rng& init);

  struct Pass {
    Tensor input;
    Tensor pre1, act1, pre2, act2, pre3;
    Tensor features;  // ReLU(pre3)
    Tensor logits;
  };

  Pass forward(const Tensor& input) const;
  Tensor logits(const Tensor& input) const { return forward(input).logits; }
  // Either gradient may be empty.
  void backward(const Pass& pass, const Tensor& dlogits, const Tensor& dfeatures);

  void extend_outputs(int rows, Rng& init, double scale);
  std::vector<Param*> params();
  int outputs() const noexcept { return classifier_.out_channels(); }
  int feature_channels() const noexcept { return classifier_.in_channels(); }

 private:
  Conv2d conv1_, conv2_, conv3_, classifier_;
};

// "FMWS" | version u16 | taxonomy digest u64 | parameter count u64 | float32 LE.
std::vector<std::uint8_t> encode_student_checkpoint(StudentModel& model, std::uint64_t digest);
void decode_student_checkpoint(const std::vector<std::uint8_t>& bytes, StudentModel& model,
                               std::uint64_t expected_digest);
void save_student(const std::filesystem::path& path, StudentModel& model, std::uint64_t digest);
void load_student(const std::filesystem::path& path, StudentModel& model, std::uint64_t digest);

// Per pixel a single 1 at the argmax; ties go to the lowest class id in
// `channel_ids` (channel order when empty).
Tensor one_hot_hard(const Tensor& probs, std::span<const ClassId> channel_ids = {});

// Soft student targets: alpha-mixed hard/soft teacher for new classes,
// beta-mixed old model/teacher for background and old classes.
Tensor combine_supervision(const Tensor& teacher_probs, const Tensor& old_probs,
                           const Taxonomy& taxonomy, int step, double alpha, double beta,
                           bool hard_over_all_classes = true);

double loss_bce_all(const Tensor& student_probs, const Tensor& q, Tensor* grad = nullptr);

double total_loss(double l_new, double l_dcl, double l_old, double l_all, double lambda);

struct EpochMetrics {
  int epoch = 0;
  double l_new = 0.0;
  double l_dcl = 0.0;
  double l_old = 0.0;
  double l_all = 0.0;
  double total = 0.0;
};
nlohmann::json metrics_to_json(const EpochMetrics& m);
std::string metrics_jsonl(std::span<const EpochMetrics> log);

struct LabeledSample {
  Image image;
  LabelMap labels;
};

struct StepSample {
  Image image;
  PseudoLabelSet pseudo;
};

struct BaseResult {
  StudentModel model;
  MemoryBank bank;
  std::vector<EpochMetrics> log;
};

// Pixel-supervised base step; also fills the memory bank with the
// connected components of the ground truth seen during training.
BaseResult train_base(std::span<const LabeledSample> data, const Taxonomy& taxonomy,
                      const TrainConfig& cfg);

struct StepResult {
  StudentModel student;
  TeacherHead teacher;
  std::vector<EpochMetrics> log;
};

StepResult run_incremental_step(const StudentModel& previous, std::span<const StepSample> data,
                                const MemoryBank& bank, const Taxonomy& taxonomy, int step,
                                const TrainConfig& cfg);

// Per-pixel argmax of bilinearly upsampled logits, as class ids.
LabelMap predict(const StudentModel& model, const Image& image, std::span<const ClassId> channels,
                 int stride);

}  // namespace fmwiss
