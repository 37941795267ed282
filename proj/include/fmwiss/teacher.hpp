#pragma once

#include <filesystem>
#include <vector>

#include "fmwiss/nn.hpp"
#include "fmwiss/tensor.hpp"

namespace fmwiss {

struct TeacherConfig {
  int in_channels = 16;
  int branch_channels = 8;
  std::vector<int> rates{1, 2, 4, 8};
  int outputs = 1;  // background + every class seen so far
};

// ASPP-shaped head: parallel dilated 3x3 branches, concatenated, ReLU, then
// a 1x1 merge to per-class logits. The concatenated branch output (before
// the ReLU) is L2-normalised per pixel to form the contrast embedding.
class TeacherHead {
 public:
  TeacherHead() = default;
  TeacherHead(const TeacherConfig& cfg, Rng& init);

  struct Pass {
    Tensor concat;      // branch outputs, pre-activation
    Tensor activated;   // ReLU(concat)
    std::vector<double> norms;
    Tensor logits;
    Tensor embeddings;  // unit-norm per pixel
  };

  Pass forward(const Tensor& features) const;
  // Accumulates parameter gradients. `dembeddings` may be empty.
  Tensor backward(const Tensor& features, const Pass& pass, const Tensor& dlogits,
                  const Tensor& dembeddings, bool want_dfeatures);

  std::vector<Param*> params();
  const TeacherConfig& config() const noexcept { return cfg_; }
  int embedding_dim() const noexcept { return cfg_.branch_channels * static_cast<int>(cfg_.rates.size()); }

 private:
  TeacherConfig cfg_;
  std::vector<Conv2d> branches_;
  Conv2d merge_;
};

// "FMWT" | version u16 | parameter count u64 | float32 LE parameters in
// params() order (branches by rate, weight then bias; merge weight, bias).
std::vector<std::uint8_t> encode_teacher_checkpoint(TeacherHead& head);
void decode_teacher_checkpoint(const std::vector<std::uint8_t>& bytes, TeacherHead& head);
void save_teacher(const std::filesystem::path& path, TeacherHead& head);
void load_teacher(const std::filesystem::path& path, TeacherHead& head);

}  // namespace fmwiss
