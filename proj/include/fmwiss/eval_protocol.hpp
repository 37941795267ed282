#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "fmwiss/image.hpp"

namespace fmwiss {

// Square count matrix over background plus the evaluated classes.
// Rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  // `classes` must not contain the background id; index 0 is background.
  explicit ConfusionMatrix(std::vector<ClassId> classes);

  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<ClassId>& ids() const noexcept { return ids_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * size() + pred]; }
  std::uint64_t& at(std::size_t gt, std::size_t pred) { return counts_[gt * size() + pred]; }
  std::uint64_t total() const;
  // Index of `id`, or nullopt when it is not evaluated.
  std::optional<std::size_t> index_of(ClassId id) const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::vector<ClassId> ids_;
  std::vector<std::uint64_t> counts_;
};

void confusion_update(ConfusionMatrix& cm, const LabelMap& gt, const LabelMap& pred,
                      std::optional<ClassId> ignore_id = std::nullopt);

struct GroupScore {
  std::map<ClassId, double> per_class;  // only classes with a nonzero union
  std::optional<double> mean;           // empty when no class qualifies
};

// Ordered so reports keep the caller's column order.
using ClassGroups = std::vector<std::pair<std::string, std::set<ClassId>>>;
using MiouReport = std::map<std::string, GroupScore>;

// IoU of the class at matrix index `k`, or nullopt for a zero union.
std::optional<double> class_iou(const ConfusionMatrix& cm, std::size_t k);
MiouReport miou(const ConfusionMatrix& cm, const ClassGroups& groups);

nlohmann::json report_to_json(const MiouReport& report);
// Fixed-width table: one column per group, one row per class, then the means.
std::string report_table(const MiouReport& report, const ClassGroups& groups,
                         const std::map<ClassId, std::string>& names = {});

}  // namespace fmwiss
