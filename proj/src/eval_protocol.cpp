#include "fmwiss/eval_protocol.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "fmwiss/error.hpp"

namespace fmwiss {

ConfusionMatrix::ConfusionMatrix(std::vector<ClassId> classes) {
  std::sort(classes.begin(), classes.end());
  if (std::adjacent_find(classes.begin(), classes.end()) != classes.end()) {
    fail(ErrorCode::kDuplicateClass, "confusion matrix classes repeat");
  }
  if (!classes.empty() && classes.front() == kBackgroundId) {
    fail(ErrorCode::kInvalidArgument, "background is implicit in the confusion matrix");
  }
  ids_.push_back(kBackgroundId);
  ids_.insert(ids_.end(), classes.begin(), classes.end());
  counts_.assign(ids_.size() * ids_.size(), 0);
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::optional<std::size_t> ConfusionMatrix::index_of(ClassId id) const {
  auto it = std::lower_bound(ids_.begin() + 1, ids_.end(), id);
  if (id == kBackgroundId) return 0;
  if (it == ids_.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (ids_ != other.ids_) fail(ErrorCode::kShapeMismatch, "confusion matrices cover different classes");
  for (std::size_t k = 0; k < counts_.size(); ++k) counts_[k] += other.counts_[k];
  return *this;
}

void confusion_update(ConfusionMatrix& cm, const LabelMap& gt, const LabelMap& pred,
                      std::optional<ClassId> ignore_id) {
  if (gt.height != pred.height || gt.width != pred.width) {
    fail(ErrorCode::kShapeMismatch, "ground truth and prediction differ in size");
  }
  // Validate first so a bad id leaves the matrix untouched.
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  cells.reserve(gt.ids.size());
  for (std::size_t p = 0; p < gt.ids.size(); ++p) {
    if (ignore_id && (gt.ids[p] == *ignore_id || pred.ids[p] == *ignore_id)) continue;
    const auto g = cm.index_of(gt.ids[p]);
    const auto q = cm.index_of(pred.ids[p]);
    if (!g || !q) {
      fail(ErrorCode::kIdOutOfRange,
           "class id " + std::to_string(g ? pred.ids[p] : gt.ids[p]) + " is not evaluated");
    }
    cells.emplace_back(*g, *q);
  }
  for (const auto& [g, q] : cells) ++cm.at(g, q);
}

std::optional<double> class_iou(const ConfusionMatrix& cm, std::size_t k) {
  std::uint64_t row = 0;
  std::uint64_t col = 0;
  for (std::size_t j = 0; j < cm.size(); ++j) {
    row += cm.at(k, j);
    col += cm.at(j, k);
  }
  const std::uint64_t inter = cm.at(k, k);
  const std::uint64_t uni = row + col - inter;
  if (uni == 0) return std::nullopt;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

MiouReport miou(const ConfusionMatrix& cm, const ClassGroups& groups) {
  MiouReport out;
  for (const auto& [name, members] : groups) {
    GroupScore score;
    double sum = 0.0;
    for (ClassId id : members) {
      const auto k = cm.index_of(id);
      if (!k) continue;
      if (auto iou = class_iou(cm, *k)) {
        score.per_class[id] = *iou;
        sum += *iou;
      }
    }
    if (!score.per_class.empty()) score.mean = sum / static_cast<double>(score.per_class.size());
    out[name] = std::move(score);
  }
  return out;
}

nlohmann::json report_to_json(const MiouReport& report) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, score] : report) {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [id, iou] : score.per_class) per[std::to_string(id)] = iou;
    j[name] = {{"per_class", per}, {"mean", score.mean ? nlohmann::json(*score.mean) : nlohmann::json()}};
  }
  return j;
}

std::string report_table(const MiouReport& report, const ClassGroups& groups,
                         const std::map<ClassId, std::string>& names) {
  constexpr int kLabel = 16;
  constexpr int kCell = 10;
  auto cell = [](std::optional<double> v) {
    char buf[32];
    if (v) std::snprintf(buf, sizeof buf, "%*.1f", kCell, 100.0 * *v);
    else std::snprintf(buf, sizeof buf, "%*s", kCell, "-");
    return std::string(buf);
  };
  auto label = [](const std::string& s) {
    std::string t = s.substr(0, kLabel - 1);
    t.resize(kLabel, ' ');
    return t;
  };
  std::set<ClassId> all;
  for (const auto& [name, members] : groups) all.insert(members.begin(), members.end());

  std::ostringstream out;
  out << label("class");
  for (const auto& [name, members] : groups) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%*s", kCell, name.substr(0, kCell).c_str());
    out << buf;
  }
  out << "\n";
  for (ClassId id : all) {
    auto it = names.find(id);
    out << label(it != names.end() ? std::to_string(id) + " " + it->second : std::to_string(id));
    for (const auto& [name, members] : groups) {
      std::optional<double> v;
      if (members.contains(id)) {
        const auto& per = report.at(name).per_class;
        if (auto f = per.find(id); f != per.end()) v = f->second;
      }
      out << cell(v);
    }
    out << "\n";
  }
  out << label("mIoU");
  for (const auto& [name, members] : groups) out << cell(report.at(name).mean);
  out << "\n";
  return out.str();
}

}  // namespace fmwiss
