#include "fmwiss/label_space.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "fmwiss/error.hpp"
#include "fmwiss/rng.hpp"

namespace fmwiss {

const std::vector<ClassId>& Taxonomy::new_classes(int step) const {
  if (step < 0 || step >= num_steps()) {
    fail(ErrorCode::kStepOutOfRange, "step " + std::to_string(step) + " of " +
                                         std::to_string(num_steps()));
  }
  return steps[static_cast<std::size_t>(step)].new_classes;
}

std::string Taxonomy::name_of(ClassId id) const {
  auto it = class_names.find(id);
  return it == class_names.end() ? "class " + std::to_string(id) : it->second;
}

Taxonomy build_taxonomy(const std::vector<ClassId>& base_classes,
                        const std::vector<std::vector<ClassId>>& increments,
                        std::map<ClassId, std::string> class_names) {
  Taxonomy taxonomy;
  taxonomy.class_names = std::move(class_names);
  std::set<ClassId> seen;
  auto add_step = [&](const std::vector<ClassId>& classes, int index) {
    if (classes.empty()) fail(ErrorCode::kEmptyStep, "step " + std::to_string(index) + " is empty");
    StepSpec spec;
    spec.step_index = index;
    spec.supervision = index == 0 ? SupervisionKind::kPixel : SupervisionKind::kImageLevel;
    for (ClassId id : classes) {
      if (id == kBackgroundId) {
        fail(ErrorCode::kInvalidArgument, "class id 0 is reserved for background");
      }
      if (!seen.insert(id).second) {
        fail(ErrorCode::kDuplicateClass, "class " + std::to_string(id) + " repeats");
      }
      spec.new_classes.push_back(id);
    }
    std::sort(spec.new_classes.begin(), spec.new_classes.end());
    taxonomy.steps.push_back(std::move(spec));
  };
  add_step(base_classes, 0);
  for (std::size_t k = 0; k < increments.size(); ++k) add_step(increments[k], static_cast<int>(k + 1));
  return taxonomy;
}

std::set<ClassId> classes_seen(const Taxonomy& taxonomy, int step) {
  if (step < 0 || step >= taxonomy.num_steps()) {
    fail(ErrorCode::kStepOutOfRange, "step " + std::to_string(step) + " of " +
                                         std::to_string(taxonomy.num_steps()));
  }
  std::set<ClassId> out;
  for (int s = 0; s <= step; ++s) {
    const auto& c = taxonomy.new_classes(s);
    out.insert(c.begin(), c.end());
  }
  return out;
}

std::vector<ClassId> channel_classes(const Taxonomy& taxonomy, int step) {
  if (step < 0 || step >= taxonomy.num_steps()) {
    fail(ErrorCode::kStepOutOfRange, "step " + std::to_string(step));
  }
  std::vector<ClassId> out{taxonomy.background_id};
  for (int s = 0; s <= step; ++s) {
    const auto& c = taxonomy.new_classes(s);
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

std::uint64_t taxonomy_digest(const Taxonomy& taxonomy) {
  return fnv1a64(taxonomy_to_json(taxonomy).dump());
}

std::vector<std::string> split_dataset(const DatasetIndex& index, const Taxonomy& taxonomy,
                                       int step, Protocol protocol) {
  const auto& fresh = taxonomy.new_classes(step);
  const std::set<ClassId> seen = classes_seen(taxonomy, step);
  std::vector<std::string> out;
  for (const auto& e : index.entries) {
    const bool has_new = std::any_of(fresh.begin(), fresh.end(), [&](ClassId c) {
      return e.present_classes.count(c) > 0;
    });
    if (!has_new) continue;
    if (protocol == Protocol::kDisjoint &&
        !std::includes(seen.begin(), seen.end(), e.present_classes.begin(),
                       e.present_classes.end())) {
      continue;
    }
    out.push_back(e.image_id);
  }
  return out;
}

Protocol parse_protocol(const std::string& name) {
  if (name == "disjoint") return Protocol::kDisjoint;
  if (name == "overlap") return Protocol::kOverlap;
  fail(ErrorCode::kConfigError, "unknown protocol '" + name + "'");
}

nlohmann::json index_to_json(const DatasetIndex& index) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : index.entries) {
    entries.push_back({{"id", e.image_id},
                       {"classes", std::vector<ClassId>(e.present_classes.begin(),
                                                        e.present_classes.end())},
                       {"pixel_gt", e.has_pixel_gt}});
  }
  return {{"entries", entries}};
}

DatasetIndex index_from_json(const nlohmann::json& j) {
  DatasetIndex index;
  try {
    for (const auto& e : j.at("entries")) {
      DatasetEntry entry;
      entry.image_id = e.at("id").get<std::string>();
      for (const auto& c : e.at("classes")) entry.present_classes.insert(c.get<ClassId>());
      entry.has_pixel_gt = e.value("pixel_gt", false);
      if (entry.present_classes.empty()) {
        fail(ErrorCode::kFormatError, "entry '" + entry.image_id + "' lists no classes");
      }
      if (entry.present_classes.count(kBackgroundId) > 0) {
        fail(ErrorCode::kFormatError, "entry '" + entry.image_id + "' lists background");
      }
      index.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kFormatError, std::string("dataset index: ") + ex.what());
  }
  return index;
}

DatasetIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kFormatError, path.string() + ": " + ex.what());
  }
  return index_from_json(j);
}

void save_index(const std::filesystem::path& path, const DatasetIndex& index) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  out << index_to_json(index).dump(2) << "\n";
}

Taxonomy taxonomy_from_json(const nlohmann::json& j) {
  try {
    std::map<ClassId, std::string> names;
    if (j.contains("names")) {
      for (const auto& [key, value] : j.at("names").items()) {
        names[static_cast<ClassId>(std::stoi(key))] = value.get<std::string>();
      }
    }
    return build_taxonomy(j.at("base").get<std::vector<ClassId>>(),
                          j.at("increments").get<std::vector<std::vector<ClassId>>>(),
                          std::move(names));
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kConfigError, std::string("taxonomy: ") + ex.what());
  } catch (const std::invalid_argument&) {
    fail(ErrorCode::kConfigError, "taxonomy: class-name keys must be integers");
  }
}

nlohmann::json taxonomy_to_json(const Taxonomy& taxonomy) {
  nlohmann::json j;
  j["base"] = taxonomy.steps.at(0).new_classes;
  nlohmann::json inc = nlohmann::json::array();
  for (std::size_t s = 1; s < taxonomy.steps.size(); ++s) inc.push_back(taxonomy.steps[s].new_classes);
  j["increments"] = inc;
  nlohmann::json names = nlohmann::json::object();
  for (const auto& [id, name] : taxonomy.class_names) names[std::to_string(id)] = name;
  j["names"] = names;
  return j;
}

}  // namespace fmwiss
