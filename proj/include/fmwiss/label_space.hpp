#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "fmwiss/image.hpp"

namespace fmwiss {

enum class SupervisionKind { kPixel, kImageLevel };
enum class Protocol { kDisjoint, kOverlap };

struct StepSpec {
  int step_index = 0;
  std::vector<ClassId> new_classes;  // ascending
  SupervisionKind supervision = SupervisionKind::kPixel;
};

struct Taxonomy {
  ClassId background_id = kBackgroundId;
  std::vector<StepSpec> steps;
  std::map<ClassId, std::string> class_names;

  int num_steps() const noexcept { return static_cast<int>(steps.size()); }
  const std::vector<ClassId>& new_classes(int step) const;
  std::string name_of(ClassId id) const;
};

Taxonomy build_taxonomy(const std::vector<ClassId>& base_classes,
                        const std::vector<std::vector<ClassId>>& increments,
                        std::map<ClassId, std::string> class_names = {});

std::set<ClassId> classes_seen(const Taxonomy& taxonomy, int step);

// Output-channel order of a model at `step`: background first, then each
// step's classes in step order (ascending id within a step). Channels of
// step t-1 are a prefix of the channels of step t.
std::vector<ClassId> channel_classes(const Taxonomy& taxonomy, int step);

std::uint64_t taxonomy_digest(const Taxonomy& taxonomy);

struct DatasetEntry {
  std::string image_id;
  std::set<ClassId> present_classes;  // foreground only
  bool has_pixel_gt = false;
};

struct DatasetIndex {
  std::vector<DatasetEntry> entries;
};

std::vector<std::string> split_dataset(const DatasetIndex& index, const Taxonomy& taxonomy,
                                       int step, Protocol protocol);

Protocol parse_protocol(const std::string& name);

// {"entries":[{"id":"...","classes":[...],"pixel_gt":true}]}
nlohmann::json index_to_json(const DatasetIndex& index);
DatasetIndex index_from_json(const nlohmann::json& j);
DatasetIndex load_index(const std::filesystem::path& path);
void save_index(const std::filesystem::path& path, const DatasetIndex& index);

// {"base":[...],"increments":[[...]],"names":{"1":"..."}}
Taxonomy taxonomy_from_json(const nlohmann::json& j);
nlohmann::json taxonomy_to_json(const Taxonomy& taxonomy);

}  // namespace fmwiss
