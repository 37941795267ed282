#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fmwiss/coseg.hpp"
#include "fmwiss/distill.hpp"
#include "fmwiss/error.hpp"
#include "fmwiss/label_space.hpp"
#include "fmwiss/synthetic.hpp"

namespace fmwiss {

// Run configuration, read from JSON:
//
//   {
//     "seed": 0,
//     "taxonomy": {"base": [1, 2], "increments": [[3]], "names": {"1": "sign"}},
//     "dataset": {"root": "data", "index": "data/index.json",
//                 "val_index": "data/val.json", "protocol": "overlap"},
//     "backends": {"vlp": "synthetic", "ssl": "synthetic"},
//     "coseg": {"fusion": "union", "templates": "prompts.txt"},
//     "train": { ...TrainConfig keys... },
//     "synthetic": {"height": 64, "width": 64, "base_images": 48, ...},
//     "output": "runs/demo"
//   }
//
// "index" and "val_index" default to index.json and val.json under the
// dataset root. Relative paths resolve against the working directory. The
// top-level seed is the only source of randomness and overrides train.seed.
struct RunConfig {
  std::uint64_t seed = 0;
  Taxonomy taxonomy;
  std::filesystem::path dataset_root;
  std::filesystem::path train_index;
  std::filesystem::path val_index;
  Protocol protocol = Protocol::kOverlap;
  std::string vlp_backend = "synthetic";
  std::string ssl_backend = "synthetic";
  FusionOp fusion = FusionOp::kUnion;
  std::optional<std::filesystem::path> templates;
  TrainConfig train;
  SyntheticSpec synthetic;
  SyntheticCounts synthetic_counts;
  std::filesystem::path output;
};

// Sets `dotted` (e.g. "train.lr") inside `config`, creating objects on the
// way. The value is parsed as JSON when possible and kept as a string
// otherwise.
void apply_override(nlohmann::json& config, const std::string& dotted, const std::string& value);

// Parses and checks types and ranges; nothing touches the filesystem.
RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json load_config_file(const std::filesystem::path& path);

// Filesystem checks for a command. `need_dataset` is false only when the
// command creates the dataset itself.
void validate_paths(const RunConfig& cfg, bool need_dataset, bool need_val);

// Exit status for a failure class: 1 validation, 2 backend/IO, 3 prerequisite.
int exit_code_for(ErrorCode code);

// Artifact locations under the output directory.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path mask_dir(int step) const;
  std::filesystem::path manifest(int step) const;
  std::filesystem::path student(int step) const;
  std::filesystem::path teacher(int step) const;
  std::filesystem::path metrics(int step) const;
  std::filesystem::path bank() const;
  std::filesystem::path eval_json(int step) const;
  std::filesystem::path eval_table(int step) const;
};

struct CosegSummary {
  int written = 0;
  int skipped = 0;
};

// Each command returns after writing its artifacts; failures throw Error.
void cmd_synth_data(const RunConfig& cfg);
CosegSummary cmd_coseg(const RunConfig& cfg, int step, bool force);
void cmd_train_base(const RunConfig& cfg);
void cmd_train_step(const RunConfig& cfg, int step);
// Returns the JSON report that was written.
nlohmann::json cmd_eval(const RunConfig& cfg, int step,
                        const std::optional<std::filesystem::path>& checkpoint);
nlohmann::json cmd_bank_inspect(const RunConfig& cfg,
                                const std::optional<std::filesystem::path>& bank);

}  // namespace fmwiss
