// fmwiss: pseudo labels, incremental training and evaluation from the shell.
//
//   fmwiss synth-data  --config run.json
//   fmwiss coseg       --config run.json --step 1 [--force]
//   fmwiss train-base  --config run.json
//   fmwiss train-step  --config run.json --step 1
//   fmwiss eval        --config run.json --step 1 [--checkpoint path]
//   fmwiss bank-inspect --config run.json [--bank path]
//
// Any config key can be overridden with a dotted flag, e.g. --train.lr 0.05.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fmwiss/cli.hpp"
#include "fmwiss/eval_protocol.hpp"
#include "fmwiss/plane_format.hpp"

namespace {

using fmwiss::ErrorCode;

nlohmann::json build_config(const std::string& path, const std::vector<std::string>& extras) {
  nlohmann::json j = fmwiss::load_config_file(path);
  for (std::size_t k = 0; k < extras.size(); ++k) {
    const std::string& flag = extras[k];
    if (flag.rfind("--", 0) != 0 || flag.size() <= 2) {
      fmwiss::fail(ErrorCode::kConfigError, "unexpected argument '" + flag + "'");
    }
    std::string key = flag.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else if (k + 1 < extras.size()) {
      value = extras[++k];
    } else {
      fmwiss::fail(ErrorCode::kConfigError, "override '" + flag + "' has no value");
    }
    fmwiss::apply_override(j, key, value);
  }
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly incremental segmentation with foundation-model pseudo labels"};
  app.require_subcommand(1);

  std::string config_path;
  int step = 1;
  bool force = false;
  std::string checkpoint;
  std::string bank;

  auto add = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "run configuration (JSON)")->required();
    sub->allow_extras();
    return sub;
  };
  CLI::App* synth = add("synth-data", "render the synthetic toy dataset");
  CLI::App* coseg = add("coseg", "generate and cache pseudo labels for a step");
  coseg->add_option("--step", step, "incremental step (>= 1)");
  coseg->add_flag("--force", force, "regenerate masks that are already cached");
  CLI::App* base = add("train-base", "train the base model and fill the memory bank");
  CLI::App* train = add("train-step", "run one incremental step");
  train->add_option("--step", step, "incremental step (>= 1)");
  CLI::App* eval = add("eval", "evaluate a student checkpoint on the validation index");
  eval->add_option("--step", step, "step the checkpoint belongs to");
  eval->add_option("--checkpoint", checkpoint, "defaults to <output>/step<k>.fmws");
  CLI::App* inspect = add("bank-inspect", "summarise a memory bank file");
  inspect->add_option("--bank", bank, "defaults to <output>/bank.fmwb");

  CLI11_PARSE(app, argc, argv);

  try {
    CLI::App* active = app.get_subcommands().front();
    const fmwiss::RunConfig cfg =
        fmwiss::parse_run_config(build_config(config_path, active->remaining()));

    if (active == synth) {
      fmwiss::cmd_synth_data(cfg);
      std::printf("dataset written to %s\n", cfg.dataset_root.string().c_str());
    } else if (active == coseg) {
      const auto summary = fmwiss::cmd_coseg(cfg, step, force);
      std::printf("masks written: %d, reused: %d\n", summary.written, summary.skipped);
    } else if (active == base) {
      fmwiss::cmd_train_base(cfg);
      std::printf("base checkpoint: %s\n", fmwiss::RunLayout{cfg.output}.student(0).string().c_str());
    } else if (active == train) {
      fmwiss::cmd_train_step(cfg, step);
      std::printf("step checkpoint: %s\n", fmwiss::RunLayout{cfg.output}.student(step).string().c_str());
    } else if (active == eval) {
      std::optional<std::filesystem::path> ckpt;
      if (!checkpoint.empty()) ckpt = checkpoint;
      fmwiss::cmd_eval(cfg, step, ckpt);
      const auto table = fmwiss::read_file_bytes(fmwiss::RunLayout{cfg.output}.eval_table(step));
      std::fwrite(table.data(), 1, table.size(), stdout);
    } else if (active == inspect) {
      std::optional<std::filesystem::path> path;
      if (!bank.empty()) path = bank;
      std::cout << fmwiss::cmd_bank_inspect(cfg, path).dump(2) << "\n";
    }
  } catch (const fmwiss::Error& ex) {
    std::fprintf(stderr, "fmwiss: %s\n", ex.what());
    return fmwiss::exit_code_for(ex.code());
  } catch (const std::filesystem::filesystem_error& ex) {
    std::fprintf(stderr, "fmwiss: IoError: %s\n", ex.what());
    return 2;
  }
  return 0;
}
