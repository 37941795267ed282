#include "fmwiss/cli.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "fmwiss/backends.hpp"
#include "fmwiss/benchmark.hpp"
#include "fmwiss/eval_protocol.hpp"
#include "fmwiss/plane_format.hpp"
#include "fmwiss/rng.hpp"

namespace fmwiss {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string> kTopKeys{"seed", "taxonomy", "dataset", "backends", "coseg",
                                     "train", "synthetic", "output"};

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) fail(ErrorCode::kConfigError, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) fail(ErrorCode::kConfigError, "unknown key '" + where + "." + key + "'");
  }
}

template <typename T>
T get_as(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::kConfigError, "bad or missing value for '" + where + "." + key + "'");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

fs::path image_path(const RunConfig& cfg, const std::string& id) {
  return cfg.dataset_root / "images" / (id + ".ppm");
}

fs::path label_path(const RunConfig& cfg, const std::string& id) {
  return cfg.dataset_root / "labels" / (id + ".pgm");
}

void require(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::kMissingPrerequisite, path.string());
}

void check_step(const RunConfig& cfg, int step, int min_step) {
  if (step < min_step || step >= cfg.taxonomy.num_steps()) {
    fail(ErrorCode::kStepOutOfRange, "step " + std::to_string(step) + " is outside [" +
                                         std::to_string(min_step) + ", " +
                                         std::to_string(cfg.taxonomy.num_steps() - 1) + "]");
  }
}

StudentModel blank_student(const RunConfig& cfg, int step) {
  Rng init = make_stream(cfg.seed, "init", "load");
  const int outputs = static_cast<int>(channel_classes(cfg.taxonomy, step).size());
  return StudentModel(cfg.train.width, outputs, init);
}

std::vector<std::string> read_manifest_ids(const fs::path& manifest) {
  json j;
  try {
    j = json::parse(read_text(manifest));
    std::vector<std::string> ids;
    for (const auto& e : j.at("entries")) ids.push_back(e.at("id").get<std::string>());
    return ids;
  } catch (const json::exception& ex) {
    fail(ErrorCode::kFormatError, manifest.string() + ": " + ex.what());
  }
}

}  // namespace

void apply_override(json& config, const std::string& dotted, const std::string& value) {
  if (dotted.empty() || dotted.front() == '.' || dotted.back() == '.') {
    fail(ErrorCode::kConfigError, "bad override key '" + dotted + "'");
  }
  json* node = &config;
  std::size_t start = 0;
  for (;;) {
    const auto dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot - start);
    if (part.empty()) fail(ErrorCode::kConfigError, "bad override key '" + dotted + "'");
    if (!node->is_object()) {
      if (!node->is_null()) fail(ErrorCode::kConfigError, "override '" + dotted + "' descends into a non-object");
      *node = json::object();
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json parsed = json::parse(value, nullptr, false);
  *node = parsed.is_discarded() ? json(value) : std::move(parsed);
}

json load_config_file(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::kConfigError, "config file not found: " + path.string());
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& ex) {
    fail(ErrorCode::kConfigError, path.string() + ": " + ex.what());
  }
}

RunConfig parse_run_config(const json& j) {
  check_keys(j, kTopKeys, "config");
  RunConfig cfg;
  if (!j.contains("seed")) fail(ErrorCode::kConfigError, "config.seed is required");
  cfg.seed = get_as<std::uint64_t>(j, "seed", "config");
  if (!j.contains("taxonomy")) fail(ErrorCode::kConfigError, "config.taxonomy is required");
  cfg.taxonomy = taxonomy_from_json(j.at("taxonomy"));

  if (!j.contains("dataset")) fail(ErrorCode::kConfigError, "config.dataset is required");
  const json& ds = j.at("dataset");
  check_keys(ds, {"root", "index", "val_index", "protocol"}, "dataset");
  cfg.dataset_root = get_as<std::string>(ds, "root", "dataset");
  cfg.train_index = ds.contains("index") ? fs::path(get_as<std::string>(ds, "index", "dataset"))
                                         : cfg.dataset_root / "index.json";
  cfg.val_index = ds.contains("val_index") ? fs::path(get_as<std::string>(ds, "val_index", "dataset"))
                                           : cfg.dataset_root / "val.json";
  if (ds.contains("protocol")) cfg.protocol = parse_protocol(get_as<std::string>(ds, "protocol", "dataset"));

  if (j.contains("backends")) {
    const json& b = j.at("backends");
    check_keys(b, {"vlp", "ssl"}, "backends");
    if (b.contains("vlp")) cfg.vlp_backend = get_as<std::string>(b, "vlp", "backends");
    if (b.contains("ssl")) cfg.ssl_backend = get_as<std::string>(b, "ssl", "backends");
  }
  for (const auto& spec : {cfg.vlp_backend, cfg.ssl_backend}) {
    if (spec != "synthetic" && spec.rfind("dir:", 0) != 0 && spec.rfind("http:", 0) != 0) {
      fail(ErrorCode::kConfigError, "unknown backend spec '" + spec + "'");
    }
  }

  if (j.contains("coseg")) {
    const json& c = j.at("coseg");
    check_keys(c, {"fusion", "templates"}, "coseg");
    if (c.contains("fusion")) cfg.fusion = parse_fusion(get_as<std::string>(c, "fusion", "coseg"));
    if (c.contains("templates") && !c.at("templates").is_null()) {
      cfg.templates = fs::path(get_as<std::string>(c, "templates", "coseg"));
    }
  }

  if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
  cfg.train.seed = cfg.seed;
  cfg.train.validate();

  if (j.contains("synthetic")) {
    const json& s = j.at("synthetic");
    check_keys(s, {"height", "width", "min_size", "max_size", "head_fraction", "clutter",
                   "base_images", "step_images", "val_images", "old_in_step"},
               "synthetic");
    SyntheticSpec& sp = cfg.synthetic;
    SyntheticCounts& sc = cfg.synthetic_counts;
    sp.height = s.value("height", sp.height);
    sp.width = s.value("width", sp.width);
    sp.min_size = s.value("min_size", sp.min_size);
    sp.max_size = s.value("max_size", sp.max_size);
    sp.head_fraction = s.value("head_fraction", sp.head_fraction);
    sp.clutter = s.value("clutter", sp.clutter);
    sc.base_images = s.value("base_images", sc.base_images);
    sc.step_images = s.value("step_images", sc.step_images);
    sc.val_images = s.value("val_images", sc.val_images);
    sc.old_in_step = s.value("old_in_step", sc.old_in_step);
    if (sp.height < 1 || sp.width < 1 || sp.min_size < 1 || sp.max_size < sp.min_size ||
        sp.clutter < 0 || sc.base_images < 0 || sc.step_images < 0 || sc.val_images < 0 ||
        !(sc.old_in_step >= 0.0 && sc.old_in_step <= 1.0) ||
        !(sp.head_fraction > 0.0 && sp.head_fraction < 1.0)) {
      fail(ErrorCode::kConfigError, "synthetic settings out of range");
    }
  }

  if (!j.contains("output")) fail(ErrorCode::kConfigError, "config.output is required");
  cfg.output = get_as<std::string>(j, "output", "config");
  if (cfg.output.empty()) fail(ErrorCode::kConfigError, "config.output is empty");
  return cfg;
}

void validate_paths(const RunConfig& cfg, bool need_dataset, bool need_val) {
  auto must_exist = [](const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) fail(ErrorCode::kConfigError, what + " does not exist: " + p.string());
  };
  if (need_dataset) {
    must_exist(cfg.dataset_root, "dataset root");
    must_exist(cfg.train_index, "dataset index");
  }
  if (need_val) must_exist(cfg.val_index, "validation index");
  if (cfg.templates) must_exist(*cfg.templates, "prompt template file");
  validate_backend_spec(cfg.vlp_backend);
  validate_backend_spec(cfg.ssl_backend);
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingPrerequisite:
    case ErrorCode::kMissingPseudoLabels:
      return 3;
    case ErrorCode::kBackendFailure:
    case ErrorCode::kIoError:
    case ErrorCode::kFormatError:
      return 2;
    default:
      return 1;
  }
}

fs::path RunLayout::mask_dir(int step) const { return root / "masks" / ("step" + std::to_string(step)); }
fs::path RunLayout::manifest(int step) const { return mask_dir(step) / "manifest.json"; }
fs::path RunLayout::student(int step) const { return root / ("step" + std::to_string(step) + ".fmws"); }
fs::path RunLayout::teacher(int step) const { return root / ("teacher_step" + std::to_string(step) + ".fmwt"); }
fs::path RunLayout::metrics(int step) const { return root / ("metrics_step" + std::to_string(step) + ".jsonl"); }
fs::path RunLayout::bank() const { return root / "bank.fmwb"; }
fs::path RunLayout::eval_json(int step) const { return root / ("eval_step" + std::to_string(step) + ".json"); }
fs::path RunLayout::eval_table(int step) const { return root / ("eval_step" + std::to_string(step) + ".txt"); }

void cmd_synth_data(const RunConfig& cfg) {
  validate_paths(cfg, false, false);
  const SyntheticDataset ds = make_synthetic_dataset(cfg.synthetic, cfg.taxonomy, cfg.synthetic_counts, cfg.seed);
  fs::create_directories(cfg.dataset_root / "images");
  fs::create_directories(cfg.dataset_root / "labels");
  for (const auto* part : {&ds.train, &ds.val}) {
    for (const auto& s : *part) {
      write_ppm(image_path(cfg, s.image.id), s.image);
      write_pgm(label_path(cfg, s.image.id), s.labels);
    }
  }
  if (cfg.train_index.has_parent_path()) fs::create_directories(cfg.train_index.parent_path());
  if (cfg.val_index.has_parent_path()) fs::create_directories(cfg.val_index.parent_path());
  save_index(cfg.train_index, ds.train_index);
  save_index(cfg.val_index, ds.val_index);
}

CosegSummary cmd_coseg(const RunConfig& cfg, int step, bool force) {
  validate_paths(cfg, true, false);
  check_step(cfg, step, 1);
  const DatasetIndex index = load_index(cfg.train_index);
  const RunLayout layout{cfg.output};
  const auto& fresh = cfg.taxonomy.new_classes(step);

  BackendContext ctx;
  ctx.class_names = cfg.taxonomy.class_names;
  ctx.seed = cfg.seed;
  ctx.stride = cfg.train.stride;
  // Synthetic backends derive their scores from the hidden label maps.
  ctx.ground_truth = [&cfg](const std::string& id) { return read_pgm(label_path(cfg, id)); };
  auto vlp = make_vlp_backend(cfg.vlp_backend, ctx);
  auto ssl = make_ssl_backend(cfg.ssl_backend, ctx);

  CosegConfig ccfg;
  ccfg.k_percent = cfg.train.k_percent;
  ccfg.k_fg_percent = cfg.train.k_fg_percent;
  ccfg.num_seeds = cfg.train.n_seeds;
  ccfg.fusion = cfg.fusion;
  if (cfg.templates) ccfg.templates = load_prompt_templates(cfg.templates->string());

  fs::create_directories(layout.mask_dir(step));
  CosegSummary summary;
  json entries = json::array();
  for (const auto& id : split_dataset(index, cfg.taxonomy, step, cfg.protocol)) {
    const auto entry = std::find_if(index.entries.begin(), index.entries.end(),
                                     [&](const DatasetEntry& e) { return e.image_id == id; });
    std::vector<ClassId> labels;
    for (ClassId c : fresh) {
      if (entry->present_classes.count(c)) labels.push_back(c);
    }
    const fs::path file = layout.mask_dir(step) / (id + ".fmwm");
    PseudoLabelSet pls;
    bool reuse = false;
    if (!force && fs::exists(file)) {
      try {
        pls = read_mask_cache(file);
        std::vector<ClassId> cached;
        for (const auto& [c, m] : pls.masks) cached.push_back(c);
        reuse = cached == labels;
      } catch (const Error&) {
        reuse = false;
      }
    }
    if (reuse) {
      ++summary.skipped;
    } else {
      // One stream per image keeps partial reruns identical to full ones.
      Rng rng = make_stream(cfg.seed, "coseg", std::to_string(step) + "/" + id);
      const Image image = read_ppm(image_path(cfg, id), id);
      pls = generate_pseudo_labels(image, labels, fresh, cfg.taxonomy.class_names, *vlp, *ssl, ccfg, rng);
      write_mask_cache(file, pls);
      ++summary.written;
    }
    entries.push_back({{"id", id},
                       {"file", id + ".fmwm"},
                       {"classes", labels},
                       {"source", pls.source == LabelSource::kFused ? "fused" : "init_only"}});
  }
  const json manifest{{"step", step}, {"fusion", fusion_name(cfg.fusion)}, {"entries", entries}};
  const std::string text = manifest.dump(2) + "\n";
  if (!fs::exists(layout.manifest(step)) || read_text(layout.manifest(step)) != text) {
    write_text(layout.manifest(step), text);
  }
  return summary;
}

void cmd_train_base(const RunConfig& cfg) {
  validate_paths(cfg, true, false);
  const DatasetIndex index = load_index(cfg.train_index);
  const RunLayout layout{cfg.output};
  std::vector<LabeledSample> samples;
  for (const auto& id : split_dataset(index, cfg.taxonomy, 0, cfg.protocol)) {
    const auto entry = std::find_if(index.entries.begin(), index.entries.end(),
                                     [&](const DatasetEntry& e) { return e.image_id == id; });
    if (!entry->has_pixel_gt) continue;
    samples.push_back({read_ppm(image_path(cfg, id), id), read_pgm(label_path(cfg, id))});
  }
  if (samples.empty()) fail(ErrorCode::kConfigError, "no pixel-labelled base images in " + cfg.train_index.string());
  BaseResult result = train_base(samples, cfg.taxonomy, cfg.train);
  fs::create_directories(layout.root);
  save_student(layout.student(0), result.model, taxonomy_digest(cfg.taxonomy));
  save_bank(layout.bank(), result.bank);
  write_text(layout.metrics(0), metrics_jsonl(result.log));
}

void cmd_train_step(const RunConfig& cfg, int step) {
  validate_paths(cfg, true, false);
  check_step(cfg, step, 1);
  const RunLayout layout{cfg.output};
  require(layout.student(step - 1));
  require(layout.bank());
  require(layout.manifest(step));
  const auto ids = read_manifest_ids(layout.manifest(step));
  for (const auto& id : ids) require(layout.mask_dir(step) / (id + ".fmwm"));

  const std::uint64_t digest = taxonomy_digest(cfg.taxonomy);
  StudentModel previous = blank_student(cfg, step - 1);
  load_student(layout.student(step - 1), previous, digest);
  const MemoryBank bank = load_bank(layout.bank(), cfg.train.bank_capacity);

  std::vector<StepSample> samples;
  for (const auto& id : ids) {
    samples.push_back({read_ppm(image_path(cfg, id), id),
                       read_mask_cache(layout.mask_dir(step) / (id + ".fmwm"))});
  }
  StepResult result = run_incremental_step(previous, samples, bank, cfg.taxonomy, step, cfg.train);
  save_student(layout.student(step), result.student, digest);
  save_teacher(layout.teacher(step), result.teacher);
  write_text(layout.metrics(step), metrics_jsonl(result.log));
}

json cmd_eval(const RunConfig& cfg, int step, const std::optional<fs::path>& checkpoint) {
  validate_paths(cfg, false, true);
  check_step(cfg, step, 0);
  const RunLayout layout{cfg.output};
  const fs::path ckpt = checkpoint.value_or(layout.student(step));
  require(ckpt);
  StudentModel model = blank_student(cfg, step);
  load_student(ckpt, model, taxonomy_digest(cfg.taxonomy));

  const DatasetIndex val = load_index(cfg.val_index);
  std::vector<SyntheticSample> samples;
  for (const auto& e : val.entries) {
    if (!e.has_pixel_gt) continue;
    samples.push_back({read_ppm(image_path(cfg, e.image_id), e.image_id),
                       read_pgm(label_path(cfg, e.image_id)), e.present_classes});
  }
  const auto channels = channel_classes(cfg.taxonomy, step);
  const auto seen = classes_seen(cfg.taxonomy, cfg.taxonomy.num_steps() - 1);
  const ConfusionMatrix cm = evaluate_model(model, samples, channels, cfg.train.stride,
                                            std::vector<ClassId>(seen.begin(), seen.end()));
  const ClassGroups groups = step_groups(cfg.taxonomy, step);
  const MiouReport report = miou(cm, groups);
  const json j = report_to_json(report);
  fs::create_directories(layout.root);
  write_text(layout.eval_json(step), j.dump(2) + "\n");
  write_text(layout.eval_table(step), report_table(report, groups, cfg.taxonomy.class_names));
  return j;
}

json cmd_bank_inspect(const RunConfig& cfg, const std::optional<fs::path>& bank_path) {
  const fs::path path = bank_path.value_or(RunLayout{cfg.output}.bank());
  require(path);
  const MemoryBank bank = load_bank(path, cfg.train.bank_capacity);
  json classes = json::array();
  for (const auto& [id, crops] : bank.archives()) {
    json sizes = json::array();
    std::size_t pixels = 0;
    for (const auto& c : crops) {
      sizes.push_back({c.height, c.width});
      pixels += c.mask.popcount();
    }
    classes.push_back({{"id", id},
                       {"name", cfg.taxonomy.name_of(id)},
                       {"crops", crops.size()},
                       {"foreground_pixels", pixels},
                       {"sizes", sizes}});
  }
  return {{"file", path.string()}, {"capacity", bank.capacity()}, {"classes", classes}};
}

}  // namespace fmwiss
