// periscope: command-line front end for the periocular depth toolkit.
//
// Subcommands cover the full workflow: synthetic data generation, training,
// evaluation, prediction, scene calibration, pupil measurement, and the
// corneal-refraction table. Every run is reproducible from its inputs and
// seed, logs its fully resolved configuration to stderr, and reports failures
// as a single machine-parsable line.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "periscope/periscope.hpp"

namespace {

using nlohmann::json;

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file: " + path);
  return json::parse(in);
}

// Config-file values fill in flags the user did not pass explicitly; the
// JSON keys are the long flag names without the leading dashes.
template <typename T>
void merge_option(const CLI::App& sub, const json& cfg, const std::string& flag, T& value) {
  if (sub.count(flag) == 0 && cfg.contains(flag.substr(2)))
    value = cfg.at(flag.substr(2)).get<T>();
}

uint64_t resolve_seed(const CLI::App& sub, const json& cfg, uint64_t flag_seed) {
  if (sub.count("--seed") > 0) return flag_seed;
  if (cfg.contains("seed")) return cfg.at("seed").get<uint64_t>();
  if (const char* env = std::getenv("PERISCOPE_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
      throw std::invalid_argument("PERISCOPE_SEED is not an unsigned integer");
    return v;
  }
  return flag_seed;
}

void log_resolved(const std::string& command, const json& resolved) {
  json line = resolved;
  line["command"] = command;
  std::cerr << "resolved_config " << line.dump() << "\n";
}

void emit_json(const json& report, const std::string& out_path) {
  const std::string text = report.dump(2);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write output file: " + out_path);
    out << text << "\n";
  }
  std::cout << text << "\n";
}

periscope::SceneSpec read_scene_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read scene file: " + path);
  const json j = json::parse(in);
  // Accept either a bare scene object or any wrapper with a "scene" key
  // (sample metadata and calibrate output both qualify).
  return periscope::scene_from_json(j.contains("scene") ? j.at("scene") : j);
}

periscope::DepthRange range_from_meta(const json& meta) {
  periscope::DepthRange range;
  range.d_min = meta.value("d_min", range.d_min);
  range.d_max = meta.value("d_max", range.d_max);
  return range;
}

/// Runs one image through the network and returns metric depth.
periscope::DepthMap predict_depth(periscope::DepthNet& net, const periscope::GrayImage& img,
                                  const periscope::DepthRange& range) {
  const int r = net.cfg.input_resolution;
  if (img.width != r || img.height != r)
    throw std::runtime_error("image is " + std::to_string(img.width) + "x" +
                             std::to_string(img.height) + " but the checkpoint expects " +
                             std::to_string(r) + "x" + std::to_string(r));
  auto x = periscope::Tensor::create({1, 1, r, r});
  for (size_t i = 0; i < img.pixels.size(); ++i) x->data[i] = img.pixels[i] / 255.0;
  periscope::Rng unused(0);
  const auto y = net.forward(x, false, unused);
  periscope::DepthMap d;
  d.width = d.height = r;
  d.values.resize(img.pixels.size());
  for (size_t i = 0; i < d.values.size(); ++i) d.values[i] = range.denormalize(y->data[i]);
  return d;
}

/// Grayscale depth visualization: near maps dark, far maps bright.
periscope::GrayImage depth_to_gray(const periscope::DepthMap& depth,
                                   const periscope::DepthRange& range) {
  periscope::GrayImage img;
  img.width = depth.width;
  img.height = depth.height;
  img.pixels.resize(depth.values.size());
  for (size_t i = 0; i < depth.values.size(); ++i) {
    const double t = std::clamp(range.normalize(depth.values[i]), 0.0, 1.0);
    img.pixels[i] = static_cast<uint8_t>(std::lround(255.0 * t));
  }
  return img;
}

json metrics_to_json(const periscope::DepthMetrics& m) {
  return {{"abs_rel", m.abs_rel},   {"sq_rel", m.sq_rel}, {"rmse", m.rmse},
          {"rmse_log", m.rmse_log}, {"delta1", m.delta1}, {"delta2", m.delta2},
          {"delta3", m.delta3},     {"evaluated", m.evaluated},
          {"excluded", m.excluded}};
}

std::vector<double> parse_angles(const std::string& spec) {
  std::vector<double> angles;
  const auto c1 = spec.find(':');
  if (c1 == std::string::npos) {
    angles.push_back(std::stod(spec));
    return angles;
  }
  const auto c2 = spec.find(':', c1 + 1);
  if (c2 == std::string::npos)
    throw std::invalid_argument("angle range must be start:end:step, got " + spec);
  const double start = std::stod(spec.substr(0, c1));
  const double end = std::stod(spec.substr(c1 + 1, c2 - c1 - 1));
  const double step = std::stod(spec.substr(c2 + 1));
  if (step <= 0.0 || end < start)
    throw std::invalid_argument("angle range must ascend with a positive step");
  for (double a = start; a <= end + 1e-9; a += step) angles.push_back(a);
  return angles;
}

// ---------------------------------------------------------------------------
// Subcommand bodies.
// ---------------------------------------------------------------------------

struct SynthArgs {
  int n = 100;
  uint64_t seed = 0;
  int resolution = 64;
  std::string out;
  bool stream = false;
  double fps = 10.0;
  std::string scene;
};

int run_synth(const CLI::App& sub, const json& cfg, SynthArgs a) {
  merge_option(sub, cfg, "--n", a.n);
  merge_option(sub, cfg, "--resolution", a.resolution);
  merge_option(sub, cfg, "--out", a.out);
  merge_option(sub, cfg, "--stream", a.stream);
  merge_option(sub, cfg, "--fps", a.fps);
  merge_option(sub, cfg, "--scene", a.scene);
  a.seed = resolve_seed(sub, cfg, a.seed);

  log_resolved("synth", {{"n", a.n},
                         {"seed", a.seed},
                         {"resolution", a.resolution},
                         {"out", a.out},
                         {"stream", a.stream},
                         {"fps", a.fps},
                         {"scene", a.scene}});

  if (a.stream) {
    periscope::SceneSpec base;
    if (!a.scene.empty()) {
      base = read_scene_file(a.scene);
    } else {
      base = periscope::sample_spec(a.seed);
      base.gaze = {0.0, 0.0, -1.0};  // the stream schedule drives gaze
    }
    periscope::StreamConfig scfg;
    scfg.frames = a.n;
    scfg.fps = a.fps;
    periscope::save_stream(periscope::render_stream(base, scfg, a.resolution), a.out);
  } else {
    periscope::generate_dataset(a.n, a.seed, a.resolution, a.out);
  }
  std::cout << json{{"out", a.out}, {"n", a.n}, {"stream", a.stream}}.dump() << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, out_checkpoint, out_history;
  int base_channels = 8;
  double dropout = 0.5;
  double lr = 1e-4;
  int epochs = 150;
  int patience = 20;
  int batch_size = 8;
  std::string optimizer = "adam";
  double berhu_fraction = 0.24;
  uint64_t seed = 0;
};

int run_train(const CLI::App& sub, const json& cfg, TrainArgs a) {
  merge_option(sub, cfg, "--data", a.data);
  merge_option(sub, cfg, "--out-checkpoint", a.out_checkpoint);
  merge_option(sub, cfg, "--out-history", a.out_history);
  merge_option(sub, cfg, "--base-channels", a.base_channels);
  merge_option(sub, cfg, "--dropout", a.dropout);
  merge_option(sub, cfg, "--lr", a.lr);
  merge_option(sub, cfg, "--epochs", a.epochs);
  merge_option(sub, cfg, "--patience", a.patience);
  merge_option(sub, cfg, "--batch-size", a.batch_size);
  merge_option(sub, cfg, "--optimizer", a.optimizer);
  merge_option(sub, cfg, "--berhu-fraction", a.berhu_fraction);
  a.seed = resolve_seed(sub, cfg, a.seed);
  if (a.out_history.empty()) a.out_history = a.out_checkpoint + ".history.jsonl";

  const json resolved = {{"data", a.data},
                         {"out_checkpoint", a.out_checkpoint},
                         {"out_history", a.out_history},
                         {"base_channels", a.base_channels},
                         {"dropout", a.dropout},
                         {"lr", a.lr},
                         {"epochs", a.epochs},
                         {"patience", a.patience},
                         {"batch_size", a.batch_size},
                         {"optimizer", a.optimizer},
                         {"berhu_fraction", a.berhu_fraction},
                         {"seed", a.seed}};
  log_resolved("train", resolved);

  const periscope::LoadedDataset ds = periscope::load_dataset(a.data);
  const auto train_ids = periscope::manifest_split_ids(ds.manifest, "train");
  const auto val_ids = periscope::manifest_split_ids(ds.manifest, "val");
  const auto train_set = periscope::to_train_samples(ds, train_ids);
  const auto val_set = periscope::to_train_samples(ds, val_ids);

  periscope::NetworkConfig ncfg;
  ncfg.base_channels = a.base_channels;
  ncfg.input_resolution = ds.resolution;
  ncfg.dropout_p = a.dropout;
  periscope::DepthNet net =
      periscope::DepthNet::build(ncfg, periscope::derive_seed(a.seed, 3));

  periscope::TrainConfig tcfg;
  tcfg.lr = a.lr;
  tcfg.max_epochs = a.epochs;
  tcfg.patience = a.patience;
  tcfg.batch_size = a.batch_size;
  tcfg.optimizer = a.optimizer;
  tcfg.berhu_fraction = a.berhu_fraction;
  tcfg.seed = a.seed;
  const periscope::TrainResult result =
      periscope::train(net, train_set, val_set, tcfg);

  const periscope::DepthRange range = ds.samples.front().range;
  json meta = {{"resolved_config", resolved},
               {"d_min", range.d_min},
               {"d_max", range.d_max},
               {"best_epoch", result.best_epoch},
               {"best_val", result.best_val},
               {"early_stopped", result.early_stopped},
               {"n_train", train_ids.size()},
               {"n_val", val_ids.size()}};
  periscope::save_checkpoint(a.out_checkpoint, net, meta);
  periscope::write_history_jsonl(a.out_history, result.history);

  std::cout << json{{"checkpoint", a.out_checkpoint},
                    {"history", a.out_history},
                    {"best_epoch", result.best_epoch},
                    {"best_val", result.best_val},
                    {"epochs_run", result.history.size()},
                    {"early_stopped", result.early_stopped}}
                   .dump()
            << "\n";
  return 0;
}

struct EvalArgs {
  std::string data, checkpoint, pred_dir, split = "test", out;
};

int run_eval(const CLI::App& sub, const json& cfg, EvalArgs a) {
  merge_option(sub, cfg, "--data", a.data);
  merge_option(sub, cfg, "--checkpoint", a.checkpoint);
  merge_option(sub, cfg, "--pred-dir", a.pred_dir);
  merge_option(sub, cfg, "--split", a.split);
  merge_option(sub, cfg, "--out", a.out);
  if (a.checkpoint.empty() == a.pred_dir.empty())
    throw std::invalid_argument("eval needs exactly one of --checkpoint or --pred-dir");
  log_resolved("eval", {{"data", a.data},
                        {"checkpoint", a.checkpoint},
                        {"pred_dir", a.pred_dir},
                        {"split", a.split},
                        {"out", a.out}});

  const periscope::LoadedDataset ds = periscope::load_dataset(a.data);
  const auto ids = periscope::manifest_split_ids(ds.manifest, a.split);
  if (ids.empty()) throw std::runtime_error("split '" + a.split + "' has no samples");

  periscope::DepthMetrics metrics;
  if (!a.checkpoint.empty()) {
    json meta;
    periscope::DepthNet net = periscope::load_checkpoint(a.checkpoint, &meta);
    const auto set = periscope::to_train_samples(ds, ids);
    metrics = periscope::evaluate_metrics(net, set, range_from_meta(meta));
  } else {
    // Saved predictions: metric f32 maps named like the dataset's.
    std::vector<double> pred_mm, gt_mm;
    const std::filesystem::path dir(a.pred_dir);
    for (const auto& id : ids) {
      const periscope::LoadedSample& s = ds.by_id(id);
      const periscope::DepthMap pred = periscope::read_depth_f32(
          (dir / (id + "_depth.f32")).string(), ds.resolution, ds.resolution);
      pred_mm.insert(pred_mm.end(), pred.values.begin(), pred.values.end());
      gt_mm.insert(gt_mm.end(), s.depth.values.begin(), s.depth.values.end());
    }
    metrics = periscope::compute_depth_metrics(pred_mm, gt_mm);
  }

  json report = metrics_to_json(metrics);
  report["format_version"] = 1;
  report["split"] = a.split;
  report["n_samples"] = ids.size();
  emit_json(report, a.out);
  return 0;
}

struct PredictArgs {
  std::string checkpoint, image, stream_dir, out;
  bool viz = false;
};

int run_predict(const CLI::App& sub, const json& cfg, PredictArgs a) {
  merge_option(sub, cfg, "--checkpoint", a.checkpoint);
  merge_option(sub, cfg, "--image", a.image);
  merge_option(sub, cfg, "--stream-dir", a.stream_dir);
  merge_option(sub, cfg, "--out", a.out);
  merge_option(sub, cfg, "--viz", a.viz);
  if (a.image.empty() == a.stream_dir.empty())
    throw std::invalid_argument("predict needs exactly one of --image or --stream-dir");
  log_resolved("predict", {{"checkpoint", a.checkpoint},
                           {"image", a.image},
                           {"stream_dir", a.stream_dir},
                           {"out", a.out},
                           {"viz", a.viz}});

  json meta;
  periscope::DepthNet net = periscope::load_checkpoint(a.checkpoint, &meta);
  const periscope::DepthRange range = range_from_meta(meta);

  if (!a.image.empty()) {
    const periscope::GrayImage img = periscope::read_png_gray(a.image);
    const periscope::DepthMap depth = predict_depth(net, img, range);
    periscope::write_depth_f32(a.out, depth);
    if (a.viz) periscope::write_png_gray(a.out + ".png", depth_to_gray(depth, range));
    std::cout << json{{"out", a.out}, {"width", depth.width}, {"height", depth.height}}.dump()
              << "\n";
    return 0;
  }

  const periscope::LoadedDataset ds = periscope::load_dataset(a.stream_dir);
  const std::filesystem::path dir(a.out);
  std::filesystem::create_directories(dir);
  std::vector<std::string> ids;
  for (const auto& s : ds.samples) {
    const periscope::DepthMap depth = predict_depth(net, s.image, range);
    periscope::write_depth_f32((dir / (s.id + "_depth.f32")).string(), depth);
    if (a.viz)
      periscope::write_png_gray((dir / (s.id + "_viz.png")).string(),
                                depth_to_gray(depth, range));
    ids.push_back(s.id);
  }
  std::ofstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("cannot write prediction manifest in " + a.out);
  mf << json{{"format_version", 1}, {"resolution", ds.resolution}, {"ids", ids}}.dump(2)
     << "\n";
  std::cout << json{{"out", a.out}, {"n", ids.size()}}.dump() << "\n";
  return 0;
}

struct CalibrateArgs {
  std::string target, spec0, out_trace, out_spec;
  periscope::CalibConfig ccfg;
};

int run_calibrate(const CLI::App& sub, const json& cfg, CalibrateArgs a) {
  merge_option(sub, cfg, "--target", a.target);
  merge_option(sub, cfg, "--spec0", a.spec0);
  merge_option(sub, cfg, "--out-trace", a.out_trace);
  merge_option(sub, cfg, "--out-spec", a.out_spec);
  merge_option(sub, cfg, "--alpha", a.ccfg.alpha);
  merge_option(sub, cfg, "--block-grid", a.ccfg.block_grid);
  merge_option(sub, cfg, "--mae-threshold", a.ccfg.mae_threshold);
  merge_option(sub, cfg, "--max-steps", a.ccfg.max_steps);
  merge_option(sub, cfg, "--fd-step", a.ccfg.fd_step);
  log_resolved("calibrate", {{"target", a.target},
                             {"spec0", a.spec0},
                             {"out_trace", a.out_trace},
                             {"out_spec", a.out_spec},
                             {"alpha", a.ccfg.alpha},
                             {"block_grid", a.ccfg.block_grid},
                             {"mae_threshold", a.ccfg.mae_threshold},
                             {"max_steps", a.ccfg.max_steps},
                             {"fd_step", a.ccfg.fd_step}});

  const periscope::GrayImage target = periscope::read_png_gray(a.target);
  const periscope::SceneSpec spec0 = read_scene_file(a.spec0);
  const periscope::CalibResult result = periscope::calibrate(target, spec0, a.ccfg);
  periscope::write_trace_csv(a.out_trace, result.trace);

  const json report = {{"format_version", 1},
                       {"scene", periscope::scene_to_json(result.spec)},
                       {"converged", result.converged},
                       {"diverged", result.diverged},
                       {"diagnostic", result.diagnostic},
                       {"steps", result.trace.size()},
                       {"best_step", result.best_step},
                       {"mae_total", result.best_mae},
                       {"max_block_error", result.best_max_block_error}};
  emit_json(report, a.out_spec);
  return result.diverged ? 1 : 0;
}

struct MeasureArgs {
  std::string stream_dir, checkpoint, provider = "synthetic", out;
  periscope::GateConfig gate;
  std::string outlier_mode = "mad";
  std::vector<std::string> region_masks;
};

int run_measure(const CLI::App& sub, const json& cfg, MeasureArgs a) {
  merge_option(sub, cfg, "--stream-dir", a.stream_dir);
  merge_option(sub, cfg, "--checkpoint", a.checkpoint);
  merge_option(sub, cfg, "--provider", a.provider);
  merge_option(sub, cfg, "--out", a.out);
  merge_option(sub, cfg, "--capacity", a.gate.capacity);
  merge_option(sub, cfg, "--gaze-epsilon", a.gate.gaze_epsilon_deg);
  merge_option(sub, cfg, "--tau", a.gate.openness_tolerance);
  merge_option(sub, cfg, "--mad-cutoff", a.gate.mad_cutoff);
  merge_option(sub, cfg, "--outlier-mode", a.outlier_mode);
  if (a.provider != "synthetic")
    throw std::invalid_argument("unknown provider '" + a.provider +
                                "' (only 'synthetic' is available)");
  if (a.outlier_mode == "mad")
    a.gate.outlier_mode = periscope::OutlierMode::kMad;
  else if (a.outlier_mode == "two-sigma")
    a.gate.outlier_mode = periscope::OutlierMode::kTwoSigma;
  else
    throw std::invalid_argument("outlier mode must be 'mad' or 'two-sigma'");
  log_resolved("measure-pupil", {{"stream_dir", a.stream_dir},
                                 {"checkpoint", a.checkpoint},
                                 {"provider", a.provider},
                                 {"out", a.out},
                                 {"capacity", a.gate.capacity},
                                 {"gaze_epsilon", a.gate.gaze_epsilon_deg},
                                 {"tau", a.gate.openness_tolerance},
                                 {"mad_cutoff", a.gate.mad_cutoff},
                                 {"outlier_mode", a.outlier_mode}});

  const periscope::LoadedDataset ds = periscope::load_dataset(a.stream_dir);
  if (ds.fps <= 0.0)
    throw std::runtime_error("directory is not a frame stream (no fps in manifest)");
  periscope::FrameStream stream;
  stream.fps = ds.fps;
  for (const auto& s : ds.samples)
    stream.frames.push_back({s.image, s.depth, s.spec, s.camera});

  const periscope::SyntheticSegmentationProvider provider(stream);
  const double threshold = periscope::determine_threshold(stream, provider, a.gate);
  const periscope::GatedFrames gated =
      periscope::gate_and_collect(stream, provider, threshold, a.gate);
  if (gated.frames.size() < 3)
    throw std::runtime_error("only " + std::to_string(gated.frames.size()) +
                             " frames passed the gates; at least 3 needed");

  json meta;
  periscope::DepthNet net = periscope::load_checkpoint(a.checkpoint, &meta);
  const periscope::DepthRange range = range_from_meta(meta);
  std::vector<periscope::DepthMap> maps;
  for (const auto& frame : gated.frames) maps.push_back(predict_depth(net, frame, range));

  periscope::AggregationStats stats;
  const periscope::DepthMap fused = periscope::aggregate_depths(maps, a.gate, &stats);

  const std::size_t first = gated.indices.front();
  const periscope::PupilMeasurement m = periscope::measure_pupil(
      fused, provider.pupil_mask(first), stream.frames[first].camera);

  json report = {{"format_version", 1},
                 {"diameter_mm", m.diameter_mm},
                 {"fit_rms_mm", m.fit_rms_mm},
                 {"n_boundary_points", m.n_boundary_points},
                 {"n_maps_used", maps.size()},
                 {"n_outliers_excluded", stats.n_outliers_excluded},
                 {"threshold_px", threshold},
                 {"gated_frames", gated.indices},
                 {"collection_complete", gated.complete}};

  if (!a.region_masks.empty()) {
    // Ground truth straight from the stream files, fused the same way.
    std::vector<periscope::DepthMap> gt_maps;
    for (const std::size_t f : gated.indices) gt_maps.push_back(stream.frames[f].depth);
    const periscope::DepthMap gt_fused = periscope::aggregate_depths(gt_maps, a.gate);
    json regions = json::object();
    for (const std::string& entry : a.region_masks) {
      const auto eq = entry.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("region mask must be name=path, got " + entry);
      const std::string name = entry.substr(0, eq);
      const periscope::GrayImage mask_img = periscope::read_png_gray(entry.substr(eq + 1));
      if (mask_img.width != fused.width || mask_img.height != fused.height)
        throw std::runtime_error("region mask '" + name + "' does not match the stream size");
      std::vector<uint8_t> mask(mask_img.pixels.size());
      for (size_t i = 0; i < mask.size(); ++i) mask[i] = mask_img.pixels[i] != 0;
      regions[name] = periscope::masked_mae(fused, gt_fused, mask);
    }
    report["per_region_mae"] = regions;
  }

  emit_json(report, a.out);
  return 0;
}

struct RefractionArgs {
  std::string angles = "0:60:10", out;
  double true_diameter = 4.0;
  double cornea_radius = 8.0;
  double chamber_depth = 2.7;
  double index = 1.35;
};

int run_refraction(const CLI::App& sub, const json& cfg, RefractionArgs a) {
  merge_option(sub, cfg, "--angles", a.angles);
  merge_option(sub, cfg, "--out", a.out);
  merge_option(sub, cfg, "--true-diameter", a.true_diameter);
  merge_option(sub, cfg, "--cornea-radius", a.cornea_radius);
  merge_option(sub, cfg, "--chamber-depth", a.chamber_depth);
  merge_option(sub, cfg, "--index", a.index);
  log_resolved("refraction-sim", {{"angles", a.angles},
                                  {"out", a.out},
                                  {"true_diameter", a.true_diameter},
                                  {"cornea_radius", a.cornea_radius},
                                  {"chamber_depth", a.chamber_depth},
                                  {"index", a.index}});

  std::string table = "angle_deg,actual_mm,observed_mm,error_pct\n";
  char row[128];
  for (const double angle : parse_angles(a.angles)) {
    const periscope::RefractionResult r = periscope::refraction_apparent_size(
        angle, a.cornea_radius, a.chamber_depth, a.index, a.true_diameter);
    std::snprintf(row, sizeof(row), "%g,%.2f,%.2f,%.2f\n", angle, a.true_diameter,
                  r.observed_mm, r.error_pct);
    table += row;
  }
  if (!a.out.empty()) {
    std::ofstream out(a.out);
    if (!out) throw std::runtime_error("cannot write table: " + a.out);
    out << table;
  }
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"periocular depth estimation toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  SynthArgs synth;
  TrainArgs train;
  EvalArgs eval;
  PredictArgs predict;
  CalibrateArgs calibrate;
  MeasureArgs measure;
  RefractionArgs refraction;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file; explicit flags win");
  };

  CLI::App* s_synth = app.add_subcommand("synth", "generate a synthetic dataset or stream");
  add_common(s_synth);
  s_synth->add_option("--n", synth.n, "samples (or frames with --stream)");
  s_synth->add_option("--seed", synth.seed, "dataset seed");
  s_synth->add_option("--resolution", synth.resolution, "square image size");
  s_synth->add_option("--out", synth.out, "output directory")->required();
  s_synth->add_flag("--stream", synth.stream, "emit a frame stream instead of a dataset");
  s_synth->add_option("--fps", synth.fps, "stream frame rate");
  s_synth->add_option("--scene", synth.scene, "scene JSON for the stream base");

  CLI::App* s_train = app.add_subcommand("train", "train a depth network");
  add_common(s_train);
  s_train->add_option("--data", train.data, "dataset directory")->required();
  s_train->add_option("--out-checkpoint", train.out_checkpoint, "checkpoint path")->required();
  s_train->add_option("--out-history", train.out_history, "history JSONL path");
  s_train->add_option("--base-channels", train.base_channels, "width multiplier");
  s_train->add_option("--dropout", train.dropout, "dropout probability");
  s_train->add_option("--lr", train.lr, "learning rate");
  s_train->add_option("--epochs", train.epochs, "max epochs");
  s_train->add_option("--patience", train.patience, "early-stop patience");
  s_train->add_option("--batch-size", train.batch_size, "batch size");
  s_train->add_option("--optimizer", train.optimizer, "adam or gd");
  s_train->add_option("--berhu-fraction", train.berhu_fraction, "loss threshold fraction");
  s_train->add_option("--seed", train.seed, "training seed");

  CLI::App* s_eval = app.add_subcommand("eval", "report depth metrics on a split");
  add_common(s_eval);
  s_eval->add_option("--data", eval.data, "dataset directory")->required();
  s_eval->add_option("--checkpoint", eval.checkpoint, "checkpoint to evaluate");
  s_eval->add_option("--pred-dir", eval.pred_dir, "saved predictions to evaluate");
  s_eval->add_option("--split", eval.split, "train, val or test");
  s_eval->add_option("--out", eval.out, "also write the report here");

  CLI::App* s_predict = app.add_subcommand("predict", "write depth maps for images");
  add_common(s_predict);
  s_predict->add_option("--checkpoint", predict.checkpoint, "checkpoint")->required();
  s_predict->add_option("--image", predict.image, "single PNG input");
  s_predict->add_option("--stream-dir", predict.stream_dir, "stream directory input");
  s_predict->add_option("--out", predict.out, "output file (image) or directory (stream)")
      ->required();
  s_predict->add_flag("--viz", predict.viz, "also write grayscale depth PNGs");

  CLI::App* s_cal = app.add_subcommand("calibrate", "fit noise/light to a target image");
  add_common(s_cal);
  s_cal->add_option("--target", calibrate.target, "target PNG")->required();
  s_cal->add_option("--spec0", calibrate.spec0, "initial scene JSON")->required();
  s_cal->add_option("--out-trace", calibrate.out_trace, "descent trace CSV")->required();
  s_cal->add_option("--out-spec", calibrate.out_spec, "also write the result here");
  s_cal->add_option("--alpha", calibrate.ccfg.alpha, "learning rate");
  s_cal->add_option("--block-grid", calibrate.ccfg.block_grid, "score grid size");
  s_cal->add_option("--mae-threshold", calibrate.ccfg.mae_threshold, "stop threshold");
  s_cal->add_option("--max-steps", calibrate.ccfg.max_steps, "step cap");
  s_cal->add_option("--fd-step", calibrate.ccfg.fd_step, "probe fraction");

  CLI::App* s_measure = app.add_subcommand("measure-pupil", "measure pupil diameter");
  add_common(s_measure);
  s_measure->add_option("--stream-dir", measure.stream_dir, "stream directory")->required();
  s_measure->add_option("--checkpoint", measure.checkpoint, "checkpoint")->required();
  s_measure->add_option("--provider", measure.provider, "segmentation provider");
  s_measure->add_option("--out", measure.out, "also write the report here");
  s_measure->add_option("--capacity", measure.gate.capacity, "frames per measurement");
  s_measure->add_option("--gaze-epsilon", measure.gate.gaze_epsilon_deg, "max gaze angle");
  s_measure->add_option("--tau", measure.gate.openness_tolerance, "openness tolerance");
  s_measure->add_option("--mad-cutoff", measure.gate.mad_cutoff, "outlier z cutoff");
  s_measure->add_option("--outlier-mode", measure.outlier_mode, "mad or two-sigma");
  s_measure->add_option("--region-mask", measure.region_masks,
                        "name=mask.png for per-region error (repeatable)");

  CLI::App* s_refr = app.add_subcommand("refraction-sim", "apparent pupil size vs angle");
  add_common(s_refr);
  s_refr->add_option("--angles", refraction.angles, "start:end:step degrees");
  s_refr->add_option("--out", refraction.out, "also write the table here");
  s_refr->add_option("--true-diameter", refraction.true_diameter, "physical diameter mm");
  s_refr->add_option("--cornea-radius", refraction.cornea_radius, "corneal radius mm");
  s_refr->add_option("--chamber-depth", refraction.chamber_depth, "anterior chamber mm");
  s_refr->add_option("--index", refraction.index, "refractive index");

  try {
    app.parse(argc, argv);
    const json cfg = load_config_file(config_path);
    if (s_synth->parsed()) return run_synth(*s_synth, cfg, synth);
    if (s_train->parsed()) return run_train(*s_train, cfg, train);
    if (s_eval->parsed()) return run_eval(*s_eval, cfg, eval);
    if (s_predict->parsed()) return run_predict(*s_predict, cfg, predict);
    if (s_cal->parsed()) return run_calibrate(*s_cal, cfg, calibrate);
    if (s_measure->parsed()) return run_measure(*s_measure, cfg, measure);
    if (s_refr->parsed()) return run_refraction(*s_refr, cfg, refraction);
    throw std::runtime_error("no subcommand dispatched");
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: invalid_argument: " << e.what() << "\n";
    return 2;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: runtime_error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 3;
  }
}
