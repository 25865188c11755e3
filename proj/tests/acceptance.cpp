// Acceptance checks for the periscope toolkit. Each check prints exactly one
// [PASS]/[FAIL] line with its measured numbers and tolerance; the process
// exit code is the number of failed checks. Checks 2-5 keep the bytes of
// everything they produce; check 10 reruns those workloads with the same
// seeds and requires bit-identical results.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "periscope/periscope.hpp"

using namespace periscope;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path work_dir() {
  static const fs::path dir = [] {
    auto p = fs::temp_directory_path() / "periscope_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

void pack(std::string& blob, const void* data, size_t n) {
  blob.append(static_cast<const char*>(data), n);
}

void pack(std::string& blob, double v) { pack(blob, &v, sizeof(v)); }

void pack(std::string& blob, const std::vector<double>& v) {
  pack(blob, v.data(), v.size() * sizeof(double));
}

DepthMap predict_map(DepthNet& net, const GrayImage& img, const DepthRange& range) {
  const int r = net.cfg.input_resolution;
  auto x = Tensor::create({1, 1, r, r});
  for (size_t i = 0; i < img.pixels.size(); ++i) x->data[i] = img.pixels[i] / 255.0;
  Rng unused(0);
  const auto y = net.forward(x, false, unused);
  DepthMap d;
  d.width = d.height = r;
  d.values.resize(img.pixels.size());
  for (size_t i = 0; i < d.values.size(); ++i) d.values[i] = range.denormalize(y->data[i]);
  return d;
}

// ---------------------------------------------------------------------------
// Check 1: finite-difference gradient verification.
// ---------------------------------------------------------------------------

struct OpCheck {
  std::string name;
  double err;
};

std::vector<OpCheck> op_gradient_suite() {
  std::vector<OpCheck> out;
  Rng rng(19);
  auto rand_t = [&](std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    auto t = Tensor::create(std::move(shape), true);
    for (auto& v : t->data) v = rng.uniform(lo, hi);
    return t;
  };

  auto a = rand_t({2, 4, 8, 8});
  auto b = rand_t({2, 4, 8, 8});
  out.push_back({"add", gradcheck([&] { return sum(add(a, b)); }, a)});
  out.push_back({"sub", gradcheck([&] { return sum(sub(a, b)); }, b)});
  out.push_back({"mul", gradcheck([&] { return sum(mul(a, b)); }, a)});
  out.push_back({"scale", gradcheck([&] { return sum(scale(a, -1.7)); }, a)});
  out.push_back({"sum", gradcheck([&] { return sum(a); }, a)});
  out.push_back({"mean", gradcheck([&] { return mean(a); }, a)});
  out.push_back({"sigmoid", gradcheck([&] { return sum(sigmoid(a)); }, a)});

  // Probes must stay away from the kink at zero.
  auto r_in = rand_t({2, 4, 8, 8}, 0.2, 1.0);
  for (size_t i = 0; i < r_in->data.size(); i += 2) r_in->data[i] = -r_in->data[i];
  out.push_back({"relu", gradcheck([&] { return sum(relu(r_in)); }, r_in)});

  auto cx = rand_t({2, 3, 8, 8});
  auto cw = rand_t({2, 3, 3, 3});
  auto cb = rand_t({2});
  auto conv = [&] { return sum(conv2d(cx, cw, cb, 1, 1)); };
  out.push_back({"conv2d/x", gradcheck(conv, cx)});
  out.push_back({"conv2d/w", gradcheck(conv, cw)});
  out.push_back({"conv2d/b", gradcheck(conv, cb)});

  auto px = rand_t({2, 3, 8, 8});
  out.push_back({"maxpool2d", gradcheck([&] { return sum(maxpool2d(px)); }, px)});

  auto ux = rand_t({2, 3, 4, 4});
  out.push_back(
      {"bilinear_upsample", gradcheck([&] { return sum(bilinear_upsample(ux, 2)); }, ux)});

  auto bx = rand_t({2, 3, 8, 8});
  auto bg = rand_t({3}, 0.5, 1.5);
  auto bb = rand_t({3});
  auto bn = [&] {
    BatchNormState state(3);  // fresh per call: running-stat updates are not in the graph
    auto y = batchnorm2d(bx, bg, bb, state, true);
    // Quadratic objective: a plain sum is blind to x and gamma because each
    // standardized channel sums to zero.
    return mean(mul(y, y));
  };
  out.push_back({"batchnorm2d/x", gradcheck(bn, bx, 1e-4)});
  out.push_back({"batchnorm2d/gamma", gradcheck(bn, bg)});
  out.push_back({"batchnorm2d/beta", gradcheck(bn, bb)});

  auto dx = rand_t({2, 4, 8, 8});
  auto drop = [&] {
    Rng mask_rng(55);  // identical mask on every probe
    return sum(dropout(dx, 0.4, mask_rng, true));
  };
  out.push_back({"dropout", gradcheck(drop, dx)});

  auto wa = rand_t({1, 2, 4, 4});
  auto wb = rand_t({1, 3, 4, 4});
  auto wc = [&] { return sum(weighted_concat({{wa, 0.7}, {wb, 1.3}})); };
  out.push_back({"weighted_concat/a", gradcheck(wc, wa)});
  out.push_back({"weighted_concat/b", gradcheck(wc, wb)});

  // Keep |pred - target| away from the cutoff where the loss derivative has
  // its corner.
  const double cut = 0.12;
  auto target = rand_t({2, 4, 8, 8});
  auto pred = Tensor::create({2, 4, 8, 8}, true);
  for (size_t i = 0; i < pred->data.size(); ++i) {
    double diff;
    do {
      diff = rng.uniform(-0.5, 0.5);
    } while (std::abs(std::abs(diff) - cut) < 0.01);
    pred->data[i] = target->data[i] + diff;
  }
  out.push_back(
      {"berhu_loss", gradcheck([&] { return berhu_loss_pinned(pred, target, cut); }, pred)});
  return out;
}

struct SpotCheck {
  double worst = 0.0;
  int verified = 0;
  int attempts = 0;
};

SpotCheck network_gradient_spot_check(int n_params) {
  NetworkConfig cfg;
  cfg.base_channels = 2;
  cfg.input_resolution = 64;
  DepthNet net = DepthNet::build(cfg, 31);

  Rng rng(13);
  auto x = Tensor::create({1, 1, 64, 64});
  for (auto& v : x->data) v = rng.uniform01();
  auto target = Tensor::create({1, 1, 64, 64});
  for (auto& v : target->data) v = rng.uniform(0.05, 0.95);

  // The adaptive cutoff is a batch statistic held constant during
  // differentiation, so the probes must hold it constant too: freeze it at
  // its value for the unperturbed parameters.
  double cut = 0.0;
  {
    Rng drop_rng(77);
    auto pred = net.forward(x, true, drop_rng);
    for (size_t i = 0; i < pred->data.size(); ++i)
      cut = std::max(cut, 0.24 * std::abs(pred->data[i] - target->data[i]));
  }
  auto loss_fn = [&] {
    Rng drop_rng(77);  // fixed dropout masks across probes
    return berhu_loss_pinned(net.forward(x, true, drop_rng), target, cut);
  };
  auto loss = loss_fn();
  loss->backward();

  const auto sym_rel = [](double a, double b) {
    return std::abs(a - b) / std::max(1e-6, std::abs(a) + std::abs(b));
  };
  auto params = net.parameters();
  SpotCheck out;
  // The composition is piecewise smooth (relu clips, pool switches, loss
  // corner), so a probe window straddling a kink makes central differences
  // meaningless there. A probe only counts when two step sizes agree, i.e.
  // the window is locally smooth; kink-straddling draws are redrawn.
  while (out.verified < n_params && out.attempts < 10 * n_params) {
    ++out.attempts;
    auto& p = params[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(params.size()) - 1))];
    const auto i =
        static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(p->numel()) - 1));
    const double keep = p->data[i];
    const auto central = [&](double h) {
      p->data[i] = keep + h;
      const double up = loss_fn()->data[0];
      p->data[i] = keep - h;
      const double dn = loss_fn()->data[0];
      p->data[i] = keep;
      return (up - dn) / (2.0 * h);
    };
    const double coarse = central(1e-6);
    const double fine = central(1e-7);
    if (sym_rel(coarse, fine) > 3e-4) continue;
    out.worst = std::max(out.worst, sym_rel(p->grad[i], fine));
    ++out.verified;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checks 2-5 workloads, shared with the determinism rerun.
// ---------------------------------------------------------------------------

struct OverfitRun {
  std::string history_bytes;
  double min_train_loss = 1e30;
  int first_epoch_below = -1;
  size_t epochs = 0;
};

OverfitRun run_overfit_workload(const std::string& tag) {
  DepthRange range;
  std::vector<TrainSample> set;
  for (int i = 0; i < 8; ++i) {
    const SamplePair pair = render(sample_spec(derive_seed(7, i)), 64);
    TrainSample t;
    for (uint8_t p : pair.image.pixels) t.image.push_back(p / 255.0);
    for (double d : pair.depth.values)
      t.depth_norm.push_back(std::clamp(range.normalize(d), 0.0, 1.0));
    set.push_back(std::move(t));
  }

  NetworkConfig ncfg;
  ncfg.base_channels = 2;
  ncfg.input_resolution = 64;
  ncfg.dropout_p = 0.0;  // regularization off: this is a pure capacity check
  DepthNet net = DepthNet::build(ncfg, derive_seed(7, 100));

  TrainConfig tcfg;
  tcfg.lr = 5e-3;
  tcfg.max_epochs = 500;
  tcfg.patience = 500;
  tcfg.seed = 7;
  const TrainResult res = train(net, set, set, tcfg);

  const fs::path hist = work_dir() / ("overfit_" + tag + ".jsonl");
  write_history_jsonl(hist.string(), res.history);

  OverfitRun out;
  out.history_bytes = slurp(hist);
  out.epochs = res.history.size();
  for (const auto& e : res.history) {
    out.min_train_loss = std::min(out.min_train_loss, e.train_loss);
    if (out.first_epoch_below < 0 && e.train_loss < 0.01) out.first_epoch_below = e.epoch;
  }
  return out;
}

struct GeneralizationRun {
  std::string checkpoint_bytes;
  std::string history_bytes;
  std::string manifest_bytes;
  fs::path checkpoint_path;
  DepthMetrics test;
  double train_seconds = 0.0;
};

GeneralizationRun run_generalization_workload(const std::string& tag) {
  const fs::path data = work_dir() / ("gen_data_" + tag);
  generate_dataset(200, 42, 64, data.string());
  const LoadedDataset ds = load_dataset(data.string());
  const auto tr = to_train_samples(ds, manifest_split_ids(ds.manifest, "train"));
  const auto va = to_train_samples(ds, manifest_split_ids(ds.manifest, "val"));
  const auto te = to_train_samples(ds, manifest_split_ids(ds.manifest, "test"));

  NetworkConfig ncfg;
  ncfg.base_channels = 8;
  ncfg.input_resolution = 64;
  DepthNet net = DepthNet::build(ncfg, derive_seed(42, 3));

  TrainConfig tcfg;
  tcfg.lr = 1e-4;
  tcfg.max_epochs = 80;
  tcfg.patience = 80;
  tcfg.seed = 42;

  const auto t0 = Clock::now();
  const TrainResult res = train(net, tr, va, tcfg);
  GeneralizationRun out;
  out.train_seconds = seconds_since(t0);

  out.checkpoint_path = work_dir() / ("gen_" + tag + ".ckpt");
  save_checkpoint(out.checkpoint_path.string(), net, {{"d_min", 20.0}, {"d_max", 90.0}});
  const fs::path hist = work_dir() / ("gen_" + tag + ".jsonl");
  write_history_jsonl(hist.string(), res.history);

  out.checkpoint_bytes = slurp(out.checkpoint_path);
  out.history_bytes = slurp(hist);
  out.manifest_bytes = slurp(data / "manifest.json");
  out.test = evaluate_metrics(net, te, ds.samples.front().range);
  return out;
}

struct CalibrationRun {
  std::string trace_bytes;
  std::string spec_bytes;
  CalibResult result;
  double light_rel_err = 1.0;
  double seconds = 0.0;
};

CalibrationRun run_calibration_workload(const std::string& tag) {
  SceneSpec truth = sample_spec(99);
  truth.theta_light *= 1.2;
  truth.theta_noise *= 1.5;
  const GrayImage target = render(truth, 64).image;
  const SceneSpec spec0 = sample_spec(99);

  const auto t0 = Clock::now();
  CalibrationRun out;
  out.result = calibrate(target, spec0);
  out.seconds = seconds_since(t0);
  out.light_rel_err =
      std::abs(out.result.spec.theta_light - truth.theta_light) / truth.theta_light;

  const fs::path trace = work_dir() / ("calib_" + tag + ".csv");
  write_trace_csv(trace.string(), out.result.trace);
  out.trace_bytes = slurp(trace);
  out.spec_bytes = scene_to_json(out.result.spec).dump();
  return out;
}

struct PupilRun {
  double oracle_diameter = 0.0;
  std::vector<double> scene_diameters;
  double mean_abs_err = 0.0;
  double max_abs_err = 0.0;
  std::string blob;  // diameters + fused maps, for bit-identity comparison
};

PupilRun run_pupil_workload(const fs::path& checkpoint) {
  PupilRun out;

  SceneSpec oracle_spec;  // defaults: 4.00 mm pupil, straight gaze
  const SamplePair oracle_pair = render(oracle_spec, 256);
  const Segmentation oracle_seg = ground_truth_segmentation(oracle_spec, 256, 33);
  out.oracle_diameter =
      measure_pupil(oracle_pair.depth, oracle_seg.pupil_mask, oracle_pair.camera)
          .diameter_mm;
  pack(out.blob, out.oracle_diameter);

  nlohmann::json meta;
  DepthNet net = load_checkpoint(checkpoint.string(), &meta);
  const DepthRange range{meta.value("d_min", 20.0), meta.value("d_max", 90.0)};

  double abs_sum = 0.0;
  for (const uint64_t base_seed : {101ull, 202ull, 303ull, 404ull, 505ull}) {
    SceneSpec base = sample_spec(base_seed);
    base.pupil_diameter = 4.0;
    base.gaze = {0.0, 0.0, -1.0};
    StreamConfig scfg;
    scfg.frames = 70;
    const FrameStream stream = render_stream(base, scfg, 64);
    const SyntheticSegmentationProvider provider(stream);
    const GateConfig gate;
    const double threshold = determine_threshold(stream, provider, gate);
    const GatedFrames gated = gate_and_collect(stream, provider, threshold, gate);

    std::vector<DepthMap> maps;
    for (const auto& frame : gated.frames) maps.push_back(predict_map(net, frame, range));
    const DepthMap fused = aggregate_depths(maps);

    const std::size_t first = gated.indices.front();
    const PupilMeasurement m = measure_pupil(fused, provider.pupil_mask(first),
                                             stream.frames[first].camera);
    out.scene_diameters.push_back(m.diameter_mm);
    abs_sum += std::abs(m.diameter_mm - 4.0);
    out.max_abs_err = std::max(out.max_abs_err, std::abs(m.diameter_mm - 4.0));
    pack(out.blob, m.diameter_mm);
    pack(out.blob, fused.values);
  }
  out.mean_abs_err = abs_sum / static_cast<double>(out.scene_diameters.size());
  return out;
}

// ---------------------------------------------------------------------------
// Remaining self-contained checks.
// ---------------------------------------------------------------------------

struct CheckOutcome {
  bool pass = false;
  std::string detail;
};

CheckOutcome check_gradients() {
  const auto t0 = Clock::now();
  const auto ops = op_gradient_suite();
  double worst_op = 0.0;
  std::string worst_name;
  for (const auto& c : ops)
    if (c.err > worst_op) {
      worst_op = c.err;
      worst_name = c.name;
    }
  const SpotCheck e2e = network_gradient_spot_check(20);
  const double secs = seconds_since(t0);
  return {worst_op < 1e-4 && e2e.verified == 20 && e2e.worst < 1e-3 && secs < 120.0,
          fmt("%zu op checks, worst rel err %.2e (%s) < 1e-4; end-to-end worst %.2e over "
              "%d params < 1e-3 (%d draws; kink-straddling windows redrawn); %.1fs < 120s",
              ops.size(), worst_op, worst_name.c_str(), e2e.worst, e2e.verified,
              e2e.attempts, secs)};
}

CheckOutcome check_refraction_table() {
  const auto t0 = Clock::now();
  const double published[7] = {0.01, 0.18, 0.31, 0.52, 0.75, 0.89, 1.02};
  double worst = 0.0;
  bool monotone = true;
  double prev = -1.0;
  for (int i = 0; i < 7; ++i) {
    const RefractionResult r = refraction_apparent_size(10.0 * i);
    worst = std::max(worst, std::abs(r.error_pct - published[i]));
    if (r.error_pct < prev) monotone = false;
    prev = r.error_pct;
  }
  const double secs = seconds_since(t0);
  return {worst <= 0.5 && monotone && secs < 1.0,
          fmt("max deviation %.3f pp <= 0.5 across 0..60 deg; %smonotone; %.2fs < 1s",
              worst, monotone ? "" : "NOT ", secs)};
}

CheckOutcome check_aggregation_robustness() {
  const DepthMap base = render(SceneSpec{}, 64).depth;
  std::vector<DepthMap> maps(8, base);
  DepthMap clean_mean = base;
  for (double& v : clean_mean.values) v = 0.0;
  for (int i = 0; i < 8; ++i) {
    const double offset = (i - 3.5) * 0.01;
    for (size_t j = 0; j < base.values.size(); ++j) {
      maps[static_cast<size_t>(i)].values[j] = base.values[j] + offset;
      clean_mean.values[j] += (base.values[j] + offset) / 8.0;
    }
  }
  for (double& v : maps[7].values) v += 10.0;  // one map globally corrupted

  AggregationStats stats;
  const DepthMap fused = aggregate_depths(maps, {}, &stats);
  double worst = 0.0;
  for (size_t j = 0; j < fused.values.size(); ++j)
    worst = std::max(worst, std::abs(fused.values[j] - clean_mean.values[j]));
  return {worst < 0.01,
          fmt("one of 8 maps +10 mm: fused vs clean mean differs %.4f mm/px < 0.01 "
              "(%zu values excluded)",
              worst, stats.n_outliers_excluded)};
}

CheckOutcome check_backprojection_roundtrip() {
  const CameraIntrinsics k = make_intrinsics(SceneSpec{}, 64);
  Rng rng(8);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform(0.0, 64.0);
    const double v = rng.uniform(0.0, 64.0);
    const double d = rng.uniform(20.0, 90.0);
    const Pixel px = project(back_project(u, v, d, k), k);
    worst = std::max({worst, std::abs(px.u - u), std::abs(px.v - v)});
  }
  return {worst <= 1e-9,
          fmt("max round-trip error %.2e px <= 1e-9 over 10000 pixels", worst)};
}

CheckOutcome check_capacity_search() {
  const int64_t target = 28'800'000;
  const int b = DepthNet::closest_base_channels(target);
  NetworkConfig chosen;
  chosen.base_channels = b;
  const int64_t reported = DepthNet::parameter_count(chosen);

  // Independent per-layer enumeration: stage = 3x3 conv (w+bias) plus
  // batchnorm gain and shift; two stages per block; 1x1 head.
  const auto stage = [](int64_t cin, int64_t cout) { return 9 * cin * cout + 3 * cout; };
  const auto block = [&](int64_t cin, int64_t cout) {
    return stage(cin, cout) + stage(cout, cout);
  };
  const int64_t bb = b;
  int64_t enumerated = 0;
  enumerated += block(1, bb) + block(bb, 2 * bb) + block(2 * bb, 4 * bb) +
                block(4 * bb, 8 * bb) + block(8 * bb, 16 * bb);
  enumerated += block(16 * bb, 32 * bb);
  enumerated += block(60 * bb, 16 * bb) + block(60 * bb, 8 * bb) + block(8 * bb, 4 * bb) +
                block(4 * bb, 2 * bb) + block(2 * bb, bb);
  enumerated += bb + 1;  // head conv + bias

  const double rel = std::abs(static_cast<double>(reported - target)) / target;
  return {reported == enumerated && rel <= 0.15,
          fmt("base_channels %d -> %lld parameters (enumeration %s), %.1f%% from "
              "28,800,000 <= 15%%",
              b, static_cast<long long>(reported),
              reported == enumerated ? "agrees" : "DISAGREES", 100.0 * rel)};
}

}  // namespace

int main() {
  int failures = 0;
  const auto report = [&](int id, const char* name, const CheckOutcome& o) {
    std::printf("[%s] %02d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name,
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  };
  const auto guarded = [&](int id, const char* name, auto&& fn) {
    CheckOutcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    report(id, name, o);
    return o.pass;
  };

  guarded(1, "gradient-checks", check_gradients);

  std::optional<OverfitRun> overfit;
  guarded(2, "overfit-smoke", [&] {
    const auto t0 = Clock::now();
    overfit = run_overfit_workload("a");
    const double secs = seconds_since(t0);
    return CheckOutcome{
        overfit->first_epoch_below > 0 && secs < 300.0,
        fmt("8-pair train loss %.2e, first < 0.01 at epoch %d of %zu (cap 500); "
            "%.0fs < 300s",
            overfit->min_train_loss, overfit->first_epoch_below, overfit->epochs, secs)};
  });

  std::optional<GeneralizationRun> gen;
  guarded(3, "generalization", [&] {
    gen = run_generalization_workload("a");
    const DepthMetrics& m = gen->test;
    return CheckOutcome{m.delta1 >= 0.90 && m.abs_rel <= 0.10 &&
                            gen->train_seconds < 1800.0,
                        fmt("200 pairs, 140/30/30 split: test delta1 %.4f >= 0.90, "
                            "abs_rel %.4f <= 0.10 (rmse %.2f mm); train %.0fs < 1800s",
                            m.delta1, m.abs_rel, m.rmse, gen->train_seconds)};
  });

  std::optional<CalibrationRun> calib;
  guarded(4, "calibration-recovery", [&] {
    calib = run_calibration_workload("a");
    return CheckOutcome{
        calib->result.converged && calib->result.trace.size() <= 101 &&
            calib->result.best_mae < 1.275 && calib->light_rel_err <= 0.05 &&
            calib->seconds < 300.0,
        fmt("+20%% light, +50%% noise target: mae %.4f < 1.275 after %zu steps <= 100; "
            "theta_light err %.2f%% <= 5%%; %.1fs < 300s",
            calib->result.best_mae, calib->result.trace.size() - 1,
            100.0 * calib->light_rel_err, calib->seconds)};
  });

  std::optional<PupilRun> pupil;
  guarded(5, "pupil-accuracy", [&] {
    if (!gen) return CheckOutcome{false, "skipped: needs the trained checkpoint"};
    pupil = run_pupil_workload(gen->checkpoint_path);
    const double oracle_err = std::abs(pupil->oracle_diameter - 4.0);
    return CheckOutcome{
        oracle_err <= 0.10 && pupil->mean_abs_err <= 0.33,
        fmt("true-depth path %.3f mm (err %.3f <= 0.10); model path mean |err| "
            "%.3f mm <= 0.33 over 5 streams (worst %.3f)",
            pupil->oracle_diameter, oracle_err, pupil->mean_abs_err, pupil->max_abs_err)};
  });

  guarded(6, "refraction-table", check_refraction_table);
  guarded(7, "aggregation-robustness", check_aggregation_robustness);
  guarded(8, "backprojection-roundtrip", check_backprojection_roundtrip);
  guarded(9, "capacity-search", check_capacity_search);

  guarded(10, "determinism", [&] {
    if (!overfit || !gen || !calib || !pupil)
      return CheckOutcome{false, "skipped: needs all of checks 2-5 to have run"};
    const OverfitRun overfit_b = run_overfit_workload("b");
    const GeneralizationRun gen_b = run_generalization_workload("b");
    const CalibrationRun calib_b = run_calibration_workload("b");
    const PupilRun pupil_b = run_pupil_workload(gen_b.checkpoint_path);

    const bool ok_overfit = overfit_b.history_bytes == overfit->history_bytes;
    const bool ok_gen = gen_b.checkpoint_bytes == gen->checkpoint_bytes &&
                        gen_b.history_bytes == gen->history_bytes &&
                        gen_b.manifest_bytes == gen->manifest_bytes;
    const bool ok_calib = calib_b.trace_bytes == calib->trace_bytes &&
                          calib_b.spec_bytes == calib->spec_bytes;
    const bool ok_pupil = pupil_b.blob == pupil->blob;
    return CheckOutcome{
        ok_overfit && ok_gen && ok_calib && ok_pupil,
        fmt("reruns with identical seeds: overfit history %s, training "
            "checkpoint+history %s, calibration trace %s, pupil measurements %s",
            ok_overfit ? "identical" : "DIFFER", ok_gen ? "identical" : "DIFFER",
            ok_calib ? "identical" : "DIFFER", ok_pupil ? "identical" : "DIFFER")};
  });

  std::printf("%s: %d of 10 checks failed\n", failures == 0 ? "OK" : "FAILED", failures);
  return failures;
}
