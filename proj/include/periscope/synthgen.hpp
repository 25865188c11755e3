#pragma once

#include <filesystem>
#include <iomanip>
#include <sstream>

#include "periscope/geometry.hpp"
#include "periscope/image.hpp"
#include "periscope/training.hpp"

namespace periscope {

// ---------------------------------------------------------------------------
// Scene description.
// ---------------------------------------------------------------------------

/// Fully parametric periocular scene in camera coordinates (camera at the
/// origin looking along +z, x right, y down, all lengths in millimetres).
/// Every stochastic element derives from `seed`; two renders of an identical
/// spec are bit-identical. The render path uses only +,-,*,/ and sqrt so the
/// bytes are reproducible across platforms and libm versions.
struct SceneSpec {
  uint64_t seed = 0;

  // Eyeball sphere.
  Vec3 eyeball_centre{0.0, 0.0, 58.0};
  double eyeball_radius = 12.0;

  // Pupil: spherical cap around the gaze axis whose planar boundary circle
  // has exactly `pupil_diameter` across. Gaze is a unit vector pointing out
  // of the eye toward the camera (z < 0; straight gaze is (0,0,-1)).
  double pupil_diameter = 4.0;
  double iris_diameter = 10.5;
  Vec3 gaze{0.0, 0.0, -1.0};

  // Eyelid aperture: two opposed quadratics over lateral offset u in [-1,1]
  // (u = (x - eye_x)/lid_halfwidth), meeting at the corners. The vertical
  // opening at the centre is `aperture`.
  double aperture = 9.0;
  double lid_halfwidth = 16.0;

  // Skin heightfield: base plane pulled toward the camera by smooth compact
  // bumps (brow above the eye, cheekbone below, lid dome over the socket).
  double skin_base_z = 66.0;
  double brow_amp = 6.0;
  double cheek_amp = 5.0;

  // Photometrics.
  double albedo = 0.55;        // demographic grayscale reflectance, [0.2, 0.9]
  double theta_light = 1.0;    // point-light intensity, >= 0
  double theta_noise = 2.0;    // additive Gaussian noise std in pixel counts
  Vec3 light_pos{25.0, -20.0, 8.0};

  // Camera: focal length is focal_factor * resolution pixels, principal point
  // at the image centre; depth_scale is the depth-map unit in millimetres.
  double focal_factor = 2.0;
  double depth_scale = 1.0;
  Vec3 pose{0.0, 0.0, 0.0};  // anchor offset the sampler built the face around

  void validate() const {
    if (eyeball_radius <= 0.0) throw std::invalid_argument("eyeball radius must be positive");
    if (pupil_diameter < 2.0 || pupil_diameter > 8.0)
      throw std::invalid_argument("pupil diameter must lie in [2, 8] mm");
    if (iris_diameter <= pupil_diameter || iris_diameter >= 2.0 * eyeball_radius)
      throw std::invalid_argument("iris diameter must exceed the pupil and fit the eyeball");
    if (std::abs(gaze.norm() - 1.0) > 1e-9)
      throw std::invalid_argument("gaze must be a unit vector");
    if (gaze.z >= 0.0) throw std::invalid_argument("gaze must point toward the camera (z < 0)");
    if (aperture < 0.0 || lid_halfwidth <= 0.0)
      throw std::invalid_argument("aperture must be >= 0 and lid halfwidth positive");
    if (albedo < 0.2 || albedo > 0.9)
      throw std::invalid_argument("albedo must lie in [0.2, 0.9]");
    if (theta_light < 0.0 || theta_noise < 0.0)
      throw std::invalid_argument("theta_light and theta_noise must be non-negative");
    if (focal_factor <= 0.0 || depth_scale <= 0.0)
      throw std::invalid_argument("focal factor and depth scale must be positive");

    // Every renderable depth must stay inside [20, 90] mm. Conservative
    // bounds: the sphere's visible front and the skin field's full sag.
    const double sphere_front = eyeball_centre.z - eyeball_radius;
    const double skin_lowest = skin_base_z - brow_amp - cheek_amp - lid_dome_amp();
    if (sphere_front < 20.0 || eyeball_centre.z > 90.0 || skin_base_z > 90.0 ||
        skin_lowest < 20.0)
      throw std::invalid_argument("scene would produce depths outside [20, 90] mm");
  }

  /// Height of the smooth dome the lids form over the socket: reaches to one
  /// millimetre behind the cornea apex.
  double lid_dome_amp() const {
    return std::max(0.0, skin_base_z - (eyeball_centre.z - eyeball_radius) - 1.0);
  }
};

inline CameraIntrinsics make_intrinsics(const SceneSpec& spec, int resolution) {
  CameraIntrinsics k;
  k.fx = k.fy = spec.focal_factor * resolution;
  k.cx = k.cy = resolution / 2.0;
  k.s = spec.depth_scale;
  return k;
}

// Material reflectance multipliers and the light falloff reference distance.
inline constexpr double kSkinReflect = 1.0;
inline constexpr double kScleraReflect = 0.95;
inline constexpr double kIrisReflect = 0.45;
inline constexpr double kPupilReflect = 0.03;
inline constexpr double kLightRefDist = 60.0;

// ---------------------------------------------------------------------------
// Surface evaluation.
// ---------------------------------------------------------------------------

namespace detail {

/// Skin height and its lateral derivatives at face coordinates (x, y).
struct SkinPoint {
  double z, zx, zy;
};

/// Compactly supported C1 bump: (1-q)^2 for q < 1, else 0 (q is the squared
/// scaled radius). Polynomial on purpose: no libm calls in the render path.
inline SkinPoint skin_field(const SceneSpec& s, double x, double y) {
  SkinPoint p{s.skin_base_z, 0.0, 0.0};
  const double ex = s.eyeball_centre.x, ey = s.eyeball_centre.y;
  auto pull = [&](double amp, double cx, double cy, double sx, double sy) {
    const double ux = (x - cx) / sx, uy = (y - cy) / sy;
    const double q = ux * ux + uy * uy;
    if (q < 1.0 && amp != 0.0) {
      const double one_m = 1.0 - q;
      p.z -= amp * one_m * one_m;
      const double dbdq = -2.0 * one_m;
      p.zx -= amp * dbdq * 2.0 * ux / sx;
      p.zy -= amp * dbdq * 2.0 * uy / sy;
    }
  };
  pull(s.brow_amp, ex, ey - 11.0, 14.0, 7.0);
  pull(s.cheek_amp, ex, ey + 12.0, 16.0, 9.0);
  const double dome_r = 1.45 * s.eyeball_radius;
  pull(s.lid_dome_amp(), ex, ey, dome_r, dome_r);
  return p;
}

/// Vertical positions of the two eyelid curves at lateral coordinate x, or
/// nothing if x lies beyond the corners.
struct LidGap {
  double top, bottom;
};

inline bool lid_gap(const SceneSpec& s, double x, LidGap& out) {
  const double u = (x - s.eyeball_centre.x) / s.lid_halfwidth;
  if (u < -1.0 || u > 1.0) return false;
  const double half = 0.5 * s.aperture * (1.0 - u * u);
  out.top = s.eyeball_centre.y - half;
  out.bottom = s.eyeball_centre.y + half;
  return true;
}

/// A surface point is inside the aperture iff it lies strictly between the
/// curves (so aperture 0 is fully closed).
inline bool inside_aperture(const SceneSpec& s, double x, double y) {
  LidGap g;
  return lid_gap(s, x, g) && y > g.top && y < g.bottom;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rendering.
// ---------------------------------------------------------------------------

struct SamplePair {
  GrayImage image;
  DepthMap depth;
  SceneSpec spec;
  CameraIntrinsics camera;
};

/// Ray-casts the composite scene at the given resolution. Per pixel: the ray
/// through the pixel centre is tested against the eyeball sphere; a sphere
/// hit showing through the eyelid aperture renders as sclera/iris/pupil with
/// the analytic sphere depth, anything else as the skin heightfield (solved
/// by fixed-count fixed-point iteration). Shading is Lambertian from a single
/// point light with inverse-square falloff, quantized to 8 bits, then seeded
/// Gaussian noise is added and the result clamped to [0, 255].
inline SamplePair render(const SceneSpec& spec, int resolution) {
  if (resolution < 8) throw std::invalid_argument("render: resolution too small");
  spec.validate();
  const CameraIntrinsics cam = make_intrinsics(spec, resolution);

  SamplePair out;
  out.spec = spec;
  out.camera = cam;
  out.image.width = out.image.height = resolution;
  out.image.pixels.assign(static_cast<size_t>(resolution) * resolution, 0);
  out.depth.width = out.depth.height = resolution;
  out.depth.values.assign(out.image.pixels.size(), 0.0);

  const Vec3 c = spec.eyeball_centre;
  const double r = spec.eyeball_radius;
  const double cos_pupil = std::sqrt(1.0 - (0.5 * spec.pupil_diameter / r) *
                                               (0.5 * spec.pupil_diameter / r));
  const double cos_iris = std::sqrt(1.0 - (0.5 * spec.iris_diameter / r) *
                                              (0.5 * spec.iris_diameter / r));

  std::vector<double> shade(out.image.pixels.size());
  for (int v = 0; v < resolution; ++v) {
    for (int u = 0; u < resolution; ++u) {
      // Ray through the pixel centre, parameterized by z: (x,y) = (kx, ky) z.
      const double kx = (u - cam.cx) / cam.fx;
      const double ky = (v - cam.cy) / cam.fy;
      const Vec3 dir = Vec3{kx, ky, 1.0}.normalized();

      // Front sphere intersection.
      bool eyeball = false;
      Vec3 hit;
      const double b = dir.dot(c);
      const double disc = b * b - (c.dot(c) - r * r);
      if (disc > 0.0) {
        const double t = b - std::sqrt(disc);
        if (t > 0.0) {
          hit = dir * t;
          eyeball = detail::inside_aperture(spec, hit.x, hit.y);
        }
      }

      Vec3 p, n;
      double reflect;
      if (eyeball) {
        p = hit;
        n = (p - c) * (1.0 / r);
        const double cosg = n.dot(spec.gaze);
        reflect = cosg >= cos_pupil ? kPupilReflect
                  : cosg >= cos_iris ? kIrisReflect
                                     : kScleraReflect;
      } else {
        // Heightfield z = f(x, y) along (x,y) = (kx,ky) z; the field's slope
        // times the ray's obliquity is well under 1, so plain fixed-point
        // iteration contracts. The count is fixed for determinism.
        double z = spec.skin_base_z;
        detail::SkinPoint sp{spec.skin_base_z, 0.0, 0.0};
        for (int it = 0; it < 16; ++it) {
          sp = detail::skin_field(spec, kx * z, ky * z);
          z = sp.z;
        }
        p = {kx * z, ky * z, z};
        n = Vec3{sp.zx, sp.zy, -1.0}.normalized();
        reflect = kSkinReflect;
      }

      const Vec3 to_light = spec.light_pos - p;
      const double dist2 = to_light.dot(to_light);
      const double lambert = std::max(0.0, n.dot(to_light * (1.0 / std::sqrt(dist2))));
      shade[static_cast<size_t>(v) * resolution + u] =
          spec.albedo * reflect * lambert * spec.theta_light *
          (kLightRefDist * kLightRefDist / dist2);
      // Stored in depth-map units: back_project multiplies by s to get z.
      out.depth.values[static_cast<size_t>(v) * resolution + u] = p.z / spec.depth_scale;
    }
  }

  // Quantize, then add integer-rounded Gaussian noise, then clamp.
  Rng noise(derive_seed(spec.seed, 0xA015E));
  for (size_t i = 0; i < shade.size(); ++i) {
    const long q = std::lround(255.0 * shade[i]);
    const long nz = std::lround(spec.theta_noise * noise.gaussian());
    out.image.pixels[i] =
        static_cast<uint8_t>(std::clamp(q + nz, 0L, 255L));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ground-truth segmentation (the synthetic stand-in for an upstream
// segmentation model).
// ---------------------------------------------------------------------------

struct Segmentation {
  int resolution = 0;
  std::vector<uint8_t> pupil_mask;    // 1 where the pupil cap shows through
  std::vector<uint8_t> eyeball_mask;  // 1 where any eyeball surface shows
  std::vector<Pixel> eyelid_top;      // curve samples in image coordinates
  std::vector<Pixel> eyelid_bottom;
  Vec3 gaze;
};

inline Segmentation ground_truth_segmentation(const SceneSpec& spec, int resolution,
                                              int curve_samples = 33) {
  spec.validate();
  const CameraIntrinsics cam = make_intrinsics(spec, resolution);
  Segmentation seg;
  seg.resolution = resolution;
  seg.gaze = spec.gaze;
  seg.pupil_mask.assign(static_cast<size_t>(resolution) * resolution, 0);
  seg.eyeball_mask.assign(seg.pupil_mask.size(), 0);

  const Vec3 c = spec.eyeball_centre;
  const double r = spec.eyeball_radius;
  const double cos_pupil = std::sqrt(1.0 - (0.5 * spec.pupil_diameter / r) *
                                               (0.5 * spec.pupil_diameter / r));
  for (int v = 0; v < resolution; ++v)
    for (int u = 0; u < resolution; ++u) {
      const Vec3 dir = Vec3{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0}.normalized();
      const double b = dir.dot(c);
      const double disc = b * b - (c.dot(c) - r * r);
      if (disc <= 0.0) continue;
      const double t = b - std::sqrt(disc);
      if (t <= 0.0) continue;
      const Vec3 hit = dir * t;
      if (!detail::inside_aperture(spec, hit.x, hit.y)) continue;
      const size_t i = static_cast<size_t>(v) * resolution + u;
      seg.eyeball_mask[i] = 1;
      if (((hit - c) * (1.0 / r)).dot(spec.gaze) >= cos_pupil) seg.pupil_mask[i] = 1;
    }

  // Lid curves: sample each quadratic across the aperture, place it on the
  // eyeball surface where the sphere is underneath (else on the skin), and
  // project to image coordinates.
  for (int i = 0; i < curve_samples; ++i) {
    const double u = -1.0 + 2.0 * i / (curve_samples - 1);
    const double x = c.x + u * spec.lid_halfwidth;
    detail::LidGap gap;
    if (!detail::lid_gap(spec, x, gap)) continue;
    auto surface_z = [&](double y) {
      const double rho2 = (x - c.x) * (x - c.x) + (y - c.y) * (y - c.y);
      if (rho2 < r * r) return c.z - std::sqrt(r * r - rho2);
      return detail::skin_field(spec, x, y).z;
    };
    seg.eyelid_top.push_back(project({x, gap.top, surface_z(gap.top)}, cam));
    seg.eyelid_bottom.push_back(project({x, gap.bottom, surface_z(gap.bottom)}, cam));
  }
  return seg;
}

// ---------------------------------------------------------------------------
// Scene sampling and dataset generation.
// ---------------------------------------------------------------------------

/// Draws a randomized scene. All ranges are chosen so validate() always
/// passes: depths stay well inside [20, 90] mm.
inline SceneSpec sample_spec(uint64_t seed, const Vec3& pose = {0.0, 0.0, 0.0}) {
  Rng rng(seed);
  SceneSpec s;
  s.seed = seed;
  s.pose = pose;
  s.eyeball_centre = {pose.x + rng.uniform(-4.0, 4.0), pose.y + rng.uniform(-3.0, 3.0),
                      pose.z + rng.uniform(54.0, 64.0)};
  s.eyeball_radius = rng.uniform(11.0, 13.0);
  s.pupil_diameter = rng.uniform(2.5, 7.0);
  // Small random gaze: lateral components drawn directly, z from the unit
  // constraint (pure sqrt; no trig anywhere near the render path).
  const double gx = rng.uniform(-0.14, 0.14);
  const double gy = rng.uniform(-0.14, 0.14);
  s.gaze = {gx, gy, -std::sqrt(1.0 - gx * gx - gy * gy)};
  s.aperture = rng.uniform(7.0, 11.0);
  s.lid_halfwidth = rng.uniform(14.0, 18.0);
  s.skin_base_z = s.eyeball_centre.z + rng.uniform(6.0, 10.0);
  s.brow_amp = rng.uniform(3.0, 8.0);
  s.cheek_amp = rng.uniform(2.0, 6.0);
  s.albedo = rng.uniform(0.2, 0.9);
  s.theta_light = rng.uniform(0.8, 1.2);
  s.theta_noise = rng.uniform(0.5, 3.0);
  s.validate();
  return s;
}

inline nlohmann::json scene_to_json(const SceneSpec& s) {
  auto vec = [](const Vec3& v) { return nlohmann::json{v.x, v.y, v.z}; };
  return {{"seed", s.seed},
          {"eyeball_centre", vec(s.eyeball_centre)},
          {"eyeball_radius", s.eyeball_radius},
          {"pupil_diameter", s.pupil_diameter},
          {"iris_diameter", s.iris_diameter},
          {"gaze", vec(s.gaze)},
          {"aperture", s.aperture},
          {"lid_halfwidth", s.lid_halfwidth},
          {"skin_base_z", s.skin_base_z},
          {"brow_amp", s.brow_amp},
          {"cheek_amp", s.cheek_amp},
          {"albedo", s.albedo},
          {"theta_light", s.theta_light},
          {"theta_noise", s.theta_noise},
          {"light_pos", vec(s.light_pos)},
          {"focal_factor", s.focal_factor},
          {"depth_scale", s.depth_scale},
          {"pose", vec(s.pose)}};
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  auto vec = [&](const char* key, Vec3 fallback) {
    if (!j.contains(key)) return fallback;
    const auto& a = j.at(key);
    return Vec3{a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()};
  };
  SceneSpec s;
  s.seed = j.at("seed").get<uint64_t>();
  s.eyeball_centre = vec("eyeball_centre", s.eyeball_centre);
  s.eyeball_radius = j.value("eyeball_radius", s.eyeball_radius);
  s.pupil_diameter = j.value("pupil_diameter", s.pupil_diameter);
  s.iris_diameter = j.value("iris_diameter", s.iris_diameter);
  s.gaze = vec("gaze", s.gaze);
  s.aperture = j.value("aperture", s.aperture);
  s.lid_halfwidth = j.value("lid_halfwidth", s.lid_halfwidth);
  s.skin_base_z = j.value("skin_base_z", s.skin_base_z);
  s.brow_amp = j.value("brow_amp", s.brow_amp);
  s.cheek_amp = j.value("cheek_amp", s.cheek_amp);
  s.albedo = j.value("albedo", s.albedo);
  s.theta_light = j.value("theta_light", s.theta_light);
  s.theta_noise = j.value("theta_noise", s.theta_noise);
  s.light_pos = vec("light_pos", s.light_pos);
  s.focal_factor = j.value("focal_factor", s.focal_factor);
  s.depth_scale = j.value("depth_scale", s.depth_scale);
  s.pose = vec("pose", s.pose);
  return s;
}

inline constexpr int kDatasetFormatVersion = 1;

inline std::string sample_id(int index) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << index;
  return os.str();
}

/// Writes one rendered pair in the dataset layout:
/// {id}_img.png, {id}_depth.f32, {id}_meta.json.
inline void write_sample(const std::filesystem::path& dir, const std::string& id,
                         const SamplePair& pair, const DepthRange& range = {}) {
  write_png_gray((dir / (id + "_img.png")).string(), pair.image);
  write_depth_f32((dir / (id + "_depth.f32")).string(), pair.depth);
  nlohmann::json meta = {{"format_version", kDatasetFormatVersion},
                         {"intrinsics",
                          {{"fx", pair.camera.fx},
                           {"fy", pair.camera.fy},
                           {"cx", pair.camera.cx},
                           {"cy", pair.camera.cy},
                           {"s", pair.camera.s}}},
                         {"d_min", range.d_min},
                         {"d_max", range.d_max},
                         {"scene", scene_to_json(pair.spec)}};
  std::ofstream out(dir / (id + "_meta.json"));
  if (!out) throw std::runtime_error("cannot write metadata for sample " + id);
  out << meta.dump(2) << "\n";
}

/// Renders n randomized pairs into out_dir and writes manifest.json listing
/// ids, per-sample seeds and the seeded 70/15/15 split. Returns the manifest.
inline nlohmann::json generate_dataset(int n, uint64_t seed, int resolution,
                                       const std::string& out_dir) {
  if (n < 10) throw std::invalid_argument("generate_dataset: need at least 10 samples");
  std::filesystem::path dir(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw std::runtime_error("cannot create dataset directory: " + out_dir);

  std::vector<std::string> ids;
  std::vector<uint64_t> sample_seeds;
  for (int i = 0; i < n; ++i) {
    const uint64_t ss = derive_seed(seed, static_cast<uint64_t>(i));
    const SceneSpec spec = sample_spec(ss);
    write_sample(dir, sample_id(i), render(spec, resolution));
    ids.push_back(sample_id(i));
    sample_seeds.push_back(ss);
  }

  const SplitIndices split = split_dataset(n, seed);
  auto names = [&](const std::vector<int>& idx) {
    std::vector<std::string> v;
    for (int i : idx) v.push_back(ids[static_cast<size_t>(i)]);
    return v;
  };
  nlohmann::json manifest = {{"format_version", kDatasetFormatVersion},
                             {"dataset_seed", seed},
                             {"resolution", resolution},
                             {"ids", ids},
                             {"sample_seeds", sample_seeds},
                             {"split",
                              {{"train", names(split.train)},
                               {"val", names(split.val)},
                               {"test", names(split.test)}}}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + out_dir);
  out << manifest.dump(2) << "\n";
  return manifest;
}

// ---------------------------------------------------------------------------
// Frame streams (for the measurement pipeline).
// ---------------------------------------------------------------------------

struct StreamConfig {
  int frames = 120;
  double fps = 10.0;
  double blink_period = 3.0;    // seconds between blink onsets
  double blink_duration = 0.4;  // seconds per blink
  double gaze_amp = 0.12;       // peak lateral gaze component after the lead
  double gaze_period = 4.0;     // seconds per triangle-wave gaze cycle
  double straight_lead = 6.0;   // seconds of straight gaze at the start
};

struct FrameStream {
  double fps = 0.0;
  std::vector<SamplePair> frames;
};

/// Per-frame scene derived from the base spec: blinks squeeze the aperture
/// with a quadratic envelope, gaze sweeps laterally as a triangle wave after
/// an initial straight-gaze lead, and each frame gets its own noise stream.
inline SceneSpec stream_frame_spec(const SceneSpec& base, const StreamConfig& cfg,
                                   int frame) {
  SceneSpec s = base;
  s.seed = derive_seed(base.seed, 1000 + static_cast<uint64_t>(frame));
  const double t = frame / cfg.fps;
  if (cfg.blink_period > 0.0 && cfg.blink_duration > 0.0) {
    const double phase = t - cfg.blink_period * std::floor(t / cfg.blink_period);
    if (phase < cfg.blink_duration) {
      const double x = phase / cfg.blink_duration;  // 0..1 across the blink
      s.aperture *= (2.0 * x - 1.0) * (2.0 * x - 1.0);  // dips to 0 mid-blink
    }
  }
  if (t >= cfg.straight_lead && cfg.gaze_amp > 0.0 && cfg.gaze_period > 0.0) {
    const double frac = (t - cfg.straight_lead) / cfg.gaze_period;
    const double saw = frac - std::floor(frac);
    const double tri = saw < 0.5 ? 4.0 * saw - 1.0 : 3.0 - 4.0 * saw;  // [-1, 1]
    const double gx = cfg.gaze_amp * tri;
    s.gaze = {gx, 0.0, -std::sqrt(1.0 - gx * gx)};
  }
  return s;
}

inline FrameStream render_stream(const SceneSpec& base, const StreamConfig& cfg,
                                 int resolution) {
  if (cfg.frames < 1 || cfg.fps <= 0.0)
    throw std::invalid_argument("render_stream: frames and fps must be positive");
  FrameStream st;
  st.fps = cfg.fps;
  for (int f = 0; f < cfg.frames; ++f)
    st.frames.push_back(render(stream_frame_spec(base, cfg, f), resolution));
  return st;
}

/// Writes a stream in the dataset layout plus fps in the manifest.
inline nlohmann::json save_stream(const FrameStream& st, const std::string& out_dir) {
  std::filesystem::path dir(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw std::runtime_error("cannot create stream directory: " + out_dir);
  std::vector<std::string> ids;
  for (size_t f = 0; f < st.frames.size(); ++f) {
    ids.push_back(sample_id(static_cast<int>(f)));
    write_sample(dir, ids.back(), st.frames[f]);
  }
  nlohmann::json manifest = {{"format_version", kDatasetFormatVersion},
                             {"resolution", st.frames.front().image.width},
                             {"fps", st.fps},
                             {"ids", ids}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + out_dir);
  out << manifest.dump(2) << "\n";
  return manifest;
}

// ---------------------------------------------------------------------------
// Loading.
// ---------------------------------------------------------------------------

struct LoadedSample {
  std::string id;
  GrayImage image;
  DepthMap depth;
  SceneSpec spec;
  CameraIntrinsics camera;
  DepthRange range;
};

struct LoadedDataset {
  nlohmann::json manifest;
  int resolution = 0;
  double fps = 0.0;  // nonzero only for streams
  std::vector<LoadedSample> samples;

  const LoadedSample& by_id(const std::string& id) const {
    for (const auto& s : samples)
      if (s.id == id) return s;
    throw std::invalid_argument("sample id not in dataset: " + id);
  }
};

inline LoadedSample load_sample(const std::filesystem::path& dir, const std::string& id,
                                int resolution) {
  LoadedSample s;
  s.id = id;
  s.image = read_png_gray((dir / (id + "_img.png")).string());
  if (s.image.width != resolution || s.image.height != resolution)
    throw std::runtime_error("sample " + id + " image does not match manifest resolution");
  s.depth = read_depth_f32((dir / (id + "_depth.f32")).string(), resolution, resolution);
  std::ifstream mf(dir / (id + "_meta.json"));
  if (!mf) throw std::runtime_error("missing metadata for sample " + id);
  const nlohmann::json meta = nlohmann::json::parse(mf);
  if (meta.at("format_version").get<int>() != kDatasetFormatVersion)
    throw std::runtime_error("unsupported sample format version for " + id);
  const auto& in = meta.at("intrinsics");
  s.camera = {in.at("fx").get<double>(), in.at("fy").get<double>(), in.at("cx").get<double>(),
              in.at("cy").get<double>(), in.at("s").get<double>()};
  s.range.d_min = meta.at("d_min").get<double>();
  s.range.d_max = meta.at("d_max").get<double>();
  s.spec = scene_from_json(meta.at("scene"));
  return s;
}

inline LoadedDataset load_dataset(const std::string& dir_path) {
  std::filesystem::path dir(dir_path);
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("missing manifest.json in " + dir_path);
  LoadedDataset ds;
  ds.manifest = nlohmann::json::parse(mf);
  if (ds.manifest.at("format_version").get<int>() != kDatasetFormatVersion)
    throw std::runtime_error("unsupported dataset format version in " + dir_path);
  ds.resolution = ds.manifest.at("resolution").get<int>();
  ds.fps = ds.manifest.value("fps", 0.0);
  for (const auto& id : ds.manifest.at("ids"))
    ds.samples.push_back(load_sample(dir, id.get<std::string>(), ds.resolution));
  return ds;
}

/// Converts samples to normalized training pairs: image / 255, depth mapped
/// through the sample's stored range (clamped to [0, 1]).
inline std::vector<TrainSample> to_train_samples(const LoadedDataset& ds,
                                                 const std::vector<std::string>& ids) {
  std::vector<TrainSample> out;
  for (const auto& id : ids) {
    const LoadedSample& s = ds.by_id(id);
    TrainSample t;
    t.image.reserve(s.image.pixels.size());
    t.depth_norm.reserve(s.image.pixels.size());
    for (uint8_t p : s.image.pixels) t.image.push_back(p / 255.0);
    for (double d : s.depth.values)
      t.depth_norm.push_back(std::clamp(s.range.normalize(d), 0.0, 1.0));
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<std::string> manifest_split_ids(const nlohmann::json& manifest,
                                                   const std::string& which) {
  std::vector<std::string> ids;
  for (const auto& id : manifest.at("split").at(which)) ids.push_back(id.get<std::string>());
  return ids;
}

}  // namespace periscope
