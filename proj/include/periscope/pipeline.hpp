#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "periscope/geometry.hpp"
#include "periscope/image.hpp"
#include "periscope/synthgen.hpp"

namespace periscope {

// ---------------------------------------------------------------------------
// Segmentation provider: the upstream eye-feature interface. Real headsets
// ship this behind a proprietary API; the synthetic implementation answers
// from the generator's ground truth.
// ---------------------------------------------------------------------------

class SegmentationProvider {
 public:
  struct EyelidCurves {
    std::vector<Pixel> top;
    std::vector<Pixel> bottom;
  };

  virtual ~SegmentationProvider() = default;

  /// Sampled eyelid curves in image coordinates, at least 5 points each.
  virtual EyelidCurves eyelid_outline(std::size_t frame) const = 0;
  /// Unit gaze direction, pointing out of the eye toward the camera (z < 0
  /// when looking straight at it).
  virtual Vec3 gaze(std::size_t frame) const = 0;
  /// Row-major 0/1 pupil mask at the stream resolution.
  virtual std::vector<uint8_t> pupil_mask(std::size_t frame) const = 0;
};

/// Ground-truth provider for generated streams. All queries are pure
/// functions of the stored frame specs, so concurrent reads are safe.
class SyntheticSegmentationProvider final : public SegmentationProvider {
 public:
  explicit SyntheticSegmentationProvider(const FrameStream& stream, int curve_samples = 33)
      : curve_samples_(curve_samples) {
    if (stream.frames.empty())
      throw std::invalid_argument("segmentation provider needs a non-empty stream");
    resolution_ = stream.frames.front().image.width;
    specs_.reserve(stream.frames.size());
    for (const auto& f : stream.frames) specs_.push_back(f.spec);
  }

  EyelidCurves eyelid_outline(std::size_t frame) const override {
    Segmentation seg = ground_truth_segmentation(spec_at(frame), resolution_, curve_samples_);
    return {std::move(seg.eyelid_top), std::move(seg.eyelid_bottom)};
  }

  Vec3 gaze(std::size_t frame) const override { return spec_at(frame).gaze; }

  std::vector<uint8_t> pupil_mask(std::size_t frame) const override {
    return ground_truth_segmentation(spec_at(frame), resolution_, curve_samples_).pupil_mask;
  }

 private:
  const SceneSpec& spec_at(std::size_t frame) const {
    if (frame >= specs_.size())
      throw std::out_of_range("provider queried past the end of the stream");
    return specs_[frame];
  }

  std::vector<SceneSpec> specs_;
  int resolution_ = 0;
  int curve_samples_ = 33;
};

// ---------------------------------------------------------------------------
// Frame gating.
// ---------------------------------------------------------------------------

enum class OutlierMode { kMad, kTwoSigma };

struct GateConfig {
  double gaze_epsilon_deg = 5.0;   // max angle between gaze and the camera axis
  double openness_tolerance = 0.95;  // fraction of the peak openness required
  int capacity = 8;                // frames collected per measurement
  double mad_cutoff = 3.5;         // modified z-score exclusion limit
  OutlierMode outlier_mode = OutlierMode::kMad;

  void validate() const {
    if (gaze_epsilon_deg < 0.0)
      throw std::invalid_argument("gate: gaze epsilon must be non-negative");
    if (openness_tolerance <= 0.0 || openness_tolerance > 1.0)
      throw std::invalid_argument("gate: openness tolerance must lie in (0, 1]");
    if (capacity < 3) throw std::invalid_argument("gate: capacity must be at least 3");
    if (mad_cutoff <= 0.0) throw std::invalid_argument("gate: MAD cutoff must be positive");
  }
};

namespace detail {

inline double curve_midpoint_y(const std::vector<Pixel>& curve) {
  if (curve.size() < 5)
    throw std::runtime_error("eyelid curve has fewer than 5 samples");
  return curve[curve.size() / 2].v;
}

}  // namespace detail

/// Vertical lid separation at the curve midpoints, in pixels. Image y grows
/// downward, so an open eye gives a positive value and a closed one zero.
inline double eye_openness_px(const SegmentationProvider& provider, std::size_t frame) {
  const auto curves = provider.eyelid_outline(frame);
  return detail::curve_midpoint_y(curves.bottom) - detail::curve_midpoint_y(curves.top);
}

/// Angle in degrees between a unit gaze vector and the straight-at-camera
/// direction (0, 0, -1).
inline double gaze_angle_deg(const Vec3& gaze) {
  if (std::abs(gaze.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("gaze must be a unit vector");
  const double c = std::clamp(-gaze.z, -1.0, 1.0);
  return std::acos(c) * 180.0 / 3.14159265358979323846;
}

/// Openness threshold from the stream's first six seconds: the largest
/// openness observed on gaze-straight frames, scaled by the tolerance.
inline double determine_threshold(const FrameStream& stream,
                                  const SegmentationProvider& provider,
                                  const GateConfig& config = {}) {
  config.validate();
  const auto window = static_cast<std::size_t>(std::llround(6.0 * stream.fps));
  if (window < 1 || stream.frames.size() < window)
    throw std::invalid_argument("stream shorter than the six-second calibration window");
  double best = 0.0;
  bool found = false;
  for (std::size_t f = 0; f < window; ++f) {
    if (gaze_angle_deg(provider.gaze(f)) > config.gaze_epsilon_deg) continue;
    best = found ? std::max(best, eye_openness_px(provider, f)) : eye_openness_px(provider, f);
    found = true;
  }
  if (!found)
    throw std::runtime_error("no gaze-straight frame in the six-second calibration window");
  return config.openness_tolerance * best;
}

struct GatedFrames {
  std::vector<std::size_t> indices;  // stream positions, ascending
  std::vector<GrayImage> frames;     // the corresponding images
  bool complete = false;             // capacity was reached
};

/// Walks the stream in order and keeps frames that are both open (openness at
/// or above the threshold) and gaze-straight, stopping at capacity. A stream
/// that runs out first yields a partial collection with `complete` unset.
inline GatedFrames gate_and_collect(const FrameStream& stream,
                                    const SegmentationProvider& provider, double threshold,
                                    const GateConfig& config = {}) {
  config.validate();
  GatedFrames out;
  for (std::size_t f = 0; f < stream.frames.size(); ++f) {
    if (gaze_angle_deg(provider.gaze(f)) > config.gaze_epsilon_deg) continue;
    if (eye_openness_px(provider, f) < threshold) continue;
    out.indices.push_back(f);
    out.frames.push_back(stream.frames[f].image);
    if (static_cast<int>(out.frames.size()) == config.capacity) {
      out.complete = true;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Robust multi-map aggregation.
// ---------------------------------------------------------------------------

namespace detail {

inline double median_inplace(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

struct AggregationStats {
  long long n_outliers_excluded = 0;
};

/// Per-pixel robust mean across depth maps. The default mode drops values
/// whose modified z-score against the per-pixel median exceeds the cutoff
/// (with a zero MAD, only values equal to the median survive); the
/// alternative drops values beyond two standard deviations of the per-pixel
/// mean. Survivors are averaged.
inline DepthMap aggregate_depths(const std::vector<DepthMap>& maps,
                                 const GateConfig& config = {},
                                 AggregationStats* stats = nullptr) {
  config.validate();
  if (maps.size() < 3)
    throw std::invalid_argument("aggregation needs at least 3 depth maps");
  const int w = maps.front().width, h = maps.front().height;
  for (const auto& m : maps)
    if (m.width != w || m.height != h ||
        m.values.size() != static_cast<std::size_t>(w) * h)
      throw std::invalid_argument("aggregation: depth map dimensions differ");

  DepthMap out;
  out.width = w;
  out.height = h;
  out.values.resize(static_cast<std::size_t>(w) * h);
  long long excluded = 0;

  std::vector<double> vals(maps.size()), work(maps.size());
  for (std::size_t p = 0; p < out.values.size(); ++p) {
    for (std::size_t m = 0; m < maps.size(); ++m) vals[m] = maps[m].values[p];

    double sum = 0.0;
    int kept = 0;
    if (config.outlier_mode == OutlierMode::kMad) {
      work = vals;
      const double med = detail::median_inplace(work);
      for (std::size_t m = 0; m < maps.size(); ++m) work[m] = std::abs(vals[m] - med);
      const double mad = detail::median_inplace(work);
      for (double v : vals) {
        const bool keep = mad == 0.0 ? v == med
                                     : std::abs(0.6745 * (v - med) / mad) <= config.mad_cutoff;
        if (keep) {
          sum += v;
          ++kept;
        }
      }
    } else {
      const double mean =
          std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - mean) * (v - mean);
      const double sigma = std::sqrt(var / static_cast<double>(vals.size()));
      for (double v : vals) {
        if (std::abs(v - mean) <= 2.0 * sigma) {
          sum += v;
          ++kept;
        }
      }
    }
    excluded += static_cast<long long>(maps.size()) - kept;
    out.values[p] = sum / kept;  // the median (or mean) always survives, kept >= 1
  }
  if (stats) stats->n_outliers_excluded = excluded;
  return out;
}

// ---------------------------------------------------------------------------
// Metric back-projection over pixel lists.
// ---------------------------------------------------------------------------

struct PixelCoord {
  int x = 0, y = 0;
};

/// Lifts the listed pixels through the depth map into camera space. Pixels
/// with non-positive depth come back disengaged; out-of-bounds pixels are a
/// caller error.
inline std::vector<std::optional<Vec3>> back_project(const DepthMap& depth,
                                                     const CameraIntrinsics& k,
                                                     const std::vector<PixelCoord>& pixels) {
  k.validate(depth.width, depth.height);
  std::vector<std::optional<Vec3>> out;
  out.reserve(pixels.size());
  for (const PixelCoord& p : pixels) {
    if (p.x < 0 || p.x >= depth.width || p.y < 0 || p.y >= depth.height)
      throw std::invalid_argument("back_project: pixel outside the depth map");
    const double d = depth.at(p.x, p.y);
    if (d <= 0.0)
      out.push_back(std::nullopt);
    else
      out.push_back(back_project(p.x, p.y, d, k));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pupil measurement.
// ---------------------------------------------------------------------------

struct PupilMeasurement {
  double diameter_mm = 0.0;
  double fit_rms_mm = 0.0;     // RMS distance of boundary points to the circle
  int n_boundary_points = 0;
};

namespace detail {

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
/// Eigenvalues come back ascending with matching eigenvector columns.
inline void symmetric_eigen3(std::array<std::array<double, 3>, 3> a,
                             std::array<double, 3>& eigenvalues,
                             std::array<std::array<double, 3>, 3>& eigenvectors) {
  std::array<std::array<double, 3>, 3> v = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
    if (off == 0.0) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int i = 0; i < 3; ++i) {
          const double aip = a[i][p], aiq = a[i][q];
          a[i][p] = c * aip - s * aiq;
          a[i][q] = s * aip + c * aiq;
        }
        for (int i = 0; i < 3; ++i) {
          const double api = a[p][i], aqi = a[q][i];
          a[p][i] = c * api - s * aqi;
          a[q][i] = s * api + c * aqi;
        }
        for (int i = 0; i < 3; ++i) {
          const double vip = v[i][p], viq = v[i][q];
          v[i][p] = c * vip - s * viq;
          v[i][q] = s * vip + c * viq;
        }
      }
  }
  std::array<int, 3> order = {0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int i, int j) { return a[i][i] < a[j][j]; });
  for (int k = 0; k < 3; ++k) {
    eigenvalues[k] = a[order[k]][order[k]];
    for (int i = 0; i < 3; ++i) eigenvectors[i][k] = v[i][order[k]];
  }
}

/// Solves a 3x3 linear system by Gaussian elimination with partial pivoting.
/// Returns false if the system is (numerically) singular.
inline bool solve3(std::array<std::array<double, 4>, 3> m, std::array<double, 3>& x) {
  for (int col = 0; col < 3; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
    if (std::abs(m[pivot][col]) < 1e-12) return false;
    std::swap(m[col], m[pivot]);
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double f = m[r][col] / m[col][col];
      for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
    }
  }
  for (int i = 0; i < 3; ++i) x[i] = m[i][3] / m[i][i];
  return true;
}

/// Set pixels with an unset (or out-of-image) 8-neighbour.
inline std::vector<PixelCoord> mask_boundary(const std::vector<uint8_t>& mask, int w, int h) {
  std::vector<PixelCoord> boundary;
  auto set = [&](int x, int y) {
    return x >= 0 && x < w && y >= 0 && y < h &&
           mask[static_cast<std::size_t>(y) * w + x] != 0;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!set(x, y)) continue;
      bool edge = false;
      for (int dy = -1; dy <= 1 && !edge; ++dy)
        for (int dx = -1; dx <= 1 && !edge; ++dx)
          if ((dx != 0 || dy != 0) && !set(x + dx, y + dy)) edge = true;
      if (edge) boundary.push_back({x, y});
    }
  return boundary;
}

}  // namespace detail

/// Pupil diameter from a depth map and a pupil mask: the mask's boundary
/// pixels are lifted to camera space, flattened onto their least-squares
/// plane, and fitted with an algebraic least-squares circle.
///
/// Boundary pixels are the outermost *set* pixels, so their centres sit about
/// half a pixel inside the physical edge; the radius is widened by half the
/// mean pixel footprint to centre the estimate on the true boundary.
inline PupilMeasurement measure_pupil(const DepthMap& depth,
                                      const std::vector<uint8_t>& pupil_mask,
                                      const CameraIntrinsics& k) {
  const int w = depth.width, h = depth.height;
  if (pupil_mask.size() != static_cast<std::size_t>(w) * h)
    throw std::invalid_argument("measure_pupil: mask does not match the depth map");
  const auto n_set = std::count_if(pupil_mask.begin(), pupil_mask.end(),
                                   [](uint8_t m) { return m != 0; });
  if (n_set < 20)
    throw std::invalid_argument("measure_pupil: mask has fewer than 20 pixels");

  const std::vector<PixelCoord> boundary = detail::mask_boundary(pupil_mask, w, h);
  std::vector<Vec3> pts;
  for (const auto& lifted : back_project(depth, k, boundary))
    if (lifted) pts.push_back(*lifted);
  if (pts.size() < 8)
    throw std::runtime_error("measure_pupil: too few valid boundary points");

  // Total-least-squares plane through the boundary points.
  Vec3 centroid{0, 0, 0};
  for (const Vec3& p : pts) centroid = centroid + p;
  centroid = centroid * (1.0 / static_cast<double>(pts.size()));
  std::array<std::array<double, 3>, 3> cov = {};
  for (const Vec3& p : pts) {
    const Vec3 d = p - centroid;
    const double row[3] = {d.x, d.y, d.z};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) cov[i][j] += row[i] * row[j];
  }
  std::array<double, 3> eval;
  std::array<std::array<double, 3>, 3> evec;
  detail::symmetric_eigen3(cov, eval, evec);
  if (eval[1] <= 1e-10 * std::max(eval[2], 1e-300))
    throw std::runtime_error("measure_pupil: boundary is degenerate (collinear points)");
  const Vec3 e1{evec[0][2], evec[1][2], evec[2][2]};  // widest in-plane direction
  const Vec3 e2{evec[0][1], evec[1][1], evec[2][1]};

  // Plane coordinates (projection onto the plane drops the normal component).
  std::vector<double> px(pts.size()), py(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 d = pts[i] - centroid;
    px[i] = d.dot(e1);
    py[i] = d.dot(e2);
  }

  // Algebraic circle fit: x^2 + y^2 + A x + B y + C = 0 in least squares.
  double sxx = 0, sxy = 0, syy = 0, sx = 0, sy = 0, sxz = 0, syz = 0, sz = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double z = px[i] * px[i] + py[i] * py[i];
    sxx += px[i] * px[i];
    sxy += px[i] * py[i];
    syy += py[i] * py[i];
    sx += px[i];
    sy += py[i];
    sxz += px[i] * z;
    syz += py[i] * z;
    sz += z;
  }
  const double n = static_cast<double>(pts.size());
  std::array<double, 3> abc;
  if (!detail::solve3({{{sxx, sxy, sx, -sxz}, {sxy, syy, sy, -syz}, {sx, sy, n, -sz}}}, abc))
    throw std::runtime_error("measure_pupil: boundary is degenerate (collinear points)");
  const double ccx = -0.5 * abc[0], ccy = -0.5 * abc[1];
  const double r2 = ccx * ccx + ccy * ccy - abc[2];
  if (!(r2 > 0.0))
    throw std::runtime_error("measure_pupil: circle fit failed on the boundary points");
  const double radius = std::sqrt(r2);

  double rss = 0.0, mean_depth = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double dist = std::hypot(px[i] - ccx, py[i] - ccy);
    rss += (dist - radius) * (dist - radius);
    mean_depth += pts[i].z;
  }
  mean_depth /= n;

  PupilMeasurement out;
  out.n_boundary_points = static_cast<int>(pts.size());
  out.fit_rms_mm = std::sqrt(rss / n);
  out.diameter_mm = 2.0 * (radius + 0.5 * pixel_footprint_mm(mean_depth, k));
  if (!(out.diameter_mm > 0.0) || out.diameter_mm >= 12.0)
    throw std::runtime_error("measure_pupil: implausible diameter " +
                             std::to_string(out.diameter_mm) + " mm");
  return out;
}

/// Mean absolute difference between two depth maps over a region mask.
inline double masked_mae(const DepthMap& a, const DepthMap& b,
                         const std::vector<uint8_t>& mask) {
  if (a.width != b.width || a.height != b.height || a.values.size() != mask.size() ||
      b.values.size() != mask.size())
    throw std::invalid_argument("masked_mae: dimensions do not match");
  double sum = 0.0;
  long long count = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == 0) continue;
    sum += std::abs(a.values[i] - b.values[i]);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("masked_mae: empty region mask");
  return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Corneal refraction oracle: how much smaller/larger the pupil *looks* when
// viewed off-axis through the cornea.
// ---------------------------------------------------------------------------

struct RefractionResult {
  double observed_mm = 0.0;
  double error_pct = 0.0;  // (observed - true) / true * 100
};

namespace detail {

struct Vec2 {
  double x = 0.0, z = 0.0;
};

/// Refracts the ray from P through the corneal sphere point at polar angle
/// psi (sphere centre (0, -R), vertex at the origin), from index eta into
/// air. Returns the surface point and exit direction, or nothing when the
/// ray misses the surface from inside or is totally internally reflected.
struct SurfaceExit {
  Vec2 point;
  Vec2 dir;
};

inline std::optional<SurfaceExit> cornea_exit(const Vec2& p, double psi, double eta,
                                              double radius) {
  const Vec2 centre{0.0, -radius};
  const Vec2 s{centre.x + radius * std::sin(psi), centre.z + radius * std::cos(psi)};
  Vec2 d{s.x - p.x, s.z - p.z};
  const double dn = std::sqrt(d.x * d.x + d.z * d.z);
  if (dn == 0.0) return std::nullopt;
  d = {d.x / dn, d.z / dn};
  const Vec2 nrm{(s.x - centre.x) / radius, (s.z - centre.z) / radius};
  const double cosi = d.x * nrm.x + d.z * nrm.z;
  if (cosi <= 0.0) return std::nullopt;
  const double k = 1.0 - eta * eta * (1.0 - cosi * cosi);
  if (k < 0.0) return std::nullopt;  // total internal reflection
  Vec2 t{eta * d.x + (std::sqrt(k) - eta * cosi) * nrm.x,
         eta * d.z + (std::sqrt(k) - eta * cosi) * nrm.z};
  const double tn = std::sqrt(t.x * t.x + t.z * t.z);
  return SurfaceExit{s, {t.x / tn, t.z / tn}};
}

/// Lateral offset of the refracted ray from P that leaves the cornea exactly
/// along +z (a distant frontal camera). Found by scanning the surface angle
/// for a sign change of the exit direction's x component, then bisecting.
inline std::optional<double> frontal_exit_offset(const Vec2& p, double eta, double radius) {
  auto exit_x = [&](double psi) -> std::optional<double> {
    const auto e = cornea_exit(p, psi, eta, radius);
    if (!e) return std::nullopt;
    return e->dir.x;
  };
  constexpr int kScan = 3000;
  std::optional<double> prev_psi, prev_x;
  for (int i = 0; i < kScan; ++i) {
    const double psi = -1.5 + 3.0 * i / (kScan - 1);
    const auto x = exit_x(psi);
    if (!x) {
      prev_psi.reset();
      prev_x.reset();
      continue;
    }
    if (prev_x && *prev_x * *x <= 0.0) {
      double a = *prev_psi, b = psi;
      for (int it = 0; it < 100; ++it) {
        const double m = 0.5 * (a + b);
        const auto vm = exit_x(m), va = exit_x(a);
        if (!vm || !va) return std::nullopt;
        if (*va * *vm <= 0.0)
          b = m;
        else
          a = m;
      }
      const auto e = cornea_exit(p, 0.5 * (a + b), eta, radius);
      if (!e) return std::nullopt;
      return e->point.x;  // the exit ray runs along +z from here
    }
    prev_psi = psi;
    prev_x = x;
  }
  return std::nullopt;
}

}  // namespace detail

/// Apparent pupil size under corneal refraction, in the meridional plane.
///
/// The eye rotates by the viewing angle, carrying the pupil disc with it; the
/// two pupil edge points refract at the spherical corneal surface (Snell's
/// law, eye medium into air) and a distant frontal camera sees the parallel
/// exit rays. The frontal apparent width divided by the perspective
/// foreshortening cos(angle) gives the observed size, normalized so the
/// head-on view reports the true diameter exactly.
inline RefractionResult refraction_apparent_size(double view_angle_deg,
                                                 double cornea_radius_mm = 8.0,
                                                 double chamber_depth_mm = 2.7,
                                                 double refractive_index = 1.35,
                                                 double true_diameter_mm = 4.0) {
  if (view_angle_deg < 0.0 || view_angle_deg > 60.0)
    throw std::invalid_argument("refraction: view angle must lie in [0, 60] degrees");
  if (cornea_radius_mm <= 0.0 || chamber_depth_mm <= 0.0 || true_diameter_mm <= 0.0 ||
      refractive_index < 1.0)
    throw std::invalid_argument("refraction: geometry and index must be physical");

  const double r = cornea_radius_mm, hd = chamber_depth_mm, d = true_diameter_mm;
  auto apparent = [&](double phi) {
    const double cp = std::cos(phi), sp = std::sin(phi);
    const detail::Vec2 edge_pos{+0.5 * d * cp, -hd - 0.5 * d * sp};
    const detail::Vec2 edge_neg{-0.5 * d * cp, -hd + 0.5 * d * sp};
    const auto xp = detail::frontal_exit_offset(edge_pos, refractive_index, r);
    const auto xm = detail::frontal_exit_offset(edge_neg, refractive_index, r);
    if (!xp || !xm)
      throw std::runtime_error(
          "refraction: no refracted ray reaches a frontal camera (total internal "
          "reflection or geometry out of range)");
    return (*xp - *xm) / cp;
  };

  const double phi = view_angle_deg * 3.14159265358979323846 / 180.0;
  const double base = apparent(0.0);
  RefractionResult out;
  out.observed_mm = d * apparent(phi) / base;
  out.error_pct = (out.observed_mm - d) / d * 100.0;
  return out;
}

}  // namespace periscope
