#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "periscope/image.hpp"
#include "periscope/synthgen.hpp"

namespace periscope {

// ---------------------------------------------------------------------------
// Block-average image fidelity. Comparing per-block means instead of raw
// pixels makes the score insensitive to zero-mean sensor noise and to any
// within-block pixel permutation.
// ---------------------------------------------------------------------------

/// Mean pixel value of each cell of an n-by-n grid over the image, row-major.
inline std::vector<double> block_averages(const GrayImage& img, int n) {
  if (n < 1) throw std::invalid_argument("block_averages: grid size must be positive");
  if (img.width < 1 || img.height < 1 ||
      img.pixels.size() != static_cast<size_t>(img.width) * static_cast<size_t>(img.height))
    throw std::invalid_argument("block_averages: inconsistent image dimensions");
  if (img.width % n != 0 || img.height % n != 0)
    throw std::invalid_argument("block_averages: image dimensions not divisible by grid");
  const int bw = img.width / n, bh = img.height / n;
  std::vector<double> avg(static_cast<size_t>(n) * n, 0.0);
  for (int by = 0; by < n; ++by)
    for (int bx = 0; bx < n; ++bx) {
      double sum = 0.0;
      for (int y = by * bh; y < (by + 1) * bh; ++y)
        for (int x = bx * bw; x < (bx + 1) * bw; ++x) sum += img.at(x, y);
      avg[static_cast<size_t>(by) * n + bx] = sum / (static_cast<double>(bw) * bh);
    }
  return avg;
}

/// Mean absolute difference of block averages, in pixel-value units.
inline double mae_total(const GrayImage& real, const GrayImage& synth, int n) {
  if (real.width != synth.width || real.height != synth.height)
    throw std::invalid_argument("mae_total: image dimensions differ");
  const std::vector<double> a = block_averages(real, n);
  const std::vector<double> b = block_averages(synth, n);
  double sum = 0.0;
  for (size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
  return sum / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// Scene-parameter calibration: tune (theta_noise, theta_light) so a render
// matches a target image under the block-MAE score.
// ---------------------------------------------------------------------------

struct CalibConfig {
  int block_grid = 8;            // n-by-n block grid for the score
  double alpha = 5e-4;           // learning rate of the descent update
  double mae_threshold = 1.275;  // stop below this score (0.5% of 0..255)
  int max_steps = 100;           // hard iteration cap
  double fd_step = 0.01;         // finite-difference probe, fraction of |theta|

  void validate() const {
    if (block_grid < 1) throw std::invalid_argument("calibrate: block grid must be positive");
    if (alpha <= 0.0) throw std::invalid_argument("calibrate: alpha must be positive");
    if (max_steps < 1) throw std::invalid_argument("calibrate: max_steps must be >= 1");
    if (fd_step <= 0.0) throw std::invalid_argument("calibrate: fd_step must be positive");
    if (mae_threshold < 0.0)
      throw std::invalid_argument("calibrate: mae_threshold must be non-negative");
  }
};

struct CalibStep {
  int step = 0;
  double theta_noise = 0.0;
  double theta_light = 0.0;
  double mae = 0.0;
};

struct CalibResult {
  SceneSpec spec;                // parameters of the best score seen
  std::vector<CalibStep> trace;  // one entry per evaluated step
  bool converged = false;        // score dropped below the threshold
  bool diverged = false;         // halted by the rising-score guard
  std::string diagnostic;        // non-empty when diverged
  int best_step = 0;
  double best_mae = 0.0;
  double best_max_block_error = 0.0;  // worst single block at the best step
};

namespace detail {

/// Largest absolute block-average difference (the per-block counterpart of
/// the mean score; both are reported).
inline double max_block_error(const GrayImage& a, const GrayImage& b, int n) {
  const std::vector<double> ba = block_averages(a, n);
  const std::vector<double> bb = block_averages(b, n);
  double worst = 0.0;
  for (size_t i = 0; i < ba.size(); ++i) worst = std::max(worst, std::abs(ba[i] - bb[i]));
  return worst;
}

}  // namespace detail

/// Gradient-descent fit of (theta_noise, theta_light) to a target image.
///
/// The renderer is not differentiable, so the gradient of the block-MAE score
/// is estimated by central finite differences, four renders per step. The
/// noise seed is held fixed throughout so the score is a deterministic
/// function of theta and the stopping rule is well-posed: theta_noise then
/// acts through the noise amplitude, not through resampling jitter.
///
/// The two parameters live on different scales (noise is a pixel-count std,
/// light an intensity multiplier), so each gets a learning rate and probe
/// step proportional to its own initial magnitude.
///
/// Stops when the score falls below the threshold or after max_steps; if the
/// score rises for ten consecutive steps the run is declared divergent and
/// halted. In every case the returned spec carries the best parameters seen,
/// so the final score never exceeds the initial one.
inline CalibResult calibrate(const GrayImage& target, const SceneSpec& spec0,
                             const CalibConfig& config = {}) {
  config.validate();
  spec0.validate();
  if (target.width != target.height)
    throw std::invalid_argument("calibrate: target image must be square");
  if (target.width % config.block_grid != 0)
    throw std::invalid_argument("calibrate: target dimensions not divisible by block grid");
  const int resolution = target.width;

  auto score = [&](double noise, double light) {
    SceneSpec s = spec0;  // same seed every render: deterministic score
    s.theta_noise = std::max(0.0, noise);
    s.theta_light = std::max(0.0, light);
    return mae_total(target, render(s, resolution).image, config.block_grid);
  };

  // Scale anchors for per-parameter probe and step sizes.
  const double scale_noise = std::max(std::abs(spec0.theta_noise), 0.1);
  const double scale_light = std::max(std::abs(spec0.theta_light), 0.1);

  CalibResult result;
  double noise = spec0.theta_noise;
  double light = spec0.theta_light;
  double best = std::numeric_limits<double>::infinity();
  int rising = 0;

  for (int step = 0; step < config.max_steps; ++step) {
    const double mae = score(noise, light);
    result.trace.push_back({step, noise, light, mae});
    if (mae < best) {
      best = mae;
      result.best_step = step;
      result.spec = spec0;
      result.spec.theta_noise = std::max(0.0, noise);
      result.spec.theta_light = std::max(0.0, light);
    }
    if (mae < config.mae_threshold) {
      result.converged = true;
      break;
    }
    if (step > 0 && mae > result.trace[static_cast<size_t>(step) - 1].mae) {
      if (++rising >= 10) {
        result.diverged = true;
        result.diagnostic = "score rose for 10 consecutive steps (step " +
                            std::to_string(step) + "); returning best parameters seen";
        break;
      }
    } else {
      rising = 0;
    }

    const double h_noise = config.fd_step * scale_noise;
    const double h_light = config.fd_step * scale_light;
    const double g_noise = (score(noise + h_noise, light) - score(noise - h_noise, light)) /
                           (2.0 * h_noise);
    const double g_light = (score(noise, light + h_light) - score(noise, light - h_light)) /
                           (2.0 * h_light);
    noise = std::max(0.0, noise - config.alpha * scale_noise * scale_noise * g_noise);
    light = std::max(0.0, light - config.alpha * scale_light * scale_light * g_light);
  }

  result.best_mae = best;
  result.best_max_block_error =
      detail::max_block_error(target, render(result.spec, resolution).image, config.block_grid);
  return result;
}

/// Writes the descent trace as CSV: step, theta_noise, theta_light, mae_total.
inline void write_trace_csv(const std::string& path, const std::vector<CalibStep>& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace CSV: " + path);
  out << "step,theta_noise,theta_light,mae_total\n";
  char buf[128];
  for (const CalibStep& s : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", s.step, s.theta_noise,
                  s.theta_light, s.mae);
    out << buf;
  }
  if (!out) throw std::runtime_error("error while writing trace CSV: " + path);
}

/// Reads a trace CSV written by write_trace_csv.
inline std::vector<CalibStep> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read trace CSV: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "step,theta_noise,theta_light,mae_total")
    throw std::runtime_error("trace CSV has an unexpected header: " + path);
  std::vector<CalibStep> trace;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    CalibStep s;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &s.step, &s.theta_noise, &s.theta_light,
                    &s.mae) != 4)
      throw std::runtime_error("malformed trace CSV row: " + line);
    trace.push_back(s);
  }
  return trace;
}

}  // namespace periscope
