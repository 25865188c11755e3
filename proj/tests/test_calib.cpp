#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "periscope/calib.hpp"
#include "periscope/rng.hpp"

using namespace periscope;

namespace {

GrayImage image_of(int w, int h, std::vector<uint8_t> px) {
  GrayImage img;
  img.width = w;
  img.height = h;
  img.pixels = std::move(px);
  return img;
}

GrayImage random_image(int w, int h, uint64_t seed) {
  Rng rng(seed);
  GrayImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<size_t>(w) * h);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
  return img;
}

// The 4x4 fixture whose 2x2 blocks are constant 0, 2, 4, 6.
GrayImage quadrant_image() {
  return image_of(4, 4,
                  {0, 0, 2, 2,  //
                   0, 0, 2, 2,  //
                   4, 4, 6, 6,  //
                   4, 4, 6, 6});
}

}  // namespace

TEST(BlockAverages, ConstantImage) {
  GrayImage img = image_of(8, 8, std::vector<uint8_t>(64, 37));
  const auto avg = block_averages(img, 4);
  ASSERT_EQ(avg.size(), 16u);
  for (double a : avg) EXPECT_DOUBLE_EQ(a, 37.0);
}

TEST(BlockAverages, UniformBlocksQuadrants) {
  const auto avg = block_averages(quadrant_image(), 2);
  ASSERT_EQ(avg.size(), 4u);
  EXPECT_DOUBLE_EQ(avg[0], 0.0);
  EXPECT_DOUBLE_EQ(avg[1], 2.0);
  EXPECT_DOUBLE_EQ(avg[2], 4.0);
  EXPECT_DOUBLE_EQ(avg[3], 6.0);
}

TEST(BlockAverages, MatchesBruteForceMeans) {
  GrayImage img = random_image(8, 8, 42);
  const auto avg = block_averages(img, 4);

  // Independent accumulation: bucket every pixel by its block index.
  std::vector<double> sum(16, 0.0);
  std::vector<int> cnt(16, 0);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const int block = (y / 2) * 4 + (x / 2);
      sum[static_cast<size_t>(block)] += img.at(x, y);
      cnt[static_cast<size_t>(block)]++;
    }
  for (int b = 0; b < 16; ++b) {
    ASSERT_EQ(cnt[static_cast<size_t>(b)], 4);
    EXPECT_NEAR(avg[static_cast<size_t>(b)], sum[static_cast<size_t>(b)] / 4.0, 1e-12);
  }
}

TEST(BlockAverages, RejectsBadGrid) {
  GrayImage img = random_image(10, 10, 1);
  EXPECT_THROW(block_averages(img, 3), std::invalid_argument);
  EXPECT_THROW(block_averages(img, 0), std::invalid_argument);
  EXPECT_NO_THROW(block_averages(img, 5));
}

TEST(MaeTotal, IdenticalImagesScoreZero) {
  GrayImage img = random_image(16, 16, 5);
  EXPECT_DOUBLE_EQ(mae_total(img, img, 4), 0.0);
}

TEST(MaeTotal, WorkedQuadrantExample) {
  // Block averages [0,2,4,6] against [1,2,4,6]: one block off by one,
  // averaged over four blocks.
  GrayImage a = quadrant_image();
  GrayImage b = quadrant_image();
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) b.pixels[static_cast<size_t>(y) * 4 + x] = 1;
  EXPECT_DOUBLE_EQ(mae_total(a, b, 2), 0.25);
  EXPECT_DOUBLE_EQ(mae_total(b, a, 2), 0.25);
}

TEST(MaeTotal, SymmetricInArguments) {
  GrayImage a = random_image(16, 16, 10);
  GrayImage b = random_image(16, 16, 11);
  EXPECT_DOUBLE_EQ(mae_total(a, b, 4), mae_total(b, a, 4));
  EXPECT_GT(mae_total(a, b, 4), 0.0);
}

TEST(MaeTotal, RejectsDimensionMismatch) {
  GrayImage a = random_image(16, 16, 1);
  GrayImage b = random_image(8, 8, 1);
  EXPECT_THROW(mae_total(a, b, 4), std::invalid_argument);
}

TEST(MaeTotal, InvariantToWithinBlockPermutation) {
  GrayImage reference = random_image(16, 16, 20);
  GrayImage a = random_image(16, 16, 21);

  // Reverse every pixel within each 4x4 block of `a`: block averages are
  // untouched, so the score against any reference must not move.
  GrayImage shuffled = a;
  for (int by = 0; by < 4; ++by)
    for (int bx = 0; bx < 4; ++bx) {
      std::vector<uint8_t> block;
      for (int y = by * 4; y < by * 4 + 4; ++y)
        for (int x = bx * 4; x < bx * 4 + 4; ++x) block.push_back(a.at(x, y));
      std::reverse(block.begin(), block.end());
      size_t i = 0;
      for (int y = by * 4; y < by * 4 + 4; ++y)
        for (int x = bx * 4; x < bx * 4 + 4; ++x)
          shuffled.pixels[static_cast<size_t>(y) * 16 + x] = block[i++];
    }
  ASSERT_NE(shuffled.pixels, a.pixels);
  EXPECT_DOUBLE_EQ(mae_total(reference, a, 4), mae_total(reference, shuffled, 4));
}

TEST(MaeTotal, ZeroExactlyWhenAveragesAgree) {
  // Two different images with identical block averages score zero; nudging a
  // single pixel breaks one average and the score leaves zero.
  GrayImage a = image_of(4, 2, {10, 30, 7, 9, 20, 40, 9, 7});
  GrayImage b = image_of(4, 2, {20, 20, 8, 8, 30, 30, 8, 8});
  EXPECT_DOUBLE_EQ(mae_total(a, b, 2), 0.0);
  b.pixels[0] = 21;
  EXPECT_GT(mae_total(a, b, 2), 0.0);
}

TEST(Calibrate, TargetFromSameSpecConvergesImmediately) {
  SceneSpec spec0;
  spec0.seed = 31;
  GrayImage target = render(spec0, 64).image;

  const CalibResult r = calibrate(target, spec0);
  EXPECT_TRUE(r.converged);
  EXPECT_FALSE(r.diverged);
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.trace[0].step, 0);
  EXPECT_DOUBLE_EQ(r.trace[0].mae, 0.0);
  EXPECT_DOUBLE_EQ(r.spec.theta_noise, spec0.theta_noise);
  EXPECT_DOUBLE_EQ(r.spec.theta_light, spec0.theta_light);
}

TEST(Calibrate, RecoversPerturbedLight) {
  SceneSpec spec0;
  spec0.seed = 77;
  SceneSpec truth = spec0;
  truth.theta_light = 1.2 * spec0.theta_light;
  GrayImage target = render(truth, 64).image;

  const CalibResult r = calibrate(target, spec0);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(static_cast<int>(r.trace.size()), 100);
  EXPECT_LT(r.best_mae, 1.275);
  EXPECT_NEAR(r.spec.theta_light, truth.theta_light, 0.05 * truth.theta_light);
}

TEST(Calibrate, RecoversUnderJointPerturbation) {
  // Brighter light and stronger noise together; the light estimate must
  // still land within five percent and the score under threshold.
  SceneSpec spec0;
  spec0.seed = 77;
  SceneSpec truth = spec0;
  truth.theta_light = 1.2 * spec0.theta_light;
  truth.theta_noise = 1.5 * spec0.theta_noise;
  GrayImage target = render(truth, 64).image;

  const CalibResult r = calibrate(target, spec0);
  EXPECT_TRUE(r.converged);
  EXPECT_LT(r.best_mae, 1.275);
  EXPECT_NEAR(r.spec.theta_light, truth.theta_light, 0.05 * truth.theta_light);
  EXPECT_LE(r.best_mae, r.trace.front().mae);
}

TEST(Calibrate, TraceBoundedByMaxSteps) {
  SceneSpec spec0;
  spec0.seed = 9;
  SceneSpec truth = spec0;
  truth.theta_light = 1.5;
  GrayImage target = render(truth, 64).image;

  CalibConfig cfg;
  cfg.alpha = 1e-9;  // steps too small to converge
  cfg.max_steps = 5;
  const CalibResult r = calibrate(target, spec0, cfg);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.trace.size(), 5u);
  for (size_t i = 0; i < r.trace.size(); ++i)
    EXPECT_EQ(r.trace[i].step, static_cast<int>(i));
  EXPECT_LE(r.best_mae, r.trace.front().mae);
}

TEST(Calibrate, DivergenceGuardHaltsWithBestSoFar) {
  // Oversized probe plus aggressive rate: the score rises for ten straight
  // steps, the guard halts the run, and the best parameters seen come back.
  SceneSpec spec0;
  spec0.seed = 7;
  SceneSpec truth = spec0;
  truth.theta_light = 1.2;
  truth.theta_noise = 3.0;
  GrayImage target = render(truth, 64).image;

  CalibConfig cfg;
  cfg.alpha = 0.1;
  cfg.fd_step = 2.0;
  const CalibResult r = calibrate(target, spec0, cfg);
  EXPECT_TRUE(r.diverged);
  EXPECT_FALSE(r.converged);
  EXPECT_FALSE(r.diagnostic.empty());
  EXPECT_LT(static_cast<int>(r.trace.size()), cfg.max_steps);
  EXPECT_LE(r.best_mae, r.trace.front().mae);
  ASSERT_LT(static_cast<size_t>(r.best_step), r.trace.size());
  EXPECT_DOUBLE_EQ(r.trace[static_cast<size_t>(r.best_step)].mae, r.best_mae);
}

TEST(Calibrate, DeterministicTrace) {
  SceneSpec spec0;
  spec0.seed = 13;
  SceneSpec truth = spec0;
  truth.theta_light = 1.15;
  GrayImage target = render(truth, 64).image;

  const CalibResult a = calibrate(target, spec0);
  const CalibResult b = calibrate(target, spec0);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].theta_noise, b.trace[i].theta_noise);
    EXPECT_EQ(a.trace[i].theta_light, b.trace[i].theta_light);
    EXPECT_EQ(a.trace[i].mae, b.trace[i].mae);
  }
}

TEST(Calibrate, RejectsBadInputs) {
  SceneSpec spec0;
  GrayImage target = render(spec0, 64).image;

  CalibConfig cfg;
  cfg.alpha = 0.0;
  EXPECT_THROW(calibrate(target, spec0, cfg), std::invalid_argument);
  cfg = {};
  cfg.max_steps = 0;
  EXPECT_THROW(calibrate(target, spec0, cfg), std::invalid_argument);
  cfg = {};
  cfg.block_grid = 60;  // 64 not divisible by 60
  EXPECT_THROW(calibrate(target, spec0, cfg), std::invalid_argument);

  GrayImage rect = random_image(64, 32, 3);
  EXPECT_THROW(calibrate(rect, spec0), std::invalid_argument);
}

TEST(TraceCsv, RoundTripsExactly) {
  std::vector<CalibStep> trace = {{0, 2.0, 1.0, 14.25},
                                  {1, 2.125, 1.0625e-3, 7.5},
                                  {2, 1.0 / 3.0, 0.1 + 0.2, 0.033203125}};
  const auto path = std::filesystem::temp_directory_path() / "periscope_trace.csv";
  write_trace_csv(path.string(), trace);
  const auto back = read_trace_csv(path.string());
  ASSERT_EQ(back.size(), trace.size());
  for (size_t i = 0; i < trace.size(); ++i) {
    EXPECT_EQ(back[i].step, trace[i].step);
    EXPECT_EQ(back[i].theta_noise, trace[i].theta_noise);
    EXPECT_EQ(back[i].theta_light, trace[i].theta_light);
    EXPECT_EQ(back[i].mae, trace[i].mae);
  }
  std::filesystem::remove(path);
}

TEST(TraceCsv, HeaderAndLayout) {
  const auto path = std::filesystem::temp_directory_path() / "periscope_trace_hdr.csv";
  write_trace_csv(path.string(), {{0, 2.0, 1.0, 3.5}});
  std::ifstream in(path);
  std::string header, row;
  ASSERT_TRUE(std::getline(in, header));
  EXPECT_EQ(header, "step,theta_noise,theta_light,mae_total");
  ASSERT_TRUE(std::getline(in, row));
  EXPECT_EQ(row, "0,2,1,3.5");
  std::filesystem::remove(path);
}
