#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

#include "nerfinv/analytic_scene.hpp"
#include "nerfinv/dataset.hpp"
#include "nerfinv/errors.hpp"
#include "nerfinv/pose_estimator.hpp"
#include "test_support.hpp"

using namespace nerfinv;
using namespace nerfinv::testing;

namespace {

Camera small_camera() { return Camera::from_fov(48, 48, 1.0, 2.0, 6.0); }

struct Scenario {
  AnalyticScene scene = AnalyticScene::toy();
  Camera camera = small_camera();
  Pose truth = look_at(Vec3(2.8, 1.9, 2.1), Vec3::Zero());
  Image observed;
  INeRFConfig config;

  Scenario() {
    config.render.n_samples = 64;
    config.batch_size = 256;
    Rng rng(0);
    observed = render_image(scene, camera, truth, config.render, rng);
  }
};

// Field whose density turns NaN, to exercise divergence handling.
class PoisonedField final : public RadianceField {
 protected:
  FieldOutput do_query(const Vec3&, const Vec3&) const override {
    return {std::numeric_limits<double>::quiet_NaN(), Rgb::Constant(0.5)};
  }
  FieldJacobians do_query_with_grads(const Vec3& x, const Vec3& d) const override {
    FieldJacobians j;
    j.output = do_query(x, d);
    return j;
  }
};

}  // namespace

TEST(PhotometricLoss, Examples) {
  const std::vector<Rgb> a{Rgb(0.2, 0.3, 0.4), Rgb(0.9, 0.1, 0.5)};
  const LossResult same = photometric_loss(a, a, LossMode::kRgb);
  EXPECT_EQ(same.loss, 0.0);
  for (const Vec3& g : same.gradients) EXPECT_EQ(g, Vec3::Zero());

  const std::vector<Rgb> white{Rgb::Ones()}, black{Rgb::Zero()};
  EXPECT_DOUBLE_EQ(photometric_loss(white, black, LossMode::kRgb).loss, 3.0);
  const LossResult uv = photometric_loss(white, black, LossMode::kYuvUv);
  EXPECT_NEAR(uv.loss, 0.0, 1e-24);
  EXPECT_LT(uv.gradients[0].norm(), 1e-12);

  EXPECT_THROW(photometric_loss(a, white, LossMode::kRgb), InvalidArgument);
  EXPECT_THROW(photometric_loss(std::vector<Rgb>{}, std::vector<Rgb>{}, LossMode::kRgb), InvalidArgument);
}

TEST(PhotometricLoss, YuvMatrixRows) {
  const Mat3& m = rgb_to_yuv();
  EXPECT_EQ(m(2, 0), 0.615);
  // Chroma rows annihilate gray.
  EXPECT_NEAR(m.row(1).sum(), 0.0, 1e-12);
  EXPECT_NEAR(m.row(2).sum(), 0.0, 1e-12);
  EXPECT_NEAR(m.row(0).sum(), 1.0, 1e-12);
}

TEST(PhotometricLoss, GradientsMatchFiniteDifferences) {
  Rng rng(1);
  for (LossMode mode : {LossMode::kRgb, LossMode::kYuvUv}) {
    std::vector<Rgb> r(7), o(7);
    for (int i = 0; i < 7; ++i) {
      r[i] = random_vec(rng, 0, 1);
      o[i] = random_vec(rng, 0, 1);
    }
    const LossResult res = photometric_loss(r, o, mode);
    for (int i = 0; i < 7; ++i)
      for (int c = 0; c < 3; ++c) {
        auto rp = r, rm = r;
        rp[i](c) += 1e-6;
        rm[i](c) -= 1e-6;
        const double numeric =
            (photometric_loss(rp, o, mode).loss - photometric_loss(rm, o, mode).loss) / 2e-6;
        EXPECT_TRUE(grad_close(res.gradients[i](c), numeric, 1e-6, 1e-10));
      }
    if (mode == LossMode::kRgb) {
      EXPECT_LT((res.gradients[0] - 2.0 * (r[0] - o[0]) / 7.0).norm(), 1e-15);
    }
  }
}

TEST(LearningRate, Schedule) {
  EXPECT_DOUBLE_EQ(lr_schedule(0), 0.01);
  EXPECT_NEAR(lr_schedule(100), 0.008, 1e-15);
  EXPECT_NEAR(lr_schedule(200), 0.0064, 1e-15);
  EXPECT_NEAR(lr_schedule(50), 0.01 * std::sqrt(0.8), 1e-15);
  EXPECT_THROW(lr_schedule(-1), InvalidArgument);
}

TEST(InitEstimate, Examples) {
  const Pose t0 = look_at(Vec3(1, 2, 3), Vec3::Zero());
  Rng rng(2);
  const PoseEstimate zero = init_estimate(t0, rng, 0.0);
  EXPECT_EQ(zero.coords.value, Vec6::Zero());
  EXPECT_EQ(zero.current_pose().matrix(), t0.matrix());
  EXPECT_EQ(zero.step, 0);
  EXPECT_EQ(zero.first_moment, Vec6::Zero());

  const PoseEstimate def = init_estimate(t0, rng);
  EXPECT_LT(def.coords.value.cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_GT(def.coords.value.cwiseAbs().maxCoeff(), 0.0);

  Rng a(3), b(3);
  EXPECT_EQ(init_estimate(t0, a).coords.value, init_estimate(t0, b).coords.value);
  EXPECT_THROW(init_estimate(t0, rng, -1.0), InvalidArgument);
}

TEST(PoseStep, GroundTruthIsFixedPoint) {
  Scenario s;
  Rng rng(4);
  PoseEstimate e = init_estimate(s.truth, rng, 0.0);
  const PoseOptimizer opt(s.scene, s.camera, s.observed, s.config);
  for (int i = 0; i < 5; ++i) opt.step(e, rng);
  EXPECT_EQ(e.loss_history.front(), 0.0);
  EXPECT_EQ(e.coords.value, Vec6::Zero());
  EXPECT_EQ(e.step, 5);
}

TEST(PoseGradient, MatchesFiniteDifferencesOverCoords) {
  Scenario s;
  Rng rng(5);
  int informative = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const ExpCoords coords(random_unit(rng) * std::uniform_real_distribution<double>(0.0, 0.3)(rng),
                           random_vec(rng, -0.4, 0.4));
    const Pose base = perturb_pose(s.truth, 10.0, 0.1, rng);
    const PixelBatch batch = sample_batch(SamplingStrategy::kRandom, s.observed, 96, 0, rng);
    INeRFConfig cfg = s.config;
    cfg.loss = trial % 2 ? LossMode::kYuvUv : LossMode::kRgb;
    const PoseGradient g = pose_gradient(s.scene, s.camera, coords, base, batch, cfg, rng);
    const double h = 1e-4;
    Vec6 numeric;
    for (int k = 0; k < 6; ++k) {
      Vec6 p = coords.value, m = coords.value;
      p(k) += h;
      m(k) -= h;
      numeric(k) = (batch_loss(s.scene, s.camera, exp_se3(ExpCoords(p)) * base, batch, cfg, rng) -
                    batch_loss(s.scene, s.camera, exp_se3(ExpCoords(m)) * base, batch, cfg, rng)) /
                   (2 * h);
    }
    EXPECT_TRUE(all_grad_close(g.d_coords, numeric)) << g.d_coords.transpose() << "\nvs " << numeric.transpose();
    informative += g.d_coords.norm() > 1e-3;
  }
  EXPECT_GT(informative, 15);
}

TEST(PoseGradient, LeftTwistMatchesFiniteDifferences) {
  Scenario s;
  Rng rng(6);
  const Pose pose = perturb_pose(s.truth, 5.0, 0.05, rng);
  const PixelBatch batch = sample_batch(SamplingStrategy::kRandom, s.observed, 128, 0, rng);
  const PoseGradient g = pose_gradient(s.scene, s.camera, ExpCoords(), pose, batch, s.config, rng);
  const double h = 1e-4;
  Vec6 numeric;
  for (int k = 0; k < 6; ++k) {
    Vec6 d = Vec6::Zero();
    d(k) = h;
    numeric(k) = (batch_loss(s.scene, s.camera, exp_se3(ExpCoords(d)) * pose, batch, s.config, rng) -
                  batch_loss(s.scene, s.camera, exp_se3(ExpCoords(Vec6(-d))) * pose, batch, s.config, rng)) /
                 (2 * h);
  }
  EXPECT_TRUE(all_grad_close(g.d_left_twist, numeric));
  EXPECT_LT((g.d_left_twist - g.d_coords).norm(), 1e-15);  // J_l(0) = I
}

TEST(PoseGradient, IndependentOfThreadCountAndChunking) {
  Scenario s;
  Rng rng(7);
  const Pose pose = perturb_pose(s.truth, 5.0, 0.05, rng);
  for (int b : {1, 63, 100, 130}) {
    const PixelBatch batch = sample_batch(SamplingStrategy::kRandom, s.observed, b, 0, rng);
    INeRFConfig one = s.config, many = s.config;
    many.threads = 3;
    Rng a(8), c(8);
    const PoseGradient g1 = pose_gradient(s.scene, s.camera, ExpCoords(), pose, batch, one, a);
    const PoseGradient g3 = pose_gradient(s.scene, s.camera, ExpCoords(), pose, batch, many, c);
    EXPECT_EQ(g1.loss, g3.loss);
    EXPECT_EQ(g1.d_coords, g3.d_coords);
    // The loss is the mean over the whole batch.
    const auto rendered = render_pixels(s.scene, s.camera, pose, batch.pixels, s.config.render, a);
    EXPECT_NEAR(g1.loss, photometric_loss(rendered, batch.colors, LossMode::kRgb).loss, 1e-14);
  }
}

TEST(EstimatePose, GroundTruthInitStaysPut) {
  Scenario s;
  INeRFConfig cfg = s.config;
  cfg.max_steps = 40;
  cfg.init_std = 0.0;
  Rng rng(9);
  const PoseTrajectory t = estimate_pose(s.scene, s.camera, s.observed, s.truth, cfg, rng);
  ASSERT_EQ(t.entries.size(), 40u);
  for (const TrajectoryEntry& entry : t.entries) EXPECT_EQ(entry.loss, 0.0);
  EXPECT_EQ(t.final_pose.matrix(), s.truth.matrix());
}

TEST(EstimatePose, JitteredGroundTruthStaysWithinStepScale) {
  // Adam steps have magnitude near the learning rate regardless of the
  // gradient scale, so the estimate hovers within a few steps of the optimum.
  Scenario s;
  INeRFConfig cfg = s.config;
  cfg.max_steps = 40;
  Rng rng(9);
  const PoseTrajectory t = estimate_pose(s.scene, s.camera, s.observed, s.truth, cfg, rng);
  const PoseErrors e = pose_errors(t.final_pose, s.truth);
  EXPECT_LT(e.rotation_deg, 1.0);
  EXPECT_LT(e.translation, 0.03);
  for (const TrajectoryEntry& entry : t.entries) EXPECT_TRUE(entry.pose.is_valid(1e-9));
}

TEST(EstimatePose, ZeroStepsReturnsInitialPose) {
  Scenario s;
  INeRFConfig cfg = s.config;
  cfg.max_steps = 0;
  ASSERT_GT(cfg.init_std, 0.0);
  const Pose init = perturb_pose(s.truth, 10, 0.1, *std::make_unique<Rng>(10));
  Rng a(11);
  const PoseTrajectory t = estimate_pose(s.scene, s.camera, s.observed, init, cfg, a);
  EXPECT_TRUE(t.entries.empty());
  EXPECT_EQ(t.final_pose.matrix(), init.matrix());
}

TEST(EstimatePose, TranslationOffsetImproves) {
  Scenario s;
  INeRFConfig cfg = s.config;
  cfg.batch_size = 512;
  cfg.max_steps = 60;
  Pose init = s.truth;
  init.translation.x() += 0.05;
  Rng rng(12);
  const PoseTrajectory t = estimate_pose(s.scene, s.camera, s.observed, init, cfg, rng);
  auto total = [&](const Pose& p) {
    const PoseErrors e = pose_errors(p, s.truth);
    return e.rotation_deg * std::numbers::pi / 180.0 + e.translation;
  };
  EXPECT_LT(total(t.final_pose), 0.5 * total(init));
  EXPECT_LT(t.entries.back().loss, t.entries.front().loss);
}

TEST(EstimatePose, LeftUpdateRotatesAboutWorldOrigin) {
  const Pose t0 = look_at(Vec3(3, 1, 2), Vec3::Zero());
  const Vec3 dw(0.01, -0.02, 0.015);
  const Pose p = exp_se3(ExpCoords(dw, Vec3::Zero())) * t0;
  EXPECT_LT((p.translation - exp_so3(dw) * t0.translation).norm(), 1e-15);
}

TEST(EstimatePose, PureRotationOffsetKeepsTranslationBounded) {
  // The scene is centered at the look-at point, so an orbit about the origin
  // is undone by rotation coordinates alone.
  Scenario s;
  INeRFConfig cfg = s.config;
  cfg.batch_size = 512;
  cfg.max_steps = 150;
  const Pose init = exp_se3(ExpCoords(Vec3(0.08, -0.12, 0.05), Vec3::Zero())) * s.truth;
  const double initial_translation = pose_errors(init, s.truth).translation;
  Rng rng(13);
  const PoseTrajectory t = estimate_pose(s.scene, s.camera, s.observed, init, cfg, rng);
  for (const TrajectoryEntry& e : t.entries) EXPECT_LE(pose_errors(e.pose, s.truth).translation, 1.5 * initial_translation);
  EXPECT_LT(pose_errors(t.final_pose, s.truth).rotation_deg, pose_errors(init, s.truth).rotation_deg);
}

TEST(EstimatePose, DivergenceCarriesPartialTrajectory) {
  Scenario s;
  const PoisonedField poison;
  INeRFConfig cfg = s.config;
  cfg.max_steps = 10;
  Rng rng(14);
  try {
    estimate_pose(poison, s.camera, s.observed, s.truth, cfg, rng);
    FAIL() << "expected divergence";
  } catch (const PoseDiverged& e) {
    EXPECT_EQ(e.step(), 0);
    EXPECT_TRUE(e.partial().entries.empty());
    EXPECT_TRUE(e.partial().final_pose.is_valid(1e-9));
  }
}

TEST(EstimatePose, ConvergenceStopEndsEarly) {
  Scenario s;
  INeRFConfig cfg = s.config;
  cfg.max_steps = 200;
  cfg.stop_on_convergence = true;
  cfg.convergence_tolerance = 0.05;
  cfg.init_std = 0.0;
  // A jittered observation leaves a residual the pose cannot explain, so the
  // loss plateaus instead of decaying toward zero.
  RenderConfig jitter = cfg.render;
  jitter.stratified = true;
  Rng render_rng(15);
  const Image observed = render_image(s.scene, s.camera, s.truth, jitter, render_rng);
  Pose init = s.truth;
  init.translation.z() += 0.01;
  Rng rng(15);
  const PoseTrajectory t = estimate_pose(s.scene, s.camera, observed, init, cfg, rng);
  EXPECT_LT(t.entries.size(), 200u);
  EXPECT_GE(t.entries.size(), 40u);

  cfg.stop_on_convergence = false;
  Rng again(15);
  EXPECT_EQ(estimate_pose(s.scene, s.camera, observed, init, cfg, again).entries.size(), 200u);
}

TEST(EstimatePose, SeededRunsAreIdentical) {
  Scenario s;
  INeRFConfig cfg = s.config;
  cfg.max_steps = 20;
  const Pose init = perturb_pose(s.truth, 10, 0.1, *std::make_unique<Rng>(16));
  Rng a(17), b(17);
  const PoseTrajectory x = estimate_pose(s.scene, s.camera, s.observed, init, cfg, a);
  cfg.threads = 2;
  const PoseTrajectory y = estimate_pose(s.scene, s.camera, s.observed, init, cfg, b);
  ASSERT_EQ(x.entries.size(), y.entries.size());
  for (std::size_t i = 0; i < x.entries.size(); ++i) EXPECT_EQ(x.entries[i].loss, y.entries[i].loss);
  EXPECT_EQ(x.final_pose.matrix(), y.final_pose.matrix());
}

TEST(Trajectory, CsvLayout) {
  Scenario s;
  INeRFConfig cfg = s.config;
  cfg.max_steps = 3;
  Rng rng(18);
  const PoseTrajectory t = estimate_pose(s.scene, s.camera, s.observed, s.truth, cfg, rng);
  const auto path = std::filesystem::temp_directory_path() / "nerfinv_traj.csv";
  write_trajectory_csv(t, &s.truth, path.string());
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "step,loss,rx,ry,rz,tx,ty,tz,rotation_error,translation_error");
  int rows = 0;
  std::string last;
  while (std::getline(is, line)) {
    ++rows;
    last = line;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 9);
  }
  EXPECT_EQ(rows, 4);
  EXPECT_EQ(last.substr(0, 3), "3,,");
  std::filesystem::remove(path);
}

TEST(INeRFConfig, Validation) {
  INeRFConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.effective_dilation(), 5);
  c.batch_size = 512;
  EXPECT_EQ(c.effective_dilation(), 3);
  c.dilation_iterations = 7;
  EXPECT_EQ(c.effective_dilation(), 7);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = INeRFConfig{};
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = INeRFConfig{};
  c.init_std = -1;
  EXPECT_THROW(c.validate(), InvalidArgument);
  EXPECT_EQ(parse_loss_mode("yuv_uv"), LossMode::kYuvUv);
  EXPECT_THROW(parse_loss_mode("lab"), InvalidArgument);
}
