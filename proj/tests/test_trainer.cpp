#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include <json.hpp>

#include "nerfinv/analytic_scene.hpp"
#include "nerfinv/trainer.hpp"
#include "test_support.hpp"

using namespace nerfinv;
using namespace nerfinv::testing;

namespace {

MlpArchitecture tiny_architecture() {
  MlpArchitecture a;
  a.pos_frequencies = 2;
  a.dir_frequencies = 1;
  a.hidden_width = 12;
  a.hidden_layers = 2;
  a.color_width = 8;
  return a;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.iterations = 30;
  c.rays_per_batch = 24;
  c.architecture = tiny_architecture();
  c.render.n_samples = 16;
  c.seed = 5;
  return c;
}

PosedDataset small_dataset(int views = 4, int size = 16) {
  const AnalyticScene scene = AnalyticScene::toy();
  const Camera cam = Camera::from_fov(size, size, 1.0, 2.0, 6.0);
  return render_dataset(scene, cam, hemisphere_poses(views, 4.0, 20, 60), RenderConfig{32, false, Rgb::Ones()});
}

std::vector<TrainingRay> random_rays(Rng& rng, int count) {
  std::vector<TrainingRay> rays(static_cast<std::size_t>(count));
  for (TrainingRay& r : rays) {
    const Vec3 target = random_vec(rng, -0.5, 0.5);
    r.ray.origin = 3.0 * random_unit(rng);
    r.ray.direction = (target - r.ray.origin).normalized();
    r.ray.near = 1.5;
    r.ray.far = 4.5;
    r.color = random_vec(rng, 0.0, 1.0);
  }
  return rays;
}

}  // namespace

TEST(Psnr, Examples) {
  const Image a(4, 3, Rgb(0.5, 0.5, 0.5));
  EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
  EXPECT_NEAR(psnr(a, Image(4, 3, Rgb::Constant(0.6))), 20.0, 1e-9);
  EXPECT_NEAR(psnr(a, Image(4, 3, Rgb::Constant(0.51))), 40.0, 1e-9);
  EXPECT_THROW(psnr(a, Image(3, 4)), InvalidArgument);
}

TEST(TrainConfig, Validation) {
  TrainConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.iterations = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = tiny_config();
  c.rays_per_batch = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = tiny_config();
  c.lr_decay = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(BatchGradients, ParametersMatchFiniteDifferences) {
  // Single-ray microbatches over random rays, parameters drawn from every
  // layer; stratified jitter is reproduced exactly by reusing the seed.
  Rng rng(21);
  RenderConfig render{24, true, Rgb::Ones()};
  int checked = 0;
  for (int c = 0; c < 24; ++c) {
    MlpField field(FieldParams::random(tiny_architecture(), 100 + c));
    // Raise the density so rays are partly opaque.
    field.mutable_params().values()[field.params().layers()[field.params().density_layer()].bias_offset] = 1.0;
    const std::vector<TrainingRay> ray = random_rays(rng, 1);
    const std::uint64_t seed = rng();
    FieldParams grad = field.params().zeros_like();
    batch_loss_and_grads(field, ray, render, seed, 1, &grad);

    std::uniform_int_distribution<std::size_t> pick(0, field.params().size() - 1);
    for (int k = 0; k < 8; ++k) {
      const std::size_t idx = pick(rng);
      const double h = 1e-6;
      const double saved = field.params().values()[idx];
      field.mutable_params().values()[idx] = saved + h;
      const double up = batch_loss_and_grads(field, ray, render, seed, 1, nullptr);
      field.mutable_params().values()[idx] = saved - h;
      const double down = batch_loss_and_grads(field, ray, render, seed, 1, nullptr);
      field.mutable_params().values()[idx] = saved;
      const double numeric = (up - down) / (2.0 * h);
      EXPECT_TRUE(grad_close(grad.values()[idx], numeric))
          << "case " << c << " index " << idx << ": " << grad.values()[idx] << " vs " << numeric;
      ++checked;
    }
  }
  EXPECT_GE(checked, 20);
}

TEST(BatchGradients, IndependentOfThreadCount) {
  Rng rng(22);
  const MlpField field(FieldParams::random(tiny_architecture(), 3));
  const std::vector<TrainingRay> rays = random_rays(rng, 37);
  const RenderConfig render{16, true, Rgb::Ones()};
  FieldParams g1 = field.params().zeros_like(), g3 = field.params().zeros_like();
  const double l1 = batch_loss_and_grads(field, rays, render, 9, 1, &g1);
  const double l3 = batch_loss_and_grads(field, rays, render, 9, 3, &g3);
  EXPECT_EQ(l1, l3);
  EXPECT_EQ(g1.values(), g3.values());
  EXPECT_THROW(batch_loss_and_grads(field, {}, render, 9, 1, nullptr), InvalidArgument);
}

TEST(TrainField, LossDecreasesAndIsDeterministic) {
  const PosedDataset ds = small_dataset();
  TrainConfig cfg = tiny_config();
  cfg.iterations = 60;
  const TrainResult a = train_field(ds, cfg);
  ASSERT_EQ(a.losses.size(), 60u);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 6; ++i) {
    first += a.losses[i];
    last += a.losses[59 - i];
  }
  EXPECT_LT(last, first);

  const TrainResult b = train_field(ds, cfg);
  EXPECT_EQ(a.params.values(), b.params.values());
  cfg.threads = 2;
  const TrainResult c = train_field(ds, cfg);
  EXPECT_EQ(a.params.values(), c.params.values());
  EXPECT_EQ(a.losses, c.losses);
}

TEST(TrainField, HeldOutPsnrFarAboveUntrained) {
  // Eight training views and two held-out views of the toy scene at 32x32.
  const PosedDataset all = small_dataset(10, 32);
  PosedDataset train{all.camera, {all.frames.begin(), all.frames.begin() + 8}, {}};
  const std::vector<Frame> held_out(all.frames.begin() + 8, all.frames.end());
  TrainConfig cfg;
  cfg.iterations = 600;
  cfg.rays_per_batch = 128;
  cfg.render.n_samples = 32;
  cfg.seed = 1;
  const RenderConfig eval{32, false, Rgb::Ones()};
  const double trained = mean_psnr(MlpField(train_field(train, cfg).params), all.camera, held_out, eval, 1);
  const double untrained =
      mean_psnr(MlpField(FieldParams::random(cfg.architecture, cfg.seed)), all.camera, held_out, eval, 1);
  EXPECT_GE(trained, 22.0);
  EXPECT_GE(trained - untrained, 10.0);
}

TEST(TrainField, RejectsBadInput) {
  PosedDataset ds = small_dataset(2);
  TrainConfig cfg = tiny_config();
  PosedDataset one = ds;
  one.frames.resize(1);
  EXPECT_THROW(train_field(one, cfg), InvalidArgument);

  ds.frames[1].image.at(3, 4) = Rgb::Constant(std::numeric_limits<double>::quiet_NaN());
  cfg.rays_per_batch = 256;  // certain to hit the poisoned pixel
  try {
    train_field(ds, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingError& e) {
    EXPECT_GE(e.iteration(), 0);
    EXPECT_LT(e.iteration(), cfg.iterations);
  }
}

TEST(NearestFrame, PicksLowestMse) {
  const PosedDataset ds = small_dataset(4);
  for (std::size_t i = 0; i < ds.frames.size(); ++i) EXPECT_EQ(nearest_frame(ds.frames, ds.frames[i].image), i);
  EXPECT_THROW(nearest_frame({}, ds.frames[0].image), InvalidArgument);
}

TEST(SelfSupervise, EmptyUnposedMatchesPlainTraining) {
  const PosedDataset ds = small_dataset(4);
  SelfSupervisionConfig cfg;
  cfg.train = tiny_config();
  const std::vector<Frame> eval(ds.frames.begin(), ds.frames.begin() + 1);
  const SelfSupervisionResult r = self_supervise(ds, {}, eval, cfg);
  EXPECT_EQ(r.params.values(), train_field(ds, cfg.train).params.values());
  EXPECT_EQ(r.report.psnr_labeled, r.report.psnr_augmented);
  EXPECT_FALSE(r.report.psnr_full.has_value());
  EXPECT_THROW(self_supervise(PosedDataset{ds.camera, {}, {}}, {}, eval, cfg), InvalidArgument);
}

TEST(SelfSupervise, RunsAllStagesAndReports) {
  const PosedDataset all = small_dataset(6);
  PosedDataset labeled{all.camera, {all.frames[0], all.frames[1], all.frames[2], all.frames[3]}, {}};
  const std::vector<UnposedImage> unposed{{"u", all.frames[4].image, all.frames[4].pose}};
  const std::vector<Frame> eval{all.frames[5]};
  SelfSupervisionConfig cfg;
  cfg.train = tiny_config();
  cfg.inerf.batch_size = 64;
  cfg.inerf.max_steps = 5;
  cfg.inerf.render.n_samples = 16;
  const SelfSupervisionResult r = self_supervise(labeled, unposed, eval, cfg);
  ASSERT_EQ(r.report.labels.size(), 1u);
  EXPECT_EQ(r.report.labels[0].name, "u");
  EXPECT_TRUE(r.report.labels[0].error.has_value());
  EXPECT_TRUE(r.report.labels[0].estimate.is_valid(1e-9));
  ASSERT_TRUE(r.report.psnr_full.has_value());

  const nlohmann::json j = nlohmann::json::parse(r.report.to_json());
  EXPECT_TRUE(j["psnr"]["labeled"].is_number());
  EXPECT_TRUE(j["psnr"]["fully_labeled"].is_number());
  EXPECT_EQ(j["labels"][0]["init_frame"], r.report.labels[0].init_frame);
  EXPECT_EQ(j["labels"][0]["transform_matrix"].size(), 4u);
  EXPECT_TRUE(j["seconds"].contains("retrain"));
}

TEST(SelfSupervise, ErrorsCarryStageTag) {
  const PosedDataset all = small_dataset(4);
  PosedDataset labeled{all.camera, {all.frames[0], all.frames[1]}, {}};
  SelfSupervisionConfig cfg;
  cfg.train = tiny_config();
  // An unposed image of the wrong size fails inside the estimation stage.
  const std::vector<UnposedImage> unposed{{"bad", Image(8, 8), std::nullopt}};
  const std::vector<Frame> eval{all.frames[2]};
  try {
    self_supervise(labeled, unposed, eval, cfg);
    FAIL() << "expected a stage error";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "estimate");
  }
  cfg.train.iterations = 0;
  try {
    self_supervise(labeled, {}, eval, cfg);
    FAIL() << "expected a stage error";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "train_labeled");
  }
}
