#pragma once

#include <span>
#include <string>
#include <vector>

#include "nerfinv/errors.hpp"
#include "nerfinv/field.hpp"
#include "nerfinv/image.hpp"
#include "nerfinv/render.hpp"
#include "nerfinv/sampler.hpp"
#include "nerfinv/se3.hpp"

namespace nerfinv {

enum class LossMode { kRgb, kYuvUv };

LossMode parse_loss_mode(const std::string& name);
std::string to_string(LossMode mode);

struct INeRFConfig {
  int batch_size = 2048;
  int max_steps = 300;
  SamplingStrategy strategy = SamplingStrategy::kInterestRegion;
  int dilation_iterations = -1;  // < 0: default_dilation_iterations(batch_size)
  LossMode loss = LossMode::kRgb;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double init_std = 1e-6;
  // Optional early stop: relative change of the mean loss between the last
  // two windows below the tolerance.
  bool stop_on_convergence = false;
  int convergence_window = 20;
  double convergence_tolerance = 1e-4;
  RenderConfig render{128, false, Rgb::Ones()};
  int threads = 1;

  int effective_dilation() const;
  void validate() const;
};

struct LossResult {
  double loss = 0.0;
  std::vector<Vec3> gradients;  // ∂loss/∂Ĉ per pixel
};

// rgb: mean over the batch of ‖Ĉ − C‖². yuv_uv: the same on the U and V rows
// of the RGB→YUV transform only.
LossResult photometric_loss(std::span<const Rgb> rendered, std::span<const Rgb> observed, LossMode mode);

// RGB→YUV matrix used by the yuv_uv loss (rows Y, U, V).
const Mat3& rgb_to_yuv();

// α₀ · 0.8^{t/100}
double lr_schedule(int step, double initial = 0.01);

// Optimization state: the current pose is exp_se3(coords) ∘ base (left
// multiplication onto the camera-to-world base pose).
struct PoseEstimate {
  ExpCoords coords;
  Pose base;
  Vec6 first_moment = Vec6::Zero();
  Vec6 second_moment = Vec6::Zero();
  int step = 0;
  std::vector<double> loss_history;

  Pose current_pose() const { return exp_se3(coords) * base; }
};

PoseEstimate init_estimate(const Pose& base, Rng& rng, double init_std = 1e-6);

struct PoseGradient {
  double loss = 0.0;
  Vec6 d_coords = Vec6::Zero();     // ∂L/∂(Sθ)
  Vec6 d_left_twist = Vec6::Zero();  // ∂L/∂δ for exp(δ) ∘ current pose
};

// Loss and exact gradient w.r.t. the exponential coordinates for a fixed
// pixel batch.
PoseGradient pose_gradient(const RadianceField& field, const Camera& camera, const ExpCoords& coords, const Pose& base,
                           const PixelBatch& batch, const INeRFConfig& config, Rng& rng);

// Loss only (no reverse pass) for a fixed pixel batch.
double batch_loss(const RadianceField& field, const Camera& camera, const Pose& pose, const PixelBatch& batch,
                  const INeRFConfig& config, Rng& rng);

// Holds the observed image and its cached interest points for repeated steps.
class PoseOptimizer {
 public:
  PoseOptimizer(const RadianceField& field, const Camera& camera, const Image& observed, INeRFConfig config);

  // One iteration: sample, render, backpropagate to Sθ, Adam update.
  // Throws DivergedError with the step index on a non-finite loss/gradient.
  void step(PoseEstimate& estimate, Rng& rng) const;

  const INeRFConfig& config() const { return config_; }
  const RaySampler& sampler() const { return sampler_; }

 private:
  const RadianceField& field_;
  Camera camera_;
  const Image& observed_;
  INeRFConfig config_;
  RaySampler sampler_;
};

void pose_step(PoseEstimate& estimate, const RadianceField& field, const Camera& camera, const Image& observed,
               const INeRFConfig& config, Rng& rng);

struct TrajectoryEntry {
  int step = 0;
  ExpCoords coords;
  Pose pose;
  double loss = 0.0;
};

// Entry k holds the pose used at step k and the batch loss measured there;
// final_pose is the pose after the last update.
struct PoseTrajectory {
  std::vector<TrajectoryEntry> entries;
  ExpCoords final_coords;
  Pose final_pose;

  // Pose after `step` updates (step 0 is the initial pose).
  const Pose& pose_at(int step) const;
};

class PoseDiverged : public DivergedError {
 public:
  PoseDiverged(const std::string& what, int step, PoseTrajectory partial)
      : DivergedError(what, step), partial_(std::move(partial)) {}
  const PoseTrajectory& partial() const { return partial_; }

 private:
  PoseTrajectory partial_;
};

// Runs pose_step from init_estimate(initial) until max_steps or convergence.
PoseTrajectory estimate_pose(const RadianceField& field, const Camera& camera, const Image& observed,
                             const Pose& initial, const INeRFConfig& config, Rng& rng);

// Columns: step, loss, the six exponential coordinates, rotation_error,
// translation_error. The error columns are empty without ground truth. A
// final row with an empty loss holds the pose after the last update.
void write_trajectory_csv(const PoseTrajectory& trajectory, const Pose* ground_truth, const std::string& path);

}  // namespace nerfinv
