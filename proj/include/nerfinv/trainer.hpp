#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nerfinv/dataset.hpp"
#include "nerfinv/errors.hpp"
#include "nerfinv/mlp_field.hpp"
#include "nerfinv/pose_estimator.hpp"

namespace nerfinv {

// Non-finite loss or parameters while fitting a field.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int iteration) : std::runtime_error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

struct TrainConfig {
  int iterations = 2000;
  int rays_per_batch = 256;
  double learning_rate = 5e-3;
  // The learning rate decays exponentially to learning_rate·lr_decay at the
  // last iteration.
  double lr_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  MlpArchitecture architecture;
  RenderConfig render{64, true, Rgb::Ones()};
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

// One supervised ray: the pixel color it should render to.
struct TrainingRay {
  Ray ray;
  Rgb color = Rgb::Zero();
};

// Mean over the batch of ‖Ĉ − C‖². Stratified jitter for ray i comes from
// split_seed(seed, i). When `grad` is non-null, ∂loss/∂params is added to it;
// per-chunk partial gradients are folded in chunk order, so the result does
// not depend on `threads`.
double batch_loss_and_grads(const MlpField& field, std::span<const TrainingRay> rays, const RenderConfig& render,
                            std::uint64_t seed, int threads, FieldParams* grad);

struct TrainResult {
  FieldParams params;
  std::vector<double> losses;  // one per iteration
};

// Fits a fresh MLP (FieldParams::random with the config seed) with Adam.
// Each iteration draws rays_per_batch pixels uniformly over all frames.
// Needs at least two posed frames; throws TrainingError on divergence.
TrainResult train_field(const PosedDataset& dataset, const TrainConfig& config);

// 10·log10(1 / MSE); +infinity for identical images.
double psnr(const Image& a, const Image& b);

// Mean PSNR of the field rendered (midpoint quadrature) at each frame's pose.
double mean_psnr(const RadianceField& field, const Camera& camera, std::span<const Frame> frames,
                 const RenderConfig& render, int threads = 1);

// An image to be pose-labeled. The ground truth, when present, is only used
// to score the estimated label and to train the fully labeled reference.
struct UnposedImage {
  std::string name;
  Image image;
  std::optional<Pose> ground_truth;
};

struct PoseLabel {
  std::string name;
  Pose estimate;
  std::string init_frame;  // labeled frame whose pose seeded the estimate
  std::optional<PoseErrors> error;
};

struct SelfSupervisionConfig {
  TrainConfig train;
  INeRFConfig inerf;
  int threads = 1;
};

struct SelfSupervisionReport {
  double psnr_labeled = 0.0;
  double psnr_augmented = 0.0;
  std::optional<double> psnr_full;  // all images with true poses
  std::vector<PoseLabel> labels;
  double seconds_train_labeled = 0.0;
  double seconds_estimate = 0.0;
  double seconds_retrain = 0.0;
  double seconds_train_full = 0.0;

  std::string to_json() const;
};

struct SelfSupervisionResult {
  FieldParams params;  // trained on labeled frames plus pose-labeled images
  SelfSupervisionReport report;
};

// Stage 1 trains on `labeled`; stage 2 estimates a pose for each unposed image,
// starting from the labeled frame with the lowest image MSE; stage 3 retrains
// from scratch on the union. PSNRs are measured on `evaluation`. The fully
// labeled reference is trained only when every unposed image has a ground
// truth. Errors from any stage are rethrown as a StageError with the original
// exception nested inside it.
SelfSupervisionResult self_supervise(const PosedDataset& labeled, const std::vector<UnposedImage>& unposed,
                                     std::span<const Frame> evaluation, const SelfSupervisionConfig& config);

// Index of the frame whose image has the lowest MSE against `image`.
std::size_t nearest_frame(std::span<const Frame> frames, const Image& image);

}  // namespace nerfinv
