#include "nerfinv/pose_estimator.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "nerfinv/parallel.hpp"

namespace nerfinv {
namespace {

// Rays per work chunk; fixed so reductions are independent of thread count.
constexpr std::size_t kRaysPerChunk = 64;

bool finite(const Vec6& v) { return v.allFinite(); }

// Per-pixel loss contribution and its gradient, scaled by 1/b.
double pixel_loss(const Rgb& rendered, const Rgb& observed, LossMode mode, double inv_b, Vec3* grad) {
  const Vec3 r = rendered - observed;
  if (mode == LossMode::kRgb) {
    if (grad) *grad = 2.0 * inv_b * r;
    return inv_b * r.squaredNorm();
  }
  const Mat3& m = rgb_to_yuv();
  Vec3 yuv = m * r;
  yuv[0] = 0.0;
  if (grad) *grad = 2.0 * inv_b * (m.transpose() * yuv);
  return inv_b * yuv.squaredNorm();
}

}  // namespace

LossMode parse_loss_mode(const std::string& name) {
  if (name == "rgb") return LossMode::kRgb;
  if (name == "yuv_uv" || name == "yuv") return LossMode::kYuvUv;
  throw InvalidArgument("unknown loss mode: " + name);
}

std::string to_string(LossMode mode) { return mode == LossMode::kRgb ? "rgb" : "yuv_uv"; }

int INeRFConfig::effective_dilation() const {
  return dilation_iterations >= 0 ? dilation_iterations : default_dilation_iterations(batch_size);
}

void INeRFConfig::validate() const {
  if (batch_size < 1) throw InvalidArgument("INeRFConfig: batch_size must be >= 1");
  if (max_steps < 0) throw InvalidArgument("INeRFConfig: max_steps must be >= 0");
  if (!(learning_rate > 0.0)) throw InvalidArgument("INeRFConfig: learning rate must be positive");
  if (init_std < 0.0) throw InvalidArgument("INeRFConfig: init_std must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("INeRFConfig: Adam betas must lie in [0, 1)");
  }
  if (convergence_window < 1) throw InvalidArgument("INeRFConfig: convergence window must be >= 1");
  render.validate();
}

const Mat3& rgb_to_yuv() {
  static const Mat3 m = [] {
    Mat3 out;
    out << 0.2126, 0.7152, 0.0722,  //
        -0.09991, -0.33609, 0.436,  //
        0.615, -0.55861, -0.05639;
    return out;
  }();
  return m;
}

LossResult photometric_loss(std::span<const Rgb> rendered, std::span<const Rgb> observed, LossMode mode) {
  if (rendered.size() != observed.size()) throw InvalidArgument("photometric_loss: length mismatch");
  if (rendered.empty()) throw InvalidArgument("photometric_loss: empty batch");
  const double inv_b = 1.0 / static_cast<double>(rendered.size());
  LossResult out;
  out.gradients.resize(rendered.size());
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    out.loss += pixel_loss(rendered[i], observed[i], mode, inv_b, &out.gradients[i]);
  }
  return out;
}

double lr_schedule(int step, double initial) {
  if (step < 0) throw InvalidArgument("lr_schedule: step must be >= 0");
  return initial * std::pow(0.8, step / 100.0);
}

PoseEstimate init_estimate(const Pose& base, Rng& rng, double init_std) {
  if (!base.is_valid(1e-6)) throw InvalidArgument("init_estimate: invalid base pose");
  if (init_std < 0.0) throw InvalidArgument("init_estimate: init_std must be >= 0");
  PoseEstimate e;
  e.base = base;
  if (init_std > 0.0) {
    std::normal_distribution<double> normal(0.0, init_std);
    for (int i = 0; i < 6; ++i) e.coords.value[i] = normal(rng);
  }
  return e;
}

namespace {

struct ChunkResult {
  double loss = 0.0;
  Vec6 twist = Vec6::Zero();
};

template <bool kWithGrads>
ChunkResult accumulate(const RadianceField& field, const Camera& camera, const Pose& pose, const PixelBatch& batch,
                       const INeRFConfig& config, Rng& rng) {
  const std::size_t b = batch.pixels.size();
  if (b == 0) throw InvalidArgument("pose step: empty pixel batch");
  const double inv_b = 1.0 / static_cast<double>(b);
  const std::uint64_t master = rng();
  const std::size_t chunks = (b + kRaysPerChunk - 1) / kRaysPerChunk;
  std::vector<ChunkResult> partial(chunks);

  parallel_for(b, config.threads, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    ChunkResult acc;
    for (std::size_t i = begin; i < end; ++i) {
      const Ray ray = pixel_ray(camera, pose, batch.pixels[i]);
      Rng local(split_seed(master, i));
      const RayTrace trace = trace_ray(field, ray, config.render, config.render.stratified ? &local : nullptr);
      Vec3 grad;
      acc.loss += pixel_loss(trace.color, batch.colors[i], config.loss, inv_b, kWithGrads ? &grad : nullptr);
      if constexpr (kWithGrads) {
        const RayGradients g = backpropagate_ray(field, trace, config.render, grad);
        // Left perturbation exp(δ)·T moves the origin by φ×t + ρ and turns the
        // direction by φ×d.
        acc.twist.head<3>() += ray.origin.cross(g.d_origin) + ray.direction.cross(g.d_direction);
        acc.twist.tail<3>() += g.d_origin;
      }
    }
    partial[chunk] = acc;
  }, kRaysPerChunk);

  ChunkResult total;
  for (const ChunkResult& c : partial) {
    total.loss += c.loss;
    total.twist += c.twist;
  }
  return total;
}

}  // namespace

PoseGradient pose_gradient(const RadianceField& field, const Camera& camera, const ExpCoords& coords, const Pose& base,
                           const PixelBatch& batch, const INeRFConfig& config, Rng& rng) {
  const Pose pose = exp_se3(coords) * base;
  const ChunkResult r = accumulate<true>(field, camera, pose, batch, config, rng);
  PoseGradient out;
  out.loss = r.loss;
  out.d_left_twist = r.twist;
  out.d_coords = left_jacobian_se3(coords).transpose() * r.twist;
  return out;
}

double batch_loss(const RadianceField& field, const Camera& camera, const Pose& pose, const PixelBatch& batch,
                  const INeRFConfig& config, Rng& rng) {
  return accumulate<false>(field, camera, pose, batch, config, rng).loss;
}

PoseOptimizer::PoseOptimizer(const RadianceField& field, const Camera& camera, const Image& observed,
                             INeRFConfig config)
    : field_(field),
      camera_(camera),
      observed_(observed),
      config_(std::move(config)),
      sampler_(observed, config_.strategy, config_.effective_dilation()) {
  config_.validate();
  camera_.validate();
  if (observed.width() != camera.width || observed.height() != camera.height) {
    throw InvalidArgument("PoseOptimizer: observed image size does not match the camera");
  }
}

void PoseOptimizer::step(PoseEstimate& estimate, Rng& rng) const {
  const PixelBatch batch = sampler_.sample(config_.batch_size, rng);
  const PoseGradient g = pose_gradient(field_, camera_, estimate.coords, estimate.base, batch, config_, rng);
  if (!std::isfinite(g.loss) || !finite(g.d_coords)) {
    throw DivergedError("pose optimization diverged at step " + std::to_string(estimate.step), estimate.step);
  }

  const int t = estimate.step + 1;
  estimate.first_moment = config_.beta1 * estimate.first_moment + (1.0 - config_.beta1) * g.d_coords;
  estimate.second_moment =
      config_.beta2 * estimate.second_moment + (1.0 - config_.beta2) * g.d_coords.cwiseAbs2();
  const Vec6 m_hat = estimate.first_moment / (1.0 - std::pow(config_.beta1, t));
  const Vec6 v_hat = estimate.second_moment / (1.0 - std::pow(config_.beta2, t));
  const double lr = lr_schedule(estimate.step, config_.learning_rate);
  estimate.coords.value -= lr * (m_hat.array() / (v_hat.array().sqrt() + config_.adam_epsilon)).matrix();
  if (!finite(estimate.coords.value) || !estimate.current_pose().matrix().allFinite()) {
    throw DivergedError("pose update produced a non-finite pose at step " + std::to_string(estimate.step),
                        estimate.step);
  }
  estimate.loss_history.push_back(g.loss);
  ++estimate.step;
}

void pose_step(PoseEstimate& estimate, const RadianceField& field, const Camera& camera, const Image& observed,
               const INeRFConfig& config, Rng& rng) {
  PoseOptimizer(field, camera, observed, config).step(estimate, rng);
}

const Pose& PoseTrajectory::pose_at(int step) const {
  if (step < 0) throw InvalidArgument("pose_at: negative step");
  if (static_cast<std::size_t>(step) < entries.size()) return entries[step].pose;
  return final_pose;
}

namespace {

bool converged(const std::vector<double>& losses, int window, double tol) {
  const auto w = static_cast<std::size_t>(window);
  if (losses.size() < 2 * w) return false;
  double recent = 0.0, before = 0.0;
  for (std::size_t i = 0; i < w; ++i) {
    recent += losses[losses.size() - 1 - i];
    before += losses[losses.size() - 1 - w - i];
  }
  const double denom = std::max(std::abs(before), 1e-300);
  return std::abs(recent - before) / denom < tol;
}

}  // namespace

PoseTrajectory estimate_pose(const RadianceField& field, const Camera& camera, const Image& observed,
                             const Pose& initial, const INeRFConfig& config, Rng& rng) {
  PoseOptimizer optimizer(field, camera, observed, config);
  // The jitter only seeds the optimizer; with no steps the input is returned as is.
  PoseEstimate estimate = init_estimate(initial, rng, config.max_steps > 0 ? config.init_std : 0.0);
  PoseTrajectory traj;
  traj.entries.reserve(static_cast<std::size_t>(config.max_steps));
  for (int s = 0; s < config.max_steps; ++s) {
    const ExpCoords coords = estimate.coords;
    const Pose pose = estimate.current_pose();
    try {
      optimizer.step(estimate, rng);
    } catch (const DivergedError& e) {
      traj.final_coords = coords;
      traj.final_pose = pose;
      throw PoseDiverged(e.what(), e.step(), std::move(traj));
    }
    traj.entries.push_back({s, coords, pose, estimate.loss_history.back()});
    if (config.stop_on_convergence &&
        converged(estimate.loss_history, config.convergence_window, config.convergence_tolerance)) {
      break;
    }
  }
  traj.final_coords = estimate.coords;
  traj.final_pose = estimate.current_pose();
  return traj;
}

void write_trajectory_csv(const PoseTrajectory& trajectory, const Pose* ground_truth, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open trajectory CSV for writing", path);
  os << "step,loss,rx,ry,rz,tx,ty,tz,rotation_error,translation_error\n";
  os << std::setprecision(17);
  auto row = [&](int step, const std::string& loss, const ExpCoords& c, const Pose& pose) {
    os << step << ',' << loss;
    for (int i = 0; i < 6; ++i) os << ',' << c.value[i];
    if (ground_truth) {
      const PoseErrors e = pose_errors(pose, *ground_truth);
      os << ',' << e.rotation_deg << ',' << e.translation;
    } else {
      os << ",,";
    }
    os << '\n';
  };
  std::ostringstream loss;
  loss << std::setprecision(17);
  for (const TrajectoryEntry& e : trajectory.entries) {
    loss.str("");
    loss << e.loss;
    row(e.step, loss.str(), e.coords, e.pose);
  }
  row(static_cast<int>(trajectory.entries.size()), "", trajectory.final_coords, trajectory.final_pose);
  if (!os) throw IoError("failed writing trajectory CSV", path);
}

}  // namespace nerfinv
