#include "nerfinv/trainer.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <limits>

#include <json.hpp>

#include "nerfinv/parallel.hpp"

namespace nerfinv {
namespace {

constexpr std::size_t kRaysPerChunk = 16;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

bool all_finite(const ParamVector& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

void TrainConfig::validate() const {
  if (iterations < 1) throw InvalidArgument("TrainConfig: iterations must be >= 1");
  if (rays_per_batch < 1) throw InvalidArgument("TrainConfig: rays_per_batch must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("TrainConfig: learning rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw InvalidArgument("TrainConfig: lr_decay must lie in (0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("TrainConfig: Adam betas must lie in [0, 1)");
  }
  const MlpArchitecture& a = architecture;
  if (a.pos_frequencies < 0 || a.dir_frequencies < 0 || a.hidden_width < 1 || a.hidden_layers < 1 ||
      a.color_width < 1) {
    throw InvalidArgument("TrainConfig: invalid MLP architecture");
  }
  render.validate();
}

double batch_loss_and_grads(const MlpField& field, std::span<const TrainingRay> rays, const RenderConfig& render,
                            std::uint64_t seed, int threads, FieldParams* grad) {
  if (rays.empty()) throw InvalidArgument("batch_loss_and_grads: empty batch");
  const double inv_b = 1.0 / static_cast<double>(rays.size());
  const std::size_t chunks = (rays.size() + kRaysPerChunk - 1) / kRaysPerChunk;
  std::vector<double> losses(chunks, 0.0);
  std::vector<FieldParams> partial(grad ? chunks : 0);

  parallel_for(rays.size(), threads, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    FieldParams* g = nullptr;
    if (grad) {
      partial[chunk] = field.params().zeros_like();
      g = &partial[chunk];
    }
    double loss = 0.0;
    std::vector<double> g_density;
    std::vector<Rgb> g_color;
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng(split_seed(seed, i));
      const RayTrace trace = trace_ray(field, rays[i].ray, render, render.stratified ? &rng : nullptr);
      const Vec3 r = trace.color - rays[i].color;
      loss += inv_b * r.squaredNorm();
      if (!g) continue;
      g_density.resize(trace.samples.size());
      g_color.resize(trace.samples.size());
      composite_backward(trace, render.background, 2.0 * inv_b * r, g_density, g_color);
      field.accumulate_param_grads(trace.points, trace.direction, g_density, g_color, *g);
    }
    losses[chunk] = loss;
  }, kRaysPerChunk);

  double total = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    total += losses[c];
    if (grad) {
      ParamVector& dst = grad->values();
      const ParamVector& src = partial[c].values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
  return total;
}

TrainResult train_field(const PosedDataset& dataset, const TrainConfig& config) {
  config.validate();
  dataset.validate();
  if (dataset.frames.size() < 2) throw InvalidArgument("train_field: needs at least two posed frames");

  MlpField field(FieldParams::random(config.architecture, config.seed));
  const std::size_t n_params = field.params().size();
  std::vector<double> m(n_params, 0.0), v(n_params, 0.0);
  Rng rng(split_seed(config.seed, 0x7261797300ULL));
  std::uniform_int_distribution<std::size_t> pick_frame(0, dataset.frames.size() - 1);
  std::uniform_int_distribution<int> pick_u(0, dataset.camera.width - 1);
  std::uniform_int_distribution<int> pick_v(0, dataset.camera.height - 1);

  TrainResult result;
  result.losses.reserve(static_cast<std::size_t>(config.iterations));
  std::vector<TrainingRay> rays(static_cast<std::size_t>(config.rays_per_batch));
  for (int it = 0; it < config.iterations; ++it) {
    for (TrainingRay& r : rays) {
      const Frame& f = dataset.frames[pick_frame(rng)];
      const Pixel p{pick_u(rng), pick_v(rng)};
      r.ray = pixel_ray(dataset.camera, f.pose, p);
      r.color = f.image.at(p.u, p.v);
    }
    FieldParams grad = field.params().zeros_like();
    const double loss = batch_loss_and_grads(field, rays, config.render, rng(), config.threads, &grad);
    if (!std::isfinite(loss) || !all_finite(grad.values())) {
      throw TrainingError("training diverged at iteration " + std::to_string(it), it);
    }
    result.losses.push_back(loss);

    const int t = it + 1;
    const double lr = config.learning_rate * std::pow(config.lr_decay, static_cast<double>(it) / config.iterations);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    ParamVector& p = field.mutable_params().values();
    const ParamVector& g = grad.values();
    for (std::size_t k = 0; k < n_params; ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config.adam_epsilon);
    }
  }
  result.params = field.params();
  return result;
}

double psnr(const Image& a, const Image& b) {
  const double mse = image_mse(a, b);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double mean_psnr(const RadianceField& field, const Camera& camera, std::span<const Frame> frames,
                 const RenderConfig& render, int threads) {
  if (frames.empty()) throw InvalidArgument("mean_psnr: no frames");
  RenderConfig midpoint = render;
  midpoint.stratified = false;
  double sum = 0.0;
  for (const Frame& f : frames) {
    Rng unused(0);
    sum += psnr(render_image(field, camera, f.pose, midpoint, unused, threads), f.image);
  }
  return sum / static_cast<double>(frames.size());
}

std::size_t nearest_frame(std::span<const Frame> frames, const Image& image) {
  if (frames.empty()) throw InvalidArgument("nearest_frame: no frames");
  std::size_t best = 0;
  double best_mse = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const double mse = image_mse(frames[i].image, image);
    if (mse < best_mse) {
      best_mse = mse;
      best = i;
    }
  }
  return best;
}

std::string SelfSupervisionReport::to_json() const {
  auto number = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["psnr"] = {{"labeled", number(psnr_labeled)},
               {"labeled_plus_estimated", number(psnr_augmented)},
               {"fully_labeled", psnr_full ? number(*psnr_full) : nlohmann::json(nullptr)}};
  j["labels"] = nlohmann::json::array();
  for (const PoseLabel& l : labels) {
    nlohmann::json e;
    e["name"] = l.name;
    e["init_frame"] = l.init_frame;
    nlohmann::json rows = nlohmann::json::array();
    const Mat4 m = l.estimate.matrix();
    for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
    e["transform_matrix"] = rows;
    if (l.error) {
      e["rotation_error_deg"] = l.error->rotation_deg;
      e["translation_error"] = l.error->translation;
    }
    j["labels"].push_back(e);
  }
  j["seconds"] = {{"train_labeled", seconds_train_labeled},
                  {"estimate", seconds_estimate},
                  {"retrain", seconds_retrain},
                  {"train_full", seconds_train_full}};
  return j.dump(2);
}

SelfSupervisionResult self_supervise(const PosedDataset& labeled, const std::vector<UnposedImage>& unposed,
                                     std::span<const Frame> evaluation, const SelfSupervisionConfig& config) {
  if (labeled.frames.empty()) throw InvalidArgument("self_supervise: labeled set is empty");
  SelfSupervisionResult out;
  SelfSupervisionReport& report = out.report;

  auto stage = [](const std::string& tag, auto&& fn) {
    try {
      return fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      std::throw_with_nested(StageError(tag, e.what()));
    }
  };
  auto evaluate = [&](const FieldParams& params) {
    return stage("evaluate", [&] {
      return mean_psnr(MlpField(params), labeled.camera, evaluation, config.train.render, config.threads);
    });
  };

  auto start = std::chrono::steady_clock::now();
  const FieldParams base = stage("train_labeled", [&] { return train_field(labeled, config.train).params; });
  report.seconds_train_labeled = seconds_since(start);
  report.psnr_labeled = evaluate(base);

  if (unposed.empty()) {
    out.params = base;
    report.psnr_augmented = report.psnr_labeled;
    return out;
  }

  start = std::chrono::steady_clock::now();
  report.labels.resize(unposed.size());
  stage("estimate", [&] {
    const MlpField field(base);
    INeRFConfig inerf = config.inerf;
    inerf.threads = 1;
    parallel_for(unposed.size(), config.threads, [&](std::size_t, std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        const UnposedImage& u = unposed[i];
        const std::size_t init = nearest_frame(labeled.frames, u.image);
        Rng rng(split_seed(config.train.seed, 0x696e65726600ULL + i));
        const PoseTrajectory traj =
            estimate_pose(field, labeled.camera, u.image, labeled.frames[init].pose, inerf, rng);
        PoseLabel& label = report.labels[i];
        label.name = u.name;
        label.init_frame = labeled.frames[init].name;
        label.estimate = traj.final_pose;
        if (u.ground_truth) label.error = pose_errors(traj.final_pose, *u.ground_truth);
      }
    });
    return 0;
  });
  report.seconds_estimate = seconds_since(start);

  start = std::chrono::steady_clock::now();
  PosedDataset augmented = labeled;
  for (std::size_t i = 0; i < unposed.size(); ++i) {
    augmented.frames.push_back({unposed[i].name, unposed[i].image, report.labels[i].estimate});
  }
  augmented.unposed.clear();
  out.params = stage("retrain", [&] { return train_field(augmented, config.train).params; });
  report.seconds_retrain = seconds_since(start);
  report.psnr_augmented = evaluate(out.params);

  bool all_known = true;
  for (const UnposedImage& u : unposed) all_known = all_known && u.ground_truth.has_value();
  if (all_known) {
    start = std::chrono::steady_clock::now();
    PosedDataset full = labeled;
    for (const UnposedImage& u : unposed) full.frames.push_back({u.name, u.image, *u.ground_truth});
    full.unposed.clear();
    const FieldParams reference = stage("train_full", [&] { return train_field(full, config.train).params; });
    report.seconds_train_full = seconds_since(start);
    report.psnr_full = evaluate(reference);
  }
  return out;
}

}  // namespace nerfinv
