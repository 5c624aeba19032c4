#include "nerfinv/bench.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "nerfinv/analytic_scene.hpp"
#include "nerfinv/dataset.hpp"
#include "nerfinv/parallel.hpp"

namespace nerfinv {
namespace {

bool below(const PoseErrors& e, double rot, double trans) { return e.rotation_deg < rot && e.translation < trans; }

// A diverged trial keeps its last finite pose for reporting but counts as a
// failure from the divergence step on.
bool succeeded(const TrialResult& t, int step, const PoseErrors& e, double rot, double trans) {
  if (t.diverged && step >= t.diverged_step) return false;
  return below(e, rot, trans);
}

Histogram bin(const std::vector<double>& values, const std::vector<double>& edges) {
  Histogram h{edges, std::vector<int>(edges.size() - 1, 0)};
  for (double v : values) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), v);
    auto i = static_cast<std::ptrdiff_t>(it - edges.begin()) - 1;
    i = std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(h.counts.size()) - 1);
    ++h.counts[static_cast<std::size_t>(i)];
  }
  return h;
}

nlohmann::json histogram_json(const Histogram& h) { return {{"edges", h.edges}, {"counts", h.counts}}; }

nlohmann::json errors_json(const PoseErrors& e) {
  return {{"rotation_deg", e.rotation_deg}, {"translation", e.translation}};
}

TrialResult run_trial(const TrialSpec& spec, const SceneEntry& scene, const BenchConfig& config,
                      const std::vector<int>& steps) {
  Rng rng(spec.seed);
  INeRFConfig inerf = config.inerf;
  inerf.strategy = spec.strategy;
  inerf.batch_size = spec.batch_size;
  inerf.threads = 1;
  RenderConfig observe = inerf.render;
  observe.stratified = false;
  const Image observed = render_image(*scene.field, scene.camera, spec.ground_truth, observe, rng);
  const Pose init = perturb_pose(spec.ground_truth, spec.rotation_limit_deg, spec.translation_limit, rng);

  TrialResult r;
  r.spec = spec;
  r.initial = pose_errors(init, spec.ground_truth);
  PoseTrajectory traj;
  try {
    traj = estimate_pose(*scene.field, scene.camera, observed, init, inerf, rng);
  } catch (const PoseDiverged& e) {
    traj = e.partial();
    r.diverged = true;
    r.diverged_step = e.step();
  }
  r.steps_run = static_cast<int>(traj.entries.size());
  r.final = pose_errors(traj.final_pose, spec.ground_truth);
  for (int s : steps) r.logged.push_back(pose_errors(traj.pose_at(s), spec.ground_truth));
  return r;
}

}  // namespace

void BenchConfig::validate() const {
  inerf.validate();
  if (log_every < 1) throw InvalidArgument("BenchConfig: log_every must be >= 1");
  if (!(rotation_threshold_deg > 0.0) || !(translation_threshold > 0.0)) {
    throw InvalidArgument("BenchConfig: success thresholds must be positive");
  }
}

HistogramPair make_histogram(const std::vector<double>& before, const std::vector<double>& after,
                             const std::vector<double>& edges) {
  if (before.empty() || after.empty()) throw InvalidArgument("make_histogram: empty error list");
  if (edges.size() < 2) throw InvalidArgument("make_histogram: need at least two bin edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw InvalidArgument("make_histogram: bin edges must increase strictly");
  }
  return {bin(before, edges), bin(after, edges)};
}

const std::vector<double>& rotation_histogram_edges() {
  static const std::vector<double> edges{0, 5, 10, 15, 20, 25, 30, 35, 40};
  return edges;
}

const std::vector<double>& translation_histogram_edges() {
  static const std::vector<double> edges{0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4};
  return edges;
}

double BenchReport::final_success() const {
  if (trials.empty()) return 0.0;
  int ok = 0;
  for (const TrialResult& t : trials) {
    ok += succeeded(t, t.steps_run, t.final, rotation_threshold_deg, translation_threshold) ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(trials.size());
}

double BenchReport::success_at(int step) const {
  const auto it = std::find(steps.begin(), steps.end(), step);
  if (it == steps.end()) throw InvalidArgument("success_at: step " + std::to_string(step) + " was not logged");
  return success[static_cast<std::size_t>(it - steps.begin())];
}

BenchReport run_benchmark(const std::vector<TrialSpec>& specs, const FieldStore& store, const BenchConfig& config) {
  config.validate();
  for (const TrialSpec& s : specs) {
    if (!store.contains(s.scene)) throw InvalidArgument("run_benchmark: unknown scene '" + s.scene + "'");
    if (s.rotation_limit_deg < 0.0 || s.rotation_limit_deg >= 180.0 || s.translation_limit < 0.0) {
      throw InvalidArgument("run_benchmark: perturbation limits must lie in [0, 180) degrees and >= 0 units");
    }
    if (!s.ground_truth.is_valid(1e-6)) throw InvalidArgument("run_benchmark: invalid ground-truth pose");
  }

  BenchReport report;
  report.rotation_threshold_deg = config.rotation_threshold_deg;
  report.translation_threshold = config.translation_threshold;
  const int max_steps = config.inerf.max_steps;
  for (int s = 0; s <= max_steps; s += config.log_every) report.steps.push_back(s);
  if (report.steps.back() != max_steps) report.steps.push_back(max_steps);

  report.trials.resize(specs.size());
  parallel_for(specs.size(), config.threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      report.trials[i] = run_trial(specs[i], store.at(specs[i].scene), config, report.steps);
    }
  });

  const double n = static_cast<double>(std::max<std::size_t>(specs.size(), 1));
  for (std::size_t k = 0; k < report.steps.size(); ++k) {
    int rot = 0, trans = 0, both = 0;
    for (const TrialResult& t : report.trials) {
      const PoseErrors& e = t.logged[k];
      const bool alive = !(t.diverged && report.steps[k] >= t.diverged_step);
      rot += alive && e.rotation_deg < config.rotation_threshold_deg;
      trans += alive && e.translation < config.translation_threshold;
      both += succeeded(t, report.steps[k], e, config.rotation_threshold_deg, config.translation_threshold);
    }
    report.rotation_success.push_back(rot / n);
    report.translation_success.push_back(trans / n);
    report.success.push_back(both / n);
  }

  if (!specs.empty()) {
    std::vector<double> rot_before, rot_after, trans_before, trans_after;
    for (const TrialResult& t : report.trials) {
      rot_before.push_back(t.initial.rotation_deg);
      rot_after.push_back(t.final.rotation_deg);
      trans_before.push_back(t.initial.translation);
      trans_after.push_back(t.final.translation);
    }
    report.rotation_histogram = make_histogram(rot_before, rot_after, rotation_histogram_edges());
    report.translation_histogram = make_histogram(trans_before, trans_after, translation_histogram_edges());
  }
  return report;
}

std::string BenchReport::to_json() const {
  nlohmann::json j;
  j["thresholds"] = {{"rotation_deg", rotation_threshold_deg}, {"translation", translation_threshold}};
  j["steps"] = steps;
  j["success"] = success;
  j["rotation_success"] = rotation_success;
  j["translation_success"] = translation_success;
  j["final_success"] = final_success();
  j["trials"] = nlohmann::json::array();
  for (const TrialResult& t : trials) {
    j["trials"].push_back({{"scene", t.spec.scene},
                           {"strategy", to_string(t.spec.strategy)},
                           {"batch_size", t.spec.batch_size},
                           {"seed", t.spec.seed},
                           {"rotation_limit_deg", t.spec.rotation_limit_deg},
                           {"translation_limit", t.spec.translation_limit},
                           {"initial", errors_json(t.initial)},
                           {"final", errors_json(t.final)},
                           {"steps_run", t.steps_run},
                           {"diverged", t.diverged},
                           {"diverged_step", t.diverged ? nlohmann::json(t.diverged_step) : nlohmann::json(nullptr)}});
  }
  j["histograms"] = {{"rotation_deg",
                      {{"before", histogram_json(rotation_histogram.before)},
                       {"after", histogram_json(rotation_histogram.after)}}},
                     {"translation",
                      {{"before", histogram_json(translation_histogram.before)},
                       {"after", histogram_json(translation_histogram.after)}}}};
  return j.dump(2);
}

std::string BenchReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "trial,scene,strategy,batch_size,seed,step,rotation_error_deg,translation_error,success\n";
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const TrialResult& t = trials[i];
    for (std::size_t k = 0; k < steps.size(); ++k) {
      const PoseErrors& e = t.logged[k];
      os << i << ',' << t.spec.scene << ',' << to_string(t.spec.strategy) << ',' << t.spec.batch_size << ','
         << t.spec.seed << ',' << steps[k] << ',' << e.rotation_deg << ',' << e.translation << ','
         << (succeeded(t, steps[k], e, rotation_threshold_deg, translation_threshold) ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

FieldStore toy_store(int image_size) {
  FieldStore store;
  store["toy"] = {std::make_shared<AnalyticScene>(AnalyticScene::toy()),
                  Camera::from_fov(image_size, image_size, 1.0, 2.0, 6.0)};
  return store;
}

std::vector<TrialSpec> toy_trials(int count, SamplingStrategy strategy, int batch_size, std::uint64_t base_seed,
                                  double rotation_limit_deg, double translation_limit) {
  if (count < 0) throw InvalidArgument("toy_trials: count must be >= 0");
  const std::vector<Pose> views = hemisphere_poses(20, 4.0, 20.0, 60.0);
  std::vector<TrialSpec> specs;
  for (int i = 0; i < count; ++i) {
    specs.push_back({"toy", views[static_cast<std::size_t>(i) % views.size()], rotation_limit_deg, translation_limit,
                     strategy, batch_size, base_seed + static_cast<std::uint64_t>(i)});
  }
  return specs;
}

}  // namespace nerfinv
