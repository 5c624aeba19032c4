#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nerfinv/pose_estimator.hpp"

namespace nerfinv {

// One pose-recovery trial: the observation is rendered from the scene at the
// ground-truth pose and the estimate starts from a random perturbation of it.
struct TrialSpec {
  std::string scene;
  Pose ground_truth;
  double rotation_limit_deg = 20.0;
  double translation_limit = 0.1;
  SamplingStrategy strategy = SamplingStrategy::kInterestRegion;
  int batch_size = 2048;
  std::uint64_t seed = 0;
};

struct SceneEntry {
  std::shared_ptr<const RadianceField> field;
  Camera camera;
};

using FieldStore = std::map<std::string, SceneEntry>;

struct BenchConfig {
  // Shared estimator settings; strategy and batch size come from each trial.
  INeRFConfig inerf;
  int log_every = 10;
  double rotation_threshold_deg = 5.0;
  double translation_threshold = 0.05;
  int threads = 1;  // trials run concurrently, each single-threaded

  void validate() const;
};

struct TrialResult {
  TrialSpec spec;
  PoseErrors initial;
  PoseErrors final;
  std::vector<PoseErrors> logged;  // errors at each BenchReport::steps entry
  bool diverged = false;
  int diverged_step = -1;
  int steps_run = 0;
};

// Bin i counts values in [edges[i], edges[i+1]); values below the first edge
// go to the first bin and values at or beyond the last edge to the last, so
// the counts always sum to the number of values.
struct Histogram {
  std::vector<double> edges;
  std::vector<int> counts;
};

struct HistogramPair {
  Histogram before;
  Histogram after;
};

// Throws InvalidArgument on empty input or fewer than two strictly increasing
// edges.
HistogramPair make_histogram(const std::vector<double>& before, const std::vector<double>& after,
                             const std::vector<double>& edges);

struct BenchReport {
  std::vector<int> steps;  // 0, log_every, ..., max_steps
  std::vector<TrialResult> trials;
  // Fractions of trials under the thresholds at each logged step.
  std::vector<double> rotation_success;
  std::vector<double> translation_success;
  std::vector<double> success;  // both thresholds at once
  HistogramPair rotation_histogram;
  HistogramPair translation_histogram;
  double rotation_threshold_deg = 5.0;
  double translation_threshold = 0.05;

  // Success fraction at the final step computed from per-trial final errors.
  double final_success() const;
  // Success fraction at a logged step; throws if `step` was not logged.
  double success_at(int step) const;

  std::string to_json() const;
  // One row per trial per logged step.
  std::string to_csv() const;
};

// Runs every trial (a diverged trial counts as a failure from the divergence
// step on) and aggregates in trial order, so the report depends only on the
// specs, fields and seeds.
BenchReport run_benchmark(const std::vector<TrialSpec>& specs, const FieldStore& store, const BenchConfig& config);

// Histogram bin edges used in reports: degrees and scene units.
const std::vector<double>& rotation_histogram_edges();
const std::vector<double>& translation_histogram_edges();

// The desk-scale suite: the analytic toy scene seen by a 100x100 camera with a
// 1 rad horizontal field of view, ground truths cycling over 20 hemisphere
// views at radius 4, and trial i seeded with base_seed + i.
FieldStore toy_store(int image_size = 100);
std::vector<TrialSpec> toy_trials(int count, SamplingStrategy strategy, int batch_size, std::uint64_t base_seed = 0,
                                  double rotation_limit_deg = 20.0, double translation_limit = 0.1);

}  // namespace nerfinv
