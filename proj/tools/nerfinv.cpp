// nerfinv: dataset generation, field training, pose estimation, benchmarks and
// self-supervised pose labeling from the command line.
//
// Exit codes: 0 success, 1 unexpected failure, 2 invalid arguments, 3 failure
// to load an input, 4 divergence.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>

#include <Eigen/Core>
#include <CLI11.hpp>
#include <json.hpp>

#include "nerfinv/analytic_scene.hpp"
#include "nerfinv/bench.hpp"
#include "nerfinv/dataset.hpp"
#include "nerfinv/parallel.hpp"
#include "nerfinv/trainer.hpp"
#include "options.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nerfinv;

namespace {

constexpr const char* kVersion = "0.1.0";

enum ExitCode { kOk = 0, kFailure = 1, kBadArguments = 2, kLoadFailure = 3, kDiverged = 4 };

struct Run {
  std::string command;
  json settings;
  std::uint64_t seed = 0;
  int threads = 1;
  fs::path out;
  std::vector<std::string> artifacts;

  std::string path(const std::string& name) {
    artifacts.push_back(name);
    return (out / name).string();
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write file", path);
  os << text;
  if (!os) throw IoError("failed writing file", path);
}

std::shared_ptr<const RadianceField> make_field(const json& s) {
  const std::string field = s.at("field").get<std::string>();
  if (!field.empty()) return std::make_shared<MlpField>(load_field_params(field));
  const std::string scene = s.at("scene").get<std::string>();
  if (scene == "toy") return std::make_shared<AnalyticScene>(AnalyticScene::toy());
  if (scene == "sphere") {
    return std::make_shared<AnalyticScene>(AnalyticScene::single_sphere(Vec3::Zero(), 0.7, 25.0, Rgb(0.85, 0.3, 0.2)));
  }
  throw InvalidArgument("unknown scene '" + scene + "' (expected toy or sphere, or pass --field)");
}

Camera make_camera(const json& s, int width, int height) {
  Camera c = Camera::from_fov(width, height, s.at("fov").get<double>(), s.at("near").get<double>(),
                              s.at("far").get<double>());
  c.validate();
  return c;
}

RenderConfig make_render(const json& s) {
  RenderConfig r;
  r.n_samples = s.at("samples").get<int>();
  r.stratified = s.contains("stratified") && s.at("stratified").get<bool>();
  r.validate();
  return r;
}

void add_scene_options(cli::Options& o) {
  o.add("scene", "toy", "analytic scene: toy or sphere");
  o.add("field", "", "trained field file (.nrf); replaces --scene");
}

void add_camera_options(cli::Options& o, bool with_size) {
  if (with_size) {
    o.add("width", 100, "image width in pixels");
    o.add("height", 100, "image height in pixels");
  }
  o.add("fov", 1.0, "horizontal field of view in radians (camera_angle_x)");
  o.add("near", 2.0, "near bound along each ray");
  o.add("far", 6.0, "far bound along each ray");
}

TrainConfig make_train_config(const json& s, const Run& run) {
  TrainConfig c;
  c.iterations = s.at("iterations").get<int>();
  c.rays_per_batch = s.at("rays").get<int>();
  c.learning_rate = s.at("lr").get<double>();
  c.lr_decay = s.at("lr_decay").get<double>();
  c.render.n_samples = s.at("train_samples").get<int>();
  c.architecture.pos_frequencies = s.at("pos_frequencies").get<int>();
  c.architecture.dir_frequencies = s.at("dir_frequencies").get<int>();
  c.architecture.hidden_width = s.at("hidden_width").get<int>();
  c.architecture.hidden_layers = s.at("hidden_layers").get<int>();
  c.architecture.color_width = s.at("color_width").get<int>();
  c.seed = run.seed;
  c.threads = run.threads;
  c.validate();
  return c;
}

void add_train_options(cli::Options& o) {
  o.add("iterations", 2000, "training iterations");
  o.add("rays", 256, "rays per training batch");
  o.add("lr", 5e-3, "initial Adam learning rate");
  o.add("lr_decay", 0.1, "learning-rate factor reached at the last iteration");
  o.add("train_samples", 64, "stratified samples per training ray");
  o.add("pos_frequencies", 6, "positional encoding frequencies");
  o.add("dir_frequencies", 2, "direction encoding frequencies");
  o.add("hidden_width", 64, "trunk width");
  o.add("hidden_layers", 4, "trunk depth");
  o.add("color_width", 32, "color branch width");
}

INeRFConfig make_inerf_config(const json& s) {
  INeRFConfig c;
  c.batch_size = s.at("batch_size").get<int>();
  c.max_steps = s.at("max_steps").get<int>();
  c.strategy = parse_strategy(s.at("strategy").get<std::string>());
  c.loss = parse_loss_mode(s.at("loss").get<std::string>());
  c.learning_rate = s.at("inerf_lr").get<double>();
  c.init_std = s.at("init_std").get<double>();
  c.dilation_iterations = s.at("dilation").get<int>();
  c.render.n_samples = s.at("samples").get<int>();
  c.render.stratified = s.at("stratified").get<bool>();
  c.validate();
  return c;
}

void add_inerf_options(cli::Options& o, int default_batch, int default_samples) {
  o.add("batch_size", default_batch, "rays per pose step");
  o.add("max_steps", 300, "pose optimization steps");
  o.add("strategy", "interest_region", "ray sampling: random, interest_point or interest_region");
  o.add("loss", "rgb", "photometric loss: rgb or yuv_uv");
  o.add("inerf_lr", 0.01, "initial Adam learning rate for the pose");
  o.add("init_std", 1e-6, "standard deviation of the initial exponential coordinates");
  o.add("dilation", -1, "dilation iterations for interest regions (-1: batch-size default)");
  o.add("samples", default_samples, "quadrature samples per ray");
  o.add("stratified", false, "jitter quadrature samples during pose optimization");
}

// ---- subcommands ----------------------------------------------------------

int cmd_generate(Run& run) {
  const json& s = run.settings;
  const auto field = make_field(s);
  const Camera camera = make_camera(s, s.at("width").get<int>(), s.at("height").get<int>());
  const std::vector<Pose> poses =
      hemisphere_poses(s.at("views").get<int>(), s.at("radius").get<double>(), s.at("min_elevation").get<double>(),
                       s.at("max_elevation").get<double>());
  const PosedDataset ds = render_dataset(*field, camera, poses, make_render(s), run.threads);
  write_transforms(ds, run.out.string());
  run.artifacts.push_back("transforms.json");
  for (const Frame& f : ds.frames) run.artifacts.push_back(f.name + ".png");
  return kOk;
}

int cmd_render(Run& run) {
  const json& s = run.settings;
  const auto field = make_field(s);
  const Camera camera = make_camera(s, s.at("width").get<int>(), s.at("height").get<int>());
  const Pose pose = read_pose_json(s.at("pose").get<std::string>());
  Rng rng(run.seed);
  write_png(render_image(*field, camera, pose, make_render(s), rng, run.threads), run.path("render.png"));
  return kOk;
}

int cmd_train(Run& run) {
  const json& s = run.settings;
  const PosedDataset ds = read_transforms(s.at("data").get<std::string>());
  const TrainConfig cfg = make_train_config(s, run);
  const TrainResult result = train_field(ds, cfg);
  save_field_params(result.params, run.path("field.nrf"));

  std::ostringstream csv;
  csv << std::setprecision(17) << "iteration,loss\n";
  for (std::size_t i = 0; i < result.losses.size(); ++i) csv << i << ',' << result.losses[i] << '\n';
  write_text(run.path("losses.csv"), csv.str());

  const std::size_t tenth = std::max<std::size_t>(1, result.losses.size() / 10);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < tenth; ++i) {
    first += result.losses[i] / tenth;
    last += result.losses[result.losses.size() - 1 - i] / tenth;
  }
  const double train_psnr = mean_psnr(MlpField(result.params), ds.camera, ds.frames, cfg.render, run.threads);
  json report{{"frames", ds.frames.size()},
              {"iterations", cfg.iterations},
              {"loss_first_tenth", first},
              {"loss_last_tenth", last},
              {"train_psnr", std::isfinite(train_psnr) ? json(train_psnr) : json(nullptr)}};
  write_text(run.path("train_report.json"), report.dump(2) + "\n");
  return kOk;
}

int cmd_estimate(Run& run) {
  const json& s = run.settings;
  const auto field = make_field(s);
  const Image observed = read_png(s.at("image").get<std::string>());
  const Camera camera = make_camera(s, observed.width(), observed.height());
  const Pose initial = read_pose_json(s.at("init").get<std::string>());
  std::optional<Pose> truth;
  if (!s.at("gt").get<std::string>().empty()) truth = read_pose_json(s.at("gt").get<std::string>());
  INeRFConfig cfg = make_inerf_config(s);
  cfg.threads = run.threads;
  Rng rng(run.seed);

  PoseTrajectory traj;
  int status = kOk;
  try {
    traj = estimate_pose(*field, camera, observed, initial, cfg, rng);
  } catch (const PoseDiverged& e) {
    std::cerr << "nerfinv: " << e.what() << '\n';
    traj = e.partial();
    status = kDiverged;
  }
  write_trajectory_csv(traj, truth ? &*truth : nullptr, run.path("trajectory.csv"));
  write_pose_json(traj.final_pose, run.path("pose.json"));

  json summary{{"steps_run", traj.entries.size()}, {"diverged", status == kDiverged}};
  if (!traj.entries.empty()) summary["final_loss"] = traj.entries.back().loss;
  if (truth) {
    const PoseErrors e = pose_errors(traj.final_pose, *truth);
    summary["rotation_error_deg"] = e.rotation_deg;
    summary["translation_error"] = e.translation;
  }
  write_text(run.path("summary.json"), summary.dump(2) + "\n");

  const int every = s.at("render_every").get<int>();
  if (every > 0) {
    fs::create_directories(run.out / "renders");
    RenderConfig midpoint = cfg.render;
    midpoint.stratified = false;
    const int last = static_cast<int>(traj.entries.size());
    for (int step = 0; step <= last; step = step == last ? last + 1 : std::min(step + every, last)) {
      char name[32];
      std::snprintf(name, sizeof name, "renders/step_%04d.png", step);
      Rng unused(0);
      write_png(render_image(*field, camera, traj.pose_at(step), midpoint, unused, run.threads), run.path(name));
    }
  }
  return status;
}

int cmd_benchmark(Run& run) {
  const json& s = run.settings;
  const int size = s.at("image_size").get<int>();
  FieldStore store;
  std::string scene = "toy";
  if (!s.at("field").get<std::string>().empty() || s.at("scene").get<std::string>() != "toy") {
    scene = "custom";
    store[scene] = {make_field(s), make_camera(s, size, size)};
  } else {
    store = toy_store(size);
    store.at(scene).camera = make_camera(s, size, size);
  }
  std::vector<TrialSpec> specs =
      toy_trials(s.at("trials").get<int>(), parse_strategy(s.at("strategy").get<std::string>()),
                 s.at("batch_size").get<int>(), run.seed, s.at("rotation_limit").get<double>(),
                 s.at("translation_limit").get<double>());
  for (TrialSpec& t : specs) t.scene = scene;

  BenchConfig cfg;
  cfg.inerf = make_inerf_config(s);
  cfg.log_every = s.at("log_every").get<int>();
  cfg.rotation_threshold_deg = s.at("rotation_threshold").get<double>();
  cfg.translation_threshold = s.at("translation_threshold").get<double>();
  cfg.threads = run.threads;
  const BenchReport report = run_benchmark(specs, store, cfg);
  write_text(run.path("report.json"), report.to_json() + "\n");
  write_text(run.path("report.csv"), report.to_csv());
  std::cout << "final success " << report.final_success() << " over " << report.trials.size() << " trials\n";
  return kOk;
}

int cmd_selfsup(Run& run) {
  const json& s = run.settings;
  const PosedDataset ds = read_transforms(s.at("data").get<std::string>());
  // Views cycle through labeled, labeled, unposed, held out.
  PosedDataset labeled{ds.camera, {}, {}};
  std::vector<UnposedImage> unposed;
  std::vector<Frame> evaluation;
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const Frame& f = ds.frames[i];
    switch (i % 4) {
      case 2:
        unposed.push_back({f.name, f.image, f.pose});
        break;
      case 3:
        evaluation.push_back(f);
        break;
      default:
        labeled.frames.push_back(f);
    }
  }
  if (evaluation.empty()) throw InvalidArgument("selfsup: dataset needs at least 4 frames");

  SelfSupervisionConfig cfg;
  cfg.train = make_train_config(s, run);
  cfg.inerf = make_inerf_config(s);
  cfg.threads = run.threads;
  const SelfSupervisionResult result = self_supervise(labeled, unposed, evaluation, cfg);
  save_field_params(result.params, run.path("field.nrf"));
  write_text(run.path("selfsup_report.json"), result.report.to_json() + "\n");
  return kOk;
}

// ---- error classification ---------------------------------------------------

int classify(const std::exception& e) {
  if (const auto* stage = dynamic_cast<const StageError*>(&e)) {
    try {
      std::rethrow_if_nested(*stage);
    } catch (const std::exception& inner) {
      return classify(inner);
    }
    return kFailure;
  }
  if (dynamic_cast<const InvalidArgument*>(&e) || dynamic_cast<const CLI::Error*>(&e)) return kBadArguments;
  if (dynamic_cast<const IoError*>(&e)) return kLoadFailure;
  if (dynamic_cast<const DivergedError*>(&e) || dynamic_cast<const TrainingError*>(&e)) return kDiverged;
  return kFailure;
}

void write_manifest(const Run& run, int status, double seconds, const std::vector<std::string>& argv) {
  json m{{"tool", "nerfinv"},
         {"version", kVersion},
         {"command", run.command},
         {"argv", argv},
         {"seed", run.seed},
         {"threads", run.threads},
         {"config", run.settings},
         {"libraries",
          {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                         std::to_string(EIGEN_MINOR_VERSION)},
           {"libpng", png_library_version()}}},
         {"artifacts", run.artifacts},
         {"exit_code", status},
         {"wall_clock_seconds", seconds}};
  write_text((run.out / "manifest.json").string(), m.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Camera pose estimation by inverting radiance fields"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  struct Command {
    CLI::App* app;
    std::unique_ptr<cli::Options> options;
    std::function<int(Run&)> run;
  };
  std::vector<Command> commands;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out;

  auto add = [&](const std::string& name, const std::string& help, std::function<int(Run&)> fn,
                 const std::function<void(cli::Options&)>& options) {
    CLI::App* sub = app.add_subcommand(name, help);
    auto o = std::make_unique<cli::Options>(sub);
    options(*o);
    sub->add_option("--seed", seed, "random seed (default 0)");
    sub->add_option("--threads", threads, "worker threads, 0 for all cores (default 0)");
    sub->add_option("--out", out, "run directory for artifacts and manifest.json")->required();
    commands.push_back({sub, std::move(o), std::move(fn)});
  };

  add("generate", "render a posed dataset (transforms.json + PNGs) from a scene", cmd_generate, [](cli::Options& o) {
    add_scene_options(o);
    add_camera_options(o, true);
    o.add("views", 16, "number of views");
    o.add("radius", 4.0, "camera distance from the origin");
    o.add("min_elevation", 20.0, "lowest camera elevation in degrees");
    o.add("max_elevation", 60.0, "highest camera elevation in degrees");
    o.add("samples", 128, "quadrature samples per ray");
  });
  add("render", "render one view of a scene or trained field", cmd_render, [](cli::Options& o) {
    add_scene_options(o);
    add_camera_options(o, true);
    o.add("pose", "", "camera-to-world pose JSON");
    o.add("samples", 128, "quadrature samples per ray");
    o.add("stratified", false, "jitter quadrature samples");
  });
  add("train", "train a radiance field on a posed dataset", cmd_train, [](cli::Options& o) {
    o.add("data", "", "dataset directory with transforms.json");
    add_train_options(o);
  });
  add("estimate", "estimate the camera pose of one image", cmd_estimate, [](cli::Options& o) {
    add_scene_options(o);
    add_camera_options(o, false);
    o.add("image", "", "observed PNG");
    o.add("init", "", "initial pose JSON");
    o.add("gt", "", "optional ground-truth pose JSON for error columns");
    add_inerf_options(o, 2048, 128);
    o.add("render_every", 0, "write a render of the estimate every k steps (0: none)");
  });
  add("benchmark", "run perturbed pose-recovery trials and aggregate success curves", cmd_benchmark,
      [](cli::Options& o) {
        add_scene_options(o);
        add_camera_options(o, false);
        o.add("image_size", 100, "square image size in pixels");
        o.add("trials", 20, "number of trials");
        o.add("rotation_limit", 20.0, "rotation perturbation limit in degrees");
        o.add("translation_limit", 0.1, "per-axis translation perturbation limit");
        o.add("log_every", 10, "step interval of the success curves");
        o.add("rotation_threshold", 5.0, "success threshold in degrees");
        o.add("translation_threshold", 0.05, "success threshold in scene units");
        add_inerf_options(o, 2048, 128);
      });
  add("selfsup", "train with a fraction of poses, label the rest by pose estimation, retrain", cmd_selfsup,
      [](cli::Options& o) {
        o.add("data", "", "dataset directory with transforms.json");
        add_train_options(o);
        add_inerf_options(o, 512, 64);
      });

  std::vector<std::string> args(argv, argv + argc);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadArguments;
  }

  for (Command& c : commands) {
    if (!c.app->parsed()) continue;
    Run run;
    run.command = c.app->get_name();
    run.seed = seed;
    run.threads = resolve_threads(threads);
    run.out = out;
    const auto start = std::chrono::steady_clock::now();
    int status = kOk;
    try {
      run.settings = c.options->resolve();
      fs::create_directories(run.out);
      status = c.run(run);
    } catch (const std::exception& e) {
      std::cerr << "nerfinv " << run.command << ": " << e.what() << '\n';
      status = classify(e);
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    try {
      if (fs::is_directory(run.out)) write_manifest(run, status, seconds, args);
    } catch (const std::exception& e) {
      std::cerr << "nerfinv: cannot write manifest: " << e.what() << '\n';
      if (status == kOk) status = kFailure;
    }
    return status;
  }
  return kBadArguments;
}
