#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "gpslam/io.hpp"

namespace fs = std::filesystem;
using namespace gpslam;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitStage = 1;
constexpr int kExitBadArgs = 2;

/// Raised for problems with user-supplied inputs; mapped to exit code 2.
struct BadInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "json";
};

Scenario load(const Common& c) {
  try {
    Scenario sc = load_scenario(c.config);
    if (c.seed) sc.scene.seed = *c.seed;
    return sc;
  } catch (const Error& e) {
    throw BadInput(e.what());
  }
}

Trajectory load_input_tum(const std::string& path) {
  try {
    return load_tum(path);
  } catch (const Error& e) {
    throw BadInput(path + ": " + e.what());
  }
}

fs::path out_dir(const Common& c) {
  fs::path dir(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kInvalidArgument, "cannot create " + c.out);
  return dir;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw Error(ErrorCode::kInvalidArgument, "cannot write " + p.string());
  return os;
}

int cmd_simulate(const Common& c) {
  const Scenario sc = load(c);
  const World world = generate_world(sc.scene);
  const auto poses = generate_trajectory(sc.scene);
  const Measurements m = render_measurements(world, poses, sc.scene);
  const fs::path dir = out_dir(c);
  {
    auto os = open_out(dir / "observations.jsonl");
    for (const auto& f : m.frames) os << to_json(f).dump() << '\n';
  }
  {
    auto os = open_out(dir / "truth.jsonl");
    for (const auto& t : m.truth) os << to_json(t).dump() << '\n';
  }
  open_out(dir / "world.json") << to_json(world).dump(2) << '\n';
  std::vector<double> stamps;
  for (const auto& f : m.frames) stamps.push_back(f.timestamp);
  save_tum(make_trajectory(stamps, poses), (dir / "groundtruth.tum").string());
  for (const auto& f : m.frames) {
    for (const auto& w : f.warnings) std::cerr << "frame " << f.frame_id << ": " << w << '\n';
  }
  return kExitOk;
}

int cmd_run(const Common& c, const std::string& mode_name) {
  Mode mode;
  try {
    mode = mode_from_string(mode_name);
  } catch (const Error& e) {
    throw BadInput(e.what());
  }
  const Scenario sc = load(c);
  const PipelineResult res = run_pipeline(sc, mode);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  if (c.out.empty()) {
    if (c.format == "csv") {
      write_metrics_csv(std::cout, res.metrics);
    } else {
      std::cout << to_json(res.metrics).dump(2) << '\n';
    }
    return kExitOk;
  }
  const fs::path dir = out_dir(c);
  if (c.format == "csv") {
    auto os = open_out(dir / "metrics.csv");
    write_metrics_csv(os, res.metrics);
  } else {
    open_out(dir / "metrics.json") << to_json(res.metrics).dump(2) << '\n';
  }
  save_tum(res.estimated, (dir / "trajectory_est.tum").string());
  save_tum(res.ground_truth, (dir / "trajectory_gt.tum").string());
  auto os = open_out(dir / "gate_audit.csv");
  write_gate_audit_csv(os, res.gate_audit);
  return kExitOk;
}

int cmd_eval(const std::string& est_path, const std::string& ref_path, const std::string& align_name,
             const std::string& format) {
  Alignment align;
  try {
    align = alignment_from_string(align_name);
  } catch (const Error& e) {
    throw BadInput(e.what());
  }
  const Trajectory est = load_input_tum(est_path), ref = load_input_tum(ref_path);
  const double ate = ate_rmse(est, ref, align);
  if (format == "csv") {
    std::cout << "alignment,ate_rmse_m\n" << align_name << ',' << format_double(ate) << '\n';
  } else {
    std::cout << Json{{"alignment", align_name}, {"ate_rmse_m", ate}}.dump(2) << '\n';
  }
  return kExitOk;
}

int cmd_ablate(const Common& c, int n_seeds) {
  const Scenario sc = load(c);
  const AblationReport rep = run_ablation(sc, n_seeds);
  for (const auto& r : rep.rows) {
    if (!r.ok) std::cerr << "seed " << r.seed << " failed: " << r.error << '\n';
  }
  auto emit = [&](std::ostream& os) {
    if (c.format == "csv") {
      write_ablation_csv(os, rep);
    } else {
      os << to_json(rep).dump(2) << '\n';
    }
  };
  if (c.out.empty()) {
    emit(std::cout);
  } else {
    auto os = open_out(out_dir(c) / (c.format == "csv" ? "ablation.csv" : "ablation.json"));
    emit(os);
  }
  return kExitOk;
}

int cmd_detect_vp(const Common& c, int frame) {
  const Scenario sc = load(c);
  const World world = generate_world(sc.scene);
  const auto poses = generate_trajectory(sc.scene);
  const Measurements m = render_measurements(world, poses, sc.scene);
  if (frame < 0 || frame >= static_cast<int>(m.frames.size())) {
    throw BadInput("frame " + std::to_string(frame) + " out of range");
  }
  auto segments = m.frames[static_cast<std::size_t>(frame)].segments;
  const auto vps = detect_vanishing_points(segments, sc.pipeline.vp,
                                           derived_rng(sc.scene.seed, kStreamVp, static_cast<std::uint32_t>(frame))());
  const Mat3 r_wc = poses[static_cast<std::size_t>(frame)].R_wc();
  Json out = Json::array();
  for (const auto& vp : vps) {
    out.push_back({{"vp", detail::to_json(vp.vp_homogeneous)},
                   {"direction_world", detail::to_json(lift_vanishing_point(vp.vp_homogeneous, sc.scene.camera, r_wc))},
                   {"n_members", vp.member_segment_ids.size()},
                   {"members", vp.member_segment_ids},
                   {"residual_rms_deg", vp.residual_rms}});
  }
  const Json doc{{"frame_id", frame}, {"n_segments", segments.size()}, {"vanishing_points", out}};
  if (c.out.empty()) {
    std::cout << doc.dump(2) << '\n';
  } else {
    open_out(out_dir(c) / "vanishing_points.json") << doc.dump(2) << '\n';
  }
  return kExitOk;
}

void add_common(CLI::App* sub, Common& c, bool needs_config = true, bool has_format = true) {
  if (needs_config) sub->add_option("--config", c.config, "scenario JSON")->required()->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "override the scenario seed");
  sub->add_option("--out", c.out, "output directory");
  if (has_format) sub->add_option("--format", c.format, "output format")->check(CLI::IsMember({"json", "csv"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point/line SLAM back-end with global structural primitives on synthetic scenes"};
  app.require_subcommand(1);

  Common sim, run, abl, vp, ev;
  std::string mode = "gp", est, ref, align = "sim3";
  int n_seeds = 10, frame = 0;

  auto* s_sim = app.add_subcommand("simulate", "render a scenario and dump observations and ground truth");
  add_common(s_sim, sim, true, false);
  s_sim->get_option("--out")->required();

  auto* s_run = app.add_subcommand("run", "run the pipeline and evaluate ATE");
  add_common(s_run, run);
  s_run->add_option("--mode", mode, "lp or gp")->check(CLI::IsMember({"lp", "gp"}));

  auto* s_eval = app.add_subcommand("eval", "ATE between two TUM trajectories");
  s_eval->add_option("--est", est, "estimated trajectory")->required()->check(CLI::ExistingFile);
  s_eval->add_option("--ref", ref, "reference trajectory")->required()->check(CLI::ExistingFile);
  s_eval->add_option("--align", align, "none, se3 or sim3")->check(CLI::IsMember({"none", "se3", "sim3"}));
  s_eval->add_option("--format", ev.format, "output format")->check(CLI::IsMember({"json", "csv"}));

  auto* s_abl = app.add_subcommand("ablate", "lp vs gp over consecutive seeds");
  add_common(s_abl, abl);
  s_abl->add_option("--seeds", n_seeds, "number of seeds")->check(CLI::Range(2, 1000));

  auto* s_vp = app.add_subcommand("detect-vp", "vanishing points of one simulated frame");
  add_common(s_vp, vp, true, false);
  s_vp->add_option("--frame", frame, "frame index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitBadArgs;
  }

  try {
    if (*s_sim) return cmd_simulate(sim);
    if (*s_run) return cmd_run(run, mode);
    if (*s_eval) return cmd_eval(est, ref, align, ev.format);
    if (*s_abl) return cmd_ablate(abl, n_seeds);
    if (*s_vp) return cmd_detect_vp(vp, frame);
  } catch (const BadInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadArgs;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStage;
  }
  return kExitBadArgs;
}
