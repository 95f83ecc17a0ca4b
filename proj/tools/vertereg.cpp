// vertereg command line: simulate, register, track, evaluate, ablate, serve.

#include <cstdlib>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "vertereg/config.hpp"
#include "vertereg/error.hpp"
#include "vertereg/eval.hpp"
#include "vertereg/io.hpp"
#include "vertereg/sim.hpp"
#include "vertereg/stream.hpp"

using namespace vertereg;
using json = nlohmann::json;

namespace {

int parse_level(const std::string& text) {
  if (text.size() == 2 && (text[0] == 'L' || text[0] == 'l') && text[1] >= '1' && text[1] <= '5') return text[1] - '0';
  if (text.size() == 1 && text[0] >= '1' && text[0] <= '5') return text[0] - '0';
  throw Error(Errc::invalid_argument, "unknown vertebra '" + text + "', expected L1..L5");
}

struct OcclusionFlag {
  int vertebra = 3;
  double fraction = 0.5;
  int first = 1;
  int last = 1;
};

// "L3:0.5:10:20"
OcclusionFlag parse_occlusion(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.size() != 4) throw Error(Errc::invalid_argument, "occlusion must be LEVEL:FRACTION:FIRST:LAST");
  try {
    OcclusionFlag o{parse_level(parts[0]), std::stod(parts[1]), std::stoi(parts[2]), std::stoi(parts[3])};
    if (!(o.fraction > 0.0 && o.fraction <= 1.0) || o.first < 1 || o.last < o.first) {
      throw Error(Errc::invalid_argument, "bad occlusion '" + text + "'");
    }
    return o;
  } catch (const std::logic_error&) {
    throw Error(Errc::invalid_argument, "bad occlusion '" + text + "'");
  }
}

struct Common {
  std::string config;
  std::string recording;
  std::string models;
  std::string out;

  RunConfig load() const {
    RunConfig cfg = config.empty() ? RunConfig{} : load_config(config);
    if (!recording.empty()) cfg.recording = recording;
    if (!models.empty()) cfg.models = models;
    if (!out.empty()) cfg.output = out;
    return cfg;
  }
};

fs::path need(const std::optional<fs::path>& p, const char* what) {
  if (!p) throw Error(Errc::config_error, std::string("missing ") + what + " (flag or config key)");
  return *p;
}

std::vector<VertebraModel> load_models(const RunConfig& cfg) {
  return read_models(cfg.models ? *cfg.models : need(cfg.recording, "recording") / "models");
}

std::vector<FrameResult> results_from_rows(const std::vector<PoseRow>& rows, int frame_count) {
  std::vector<FrameResult> out(static_cast<std::size_t>(frame_count));
  for (int f = 0; f < frame_count; ++f) {
    out[f].frame = f + 1;
    for (int id = 1; id <= kVertebraCount; ++id) {
      VertebraResult v;
      v.id = id;
      out[f].vertebrae.push_back(v);
    }
  }
  for (const PoseRow& r : rows) {
    if (r.vertebra == kDrillSlot) continue;
    if (r.frame > frame_count) throw Error(Errc::invalid_argument, "poses reference frames beyond the recording");
    VertebraResult& v = out[r.frame - 1].vertebrae[r.vertebra - 1];
    v.pose = r.pose;
    v.valid = r.valid;
    v.updated = r.updated;
  }
  return out;
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

int cmd_simulate(const fs::path& out, std::uint64_t seed, double scale, double spacing, RecordingSpec spec,
                 const std::vector<std::string>& occlusions, double breathing_mm, double breathing_hz) {
  if (breathing_mm > 0.0) {
    Motion m;
    m.vertebra = 0;
    m.translation = Vec3(0.0, breathing_mm, 0.0);
    m.frequency_hz = breathing_hz;
    spec.motions.push_back(m);
  }
  Scene scene = make_scene(seed, scale, spacing);
  if (!occlusions.empty()) {
    const SimulatedRecording probe(scene, spec, seed);
    for (const std::string& text : occlusions) {
      const OcclusionFlag o = parse_occlusion(text);
      const RigidTransform pose = probe.gt_poses(std::min(o.first, spec.frame_count))[o.vertebra - 1];
      spec.occluders.push_back(occluder_over_vertebra(scene, pose, o.vertebra, o.fraction, o.first, o.last));
    }
  }
  const SimulatedRecording recording(std::move(scene), spec, seed);
  write_recording(out, recording);
  std::cout << json{{"recording", out.string()}, {"frames", spec.frame_count}, {"seed", seed}}.dump() << "\n";
  return 0;
}

int cmd_register(const RunConfig& cfg) {
  const DiskRecording rec(need(cfg.recording, "recording"));
  const std::vector<VertebraModel> models = load_models(cfg);
  const fs::path out = need(cfg.output, "output");
  PipelineOptions options{cfg.registration, cfg.mode, cfg.update_frames};
  const std::vector<FrameResult> results = run_pipeline(rec, models, options);

  std::vector<PoseRow> rows;
  std::string state = "frame,vertebra,valid,updated,frozen,inliers,baseline\n";
  for (const FrameResult& r : results) {
    for (const PoseRow& row : pose_rows(r)) rows.push_back(row);
    for (const VertebraResult& v : r.vertebrae) {
      state += std::to_string(r.frame) + ',' + std::to_string(v.id) + ',' + (v.valid ? '1' : '0') + ',' +
               (v.updated ? '1' : '0') + ',' + (v.frozen ? '1' : '0') + ',' + std::to_string(v.inliers) + ',' +
               std::to_string(v.baseline) + '\n';
    }
  }
  write_file(out / "poses.csv", encode_poses(rows));
  write_file(out / "state.csv", state);
  std::cout << json{{"frames", results.size()}, {"mode", to_string(cfg.mode)}, {"poses", (out / "poses.csv").string()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_track(const RunConfig& cfg, const std::string& markers_path) {
  const DiskRecording rec(need(cfg.recording, "recording"));
  const RecordingInfo& info = rec.info();
  if (!info.rig || info.sleeve.corners.empty()) {
    throw Error(Errc::invalid_argument, "recording has no stereo rig or sleeve marker layout");
  }
  const std::map<int, std::vector<MarkerObservation>> markers =
      parse_file(markers_path.empty() ? rec.dir() / "markers.csv" : fs::path(markers_path), decode_markers);
  DrillTracker tracker(*info.rig, info.sleeve, cfg.kalman);
  std::vector<PoseRow> rows;
  int tracked = 0;
  for (int f = 1; f <= info.frame_count; ++f) {
    const auto it = markers.find(f);
    const std::vector<MarkerObservation> obs = it == markers.end() ? std::vector<MarkerObservation>{} : it->second;
    const std::optional<RigidTransform> pose = tracker.process(obs, (f - 1) / info.fps);
    PoseRow row{f, kDrillSlot, pose.has_value(), pose.has_value(), pose.value_or(RigidTransform{})};
    tracked += pose ? 1 : 0;
    rows.push_back(row);
  }
  const fs::path out = need(cfg.output, "output");
  write_file(out / "drill_poses.csv", encode_poses(rows));
  std::cout << json{{"frames", info.frame_count}, {"tracked", tracked}}.dump() << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& poses_path) {
  const DiskRecording rec(need(cfg.recording, "recording"));
  const std::vector<VertebraModel> models = load_models(cfg);
  if (rec.gt_poses().empty()) throw Error(Errc::invalid_argument, "recording has no ground truth");
  const fs::path poses = poses_path.empty() ? need(cfg.output, "poses") / "poses.csv" : fs::path(poses_path);
  const std::vector<FrameResult> est = results_from_rows(parse_file(poses, decode_poses), rec.frame_count());
  const RecordingMetrics m =
      evaluate_recording(models, est, rec.gt_poses(), rec.info().target_vertebra, rec.info().target_side,
                         cfg.first_tre_frame, PerforationOptions{cfg.lateral_only});

  std::string csv =
      "frame,vertebra,tre,left_trajectory_deg,left_entry_mm,left_perforation_mm,left_safe,"
      "right_trajectory_deg,right_entry_mm,right_perforation_mm,right_safe\n";
  for (const FrameMetrics& f : m.frames) {
    for (const VertebraMetrics& v : f.vertebrae) {
      csv += std::to_string(f.frame) + ',' + std::to_string(v.id) + ',' + format_double(v.tre);
      for (const ScrewMetrics& s : v.screws) {
        csv += ',' + format_double(s.trajectory_deg) + ',' + format_double(s.entry_mm) + ',' +
               (s.perforation_mm ? format_double(*s.perforation_mm) : std::string()) + ',' + (s.safe ? '1' : '0');
      }
      csv += '\n';
    }
  }
  json summary{{"tre_mm", nullable(m.tre)},
               {"success_rate", m.success_rate},
               {"median_trajectory_deg", nullable(m.median_trajectory_deg)},
               {"median_entry_mm", nullable(m.median_entry_mm)},
               {"first_tre_frame", cfg.first_tre_frame},
               {"target", {{"vertebra", level_name(m.target_vertebra)}, {"side", to_string(m.target_side)}}}};
  for (int i = 0; i < kVertebraCount; ++i) summary["vertebra_tre_mm"][level_name(i + 1)] = nullable(m.vertebra_tre[i]);
  const fs::path out = need(cfg.output, "output");
  write_file(out / "metrics.csv", csv);
  write_file(out / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg) {
  const DiskRecording rec(need(cfg.recording, "recording"));
  const std::vector<VertebraModel> models = load_models(cfg);
  std::vector<std::vector<double>> series;
  json summary;
  for (AblationMode mode : kAblationModes) {
    series.push_back(run_ablation(rec, models, mode, cfg.registration));
    summary["mean_tre_mm"][to_string(mode)] = recording_mean(series.back(), cfg.first_tre_frame);
  }
  summary["first_tre_frame"] = cfg.first_tre_frame;
  std::string csv = "frame";
  for (AblationMode mode : kAblationModes) csv += std::string(",") + to_string(mode);
  csv += '\n';
  for (std::size_t f = 0; f < series[0].size(); ++f) {
    csv += std::to_string(f + 1);
    for (const auto& s : series) csv += ',' + format_double(s[f]);
    csv += '\n';
  }
  const fs::path out = need(cfg.output, "output");
  write_file(out / "ablation.csv", csv);
  write_file(out / "ablation.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_serve(const RunConfig& cfg, const std::string& stream, int frames, bool loop, const std::string& dump) {
  const DiskRecording rec(need(cfg.recording, "recording"));
  const std::vector<VertebraModel> models = load_models(cfg);
  ServeOptions options;
  options.pipeline = {cfg.registration, cfg.mode, cfg.update_frames};
  options.kalman = cfg.kalman;
  options.frames = frames;
  options.loop = loop;
  options.rig = rec.info().rig;
  options.sleeve = rec.info().sleeve;
  if (!stream.empty()) {
    options.target = parse_stream_target(stream);
  } else if (const char* env = std::getenv("VERTEREG_STREAM"); env && *env) {
    options.target = parse_stream_target(env);
  } else {
    options.target = cfg.stream;
  }
  if (!options.target) std::cerr << "warning: no stream destination; packets are not sent\n";
  if (!dump.empty()) options.dump = dump;
  const ServeStats s = serve(rec, models, options);
  std::cout << json{{"packets", s.packets},
                    {"send_failures", s.send_failures},
                    {"period_ms", s.period_s * 1e3},
                    {"mean_interval_ms", s.mean_interval_s * 1e3},
                    {"jitter", s.jitter},
                    {"max_late_ms", s.max_late_s * 1e3}}
                   .dump()
            << "\n";
  return 0;
}

int report(const std::string& code, const std::string& message, std::optional<std::uint64_t> offset) {
  json err{{"error", code}, {"message", message}, {"offset", offset ? json(*offset) : json(nullptr)}};
  std::cerr << err.dump() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-based vertebra registration and pose streaming"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common common;
  auto add_common = [&](CLI::App* sub, bool recording, bool models, bool out) {
    sub->add_option("--config", common.config, "key = value configuration file")->check(CLI::ExistingFile);
    if (recording) sub->add_option("--recording", common.recording, "recording directory");
    if (models) sub->add_option("--models", common.models, "model directory (default: <recording>/models)");
    if (out) sub->add_option("--out", common.out, "output directory");
  };
  std::string mode;
  std::optional<int> update_frames;
  std::optional<int> first_frame;
  bool lateral_only = false;

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic recording");
  std::string sim_out;
  std::uint64_t seed = 1;
  double scale = 1.0, spacing = 0.5, breathing_mm = 0.0, breathing_hz = 0.2;
  RecordingSpec spec;
  std::string target = "L3", side = "left";
  std::vector<std::string> occlusions;
  bool no_markers = false;
  sim->add_option("--out", sim_out, "recording directory")->required();
  sim->add_option("--seed", seed, "random seed")->capture_default_str();
  sim->add_option("--frames", spec.frame_count, "frame count")->capture_default_str();
  sim->add_option("--fps", spec.fps, "frame rate")->capture_default_str();
  sim->add_option("--noise", spec.depth_noise_mm, "depth noise sigma (mm)")->capture_default_str();
  sim->add_option("--dropout", spec.dropout, "fraction of invalid depth pixels")->capture_default_str();
  sim->add_option("--prior-error", spec.prior_error_deg, "orientation prior error (deg)")->capture_default_str();
  sim->add_option("--tilt", spec.tilt_deg, "sensor tilt from the coronal normal (deg)")->capture_default_str();
  sim->add_option("--jitter-deg", spec.placement_jitter_deg, "random spine rotation (deg)")->capture_default_str();
  sim->add_option("--jitter-mm", spec.placement_jitter_mm, "random spine offset (mm)")->capture_default_str();
  sim->add_option("--deform-deg", spec.deformation_deg, "per-vertebra rotation vs models (deg)")->capture_default_str();
  sim->add_option("--deform-mm", spec.deformation_mm, "per-vertebra offset vs models (mm)")->capture_default_str();
  sim->add_option("--breathing-mm", breathing_mm, "sinusoidal craniocaudal motion amplitude (mm)")
      ->capture_default_str();
  sim->add_option("--breathing-hz", breathing_hz, "breathing frequency (Hz)")->capture_default_str();
  sim->add_option("--occlude", occlusions, "LEVEL:FRACTION:FIRST:LAST, repeatable");
  sim->add_option("--marker-noise", spec.marker_noise_px, "corner noise (px)")->capture_default_str();
  sim->add_flag("--no-markers", no_markers, "omit drill-sleeve marker observations");
  sim->add_option("--target", target, "target vertebra")->capture_default_str();
  sim->add_option("--side", side, "target screw side")->capture_default_str();
  sim->add_option("--scale", scale, "anatomy scale")->capture_default_str();
  sim->add_option("--spacing", spacing, "model surface sampling (mm)")->capture_default_str();

  // register
  auto* reg = app.add_subcommand("register", "register every frame of a recording");
  add_common(reg, true, true, true);
  reg->add_option("--mode", mode, "general | refinement | first-60 | full");
  reg->add_option("--update-frames", update_frames, "interaction frames updated in first-60 mode");

  // track
  auto* trk = app.add_subcommand("track", "smooth drill-sleeve poses from marker corners");
  add_common(trk, true, false, true);
  std::string markers_path;
  trk->add_option("--markers", markers_path, "corner CSV (default: <recording>/markers.csv)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score poses against ground truth");
  add_common(ev, true, true, true);
  std::string poses_path;
  ev->add_option("--poses", poses_path, "poses CSV (default: <out>/poses.csv)");
  ev->add_option("--first-frame", first_frame, "first frame counted for TRE");
  ev->add_flag("--lateral-only", lateral_only, "ignore screw end caps when measuring perforation");

  // ablate
  auto* ab = app.add_subcommand("ablate", "compare the four registration modes");
  add_common(ab, true, true, true);
  ab->add_option("--first-frame", first_frame, "first frame counted for the mean");

  // serve
  auto* sv = app.add_subcommand("serve", "stream pose packets at the recording frame rate");
  add_common(sv, true, true, false);
  std::string stream, dump;
  int frames = 0;
  bool loop = false;
  sv->add_option("--stream", stream, "host:port (default: $VERTEREG_STREAM, then config)");
  sv->add_option("--frames", frames, "packets to send (default: one pass)");
  sv->add_flag("--loop", loop, "wrap around the recording");
  sv->add_option("--dump", dump, "write every packet to this file");
  sv->add_option("--mode", mode, "general | refinement | first-60 | full");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage_error", e.what(), std::nullopt);
  }

  try {
    if (sim->parsed()) {
      spec.markers = !no_markers;
      spec.target_vertebra = parse_level(target);
      spec.target_side = parse_side(side);
      return cmd_simulate(sim_out, seed, scale, spacing, spec, occlusions, breathing_mm, breathing_hz);
    }
    RunConfig cfg = common.load();
    if (!mode.empty()) cfg.mode = parse_ablation_mode(mode);
    if (update_frames) cfg.update_frames = *update_frames;
    if (first_frame) cfg.first_tre_frame = *first_frame;
    if (lateral_only) cfg.lateral_only = true;
    if (reg->parsed()) return cmd_register(cfg);
    if (trk->parsed()) return cmd_track(cfg, markers_path);
    if (ev->parsed()) return cmd_evaluate(cfg, poses_path);
    if (ab->parsed()) return cmd_ablate(cfg);
    if (sv->parsed()) return cmd_serve(cfg, stream, frames, loop, dump);
  } catch (const Error& e) {
    return report(to_string(e.code()), e.what(), e.byte_offset());
  } catch (const fs::filesystem_error& e) {
    return report("io_error", e.what(), std::nullopt);
  } catch (const std::exception& e) {
    return report("internal_error", e.what(), std::nullopt);
  }
  return 1;
}
