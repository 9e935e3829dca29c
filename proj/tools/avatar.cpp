// avatar: command-line front end for building, optimizing, rendering and
// serving UV Gaussian head avatars.

#include <csignal>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "uvavatar/asset.hpp"
#include "uvavatar/dataset.hpp"
#include "uvavatar/error.hpp"
#include "uvavatar/optimize.hpp"
#include "uvavatar/runtime.hpp"
#include "uvavatar/service.hpp"
#include "uvavatar/synth.hpp"
#include "uvavatar/test_head.hpp"

namespace fs = std::filesystem;
using namespace uvavatar;

namespace {

std::string relative_to(const fs::path& target, const fs::path& dir) {
  return fs::proximate(fs::absolute(target), fs::absolute(dir.empty() ? fs::path(".") : dir)).generic_string();
}

OptimConfig load_config(const std::string& path) {
  OptimConfig cfg;
  if (!path.empty()) cfg = read_json(path).get<OptimConfig>();
  cfg.validate();
  return cfg;
}

void print_terms(const char* prefix, const LossTerms& t) {
  std::printf("%s total %.6f  rgb %.6f  ssim %.6f  pos %.6g  scale %.6g\n", prefix, t.total, t.rgb, t.ssim, t.position,
              t.scale);
}

int cmd_make_head(std::uint64_t seed, const std::string& out) {
  save_mesh_model(out, make_test_head(seed));
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_init(const std::string& mesh_path, int uv_size, int blendmaps, const std::string& out) {
  auto mesh = std::make_shared<const HeadMeshModel>(load_mesh_model(mesh_path));
  OptimConfig cfg;
  cfg.uv_size = uv_size;
  cfg.blendmaps = std::max(blendmaps, 1);
  cfg.validate();
  const MapBuilder builder(mesh, uv_size, uv_size, std::vector<double>(static_cast<std::size_t>(mesh->identity_count), 0.0));
  const auto asset = make_asset(builder, relative_to(mesh_path, fs::path(out).parent_path()), mesh_file_hash(mesh_path),
                                RectificationSet::zeros(builder.layout(), blendmaps), cfg);
  save_asset(out, asset);
  std::printf("wrote %s (%zu Gaussians on a %dx%d chart, D=%d)\n", out.c_str(), builder.layout()->valid_count(), uv_size,
              uv_size, blendmaps);
  return 0;
}

int cmd_optimize(const std::string& dataset_path, const std::string& config_path, const std::string& out,
                 unsigned threads, int log_every) {
  OptimConfig cfg = load_config(config_path);
  if (threads) cfg.render.threads = threads;
  const Dataset data = load_dataset(dataset_path, Split::Train);
  if (data.frames.empty()) throw ConfigError("optimize: the training split is empty");
  const MapBuilder builder(data.mesh, cfg.uv_size, cfg.uv_size, data.beta_id, cfg.init);
  std::printf("%zu training frames, %zu Gaussians, %d + %d steps\n", data.frames.size(),
              builder.layout()->valid_count(), cfg.stage1_steps(), cfg.stage2_steps());
  const auto progress = [&](const StepReport& r) {
    if (r.step % std::max(log_every, 1) != 0 && r.step + 1 != r.steps) return;
    char prefix[64];
    std::snprintf(prefix, sizeof prefix, "stage %d step %5d/%d", static_cast<int>(r.stage), r.step + 1, r.steps);
    print_terms(prefix, r.terms);
    std::fflush(stdout);
  };
  auto rect = RectificationSet::zeros(builder.layout());
  optimize_stage1(data.frames, builder, rect, cfg, progress);
  if (cfg.stage2_steps() > 0) optimize_stage2(data.frames, builder, rect, cfg, progress);
  const auto asset = make_asset(builder, relative_to(data.mesh_path, fs::path(out).parent_path()),
                                mesh_file_hash(data.mesh_path), std::move(rect), cfg);
  save_asset(out, asset);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

RenderConfig render_config(unsigned threads) {
  RenderConfig cfg;
  cfg.threads = threads;
  return cfg;
}

int cmd_render(const std::string& asset_path, const std::string& pose_path, const std::string& out, unsigned threads) {
  const auto runtime = AvatarRuntime::load(asset_path);
  const PoseRequest pose = pose_path.empty() ? PoseRequest{} : pose_from_json(read_json(pose_path));
  write_file_bytes(out, render_pose_png(runtime, pose, render_config(threads)));
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_animate(const std::string& asset_path, const std::string& poses_path, const std::string& out_dir,
                bool report_fps, int min_frames, unsigned threads) {
  const auto runtime = AvatarRuntime::load(asset_path);
  const auto poses = poses_from_json(read_json(poses_path));
  if (poses.empty()) throw ConfigError("animate: the pose sequence is empty");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  const auto cfg = render_config(threads);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%05zu.png", i);
    write_file_bytes(fs::path(out_dir) / name, render_pose_png(runtime, poses[i], cfg));
  }
  std::printf("wrote %zu frames to %s\n", poses.size(), out_dir.c_str());
  if (report_fps) {
    // Timed separately from the PNG writes; the sequence repeats until
    // enough frames have been rendered.
    const std::size_t frames = std::max<std::size_t>(static_cast<std::size_t>(std::max(min_frames, 1)), poses.size());
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < frames; ++i) (void)runtime.animate(poses[i % poses.size()], cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("rendered %zu frames in %.3f s: %.2f fps\n", frames, secs, static_cast<double>(frames) / secs);
  }
  return 0;
}

int cmd_eval(const std::string& asset_path, const std::string& dataset_path, const std::string& split, unsigned threads) {
  const auto runtime = AvatarRuntime::load(asset_path);
  const Dataset data = load_dataset(dataset_path, parse_split(split));
  if (data.frames.empty()) throw ConfigError("eval: split '" + split + "' has no frames");
  if (mesh_file_hash(data.mesh_path) != runtime.asset().mesh_hash)
    throw ConfigError("eval: dataset mesh model differs from the asset's");
  OptimConfig cfg;
  cfg.background = runtime.asset().background;
  cfg.render.threads = threads;
  std::printf("%-6s %10s %10s %10s\n", "frame", "L1", "SSIM", "PSNR");
  EvalMetrics mean;
  for (std::size_t i = 0; i < data.frames.size(); ++i) {
    const auto m = evaluate_frame(data.frames[i], runtime.builder(), runtime.asset().rect, runtime.stage(), cfg);
    std::printf("%-6zu %10.6f %10.6f %10.3f\n", i, m.l1, m.ssim, m.psnr);
    mean.l1 += m.l1;
    mean.ssim += m.ssim;
    mean.psnr += m.psnr;
  }
  const double n = static_cast<double>(data.frames.size());
  std::printf("%-6s %10.6f %10.6f %10.3f\n", "mean", mean.l1 / n, mean.ssim / n, mean.psnr / n);
  return 0;
}

int cmd_synth(std::uint64_t seed, const std::string& out, bool two_expressions, int uv_size, int image_size) {
  SynthOptions opt;
  opt.seed = seed;
  opt.two_expressions = two_expressions;
  opt.uv_size = uv_size;
  opt.image_size = image_size;
  const auto manifest = write_synth_fixture(make_synth_fixture(opt), out);
  std::printf("wrote %s\n", manifest.string().c_str());
  return 0;
}

volatile std::sig_atomic_t g_stop = 0;

extern "C" void handle_signal(int) { g_stop = 1; }

int cmd_serve(const std::string& asset_path, const std::string& address, unsigned short port, unsigned workers,
              unsigned threads) {
  auto runtime = std::make_shared<const AvatarRuntime>(AvatarRuntime::load(asset_path));
  ServiceOptions opt;
  opt.address = address;
  opt.port = port;
  opt.render_workers = workers;
  opt.render.threads = threads;
  AvatarService service(runtime, opt);
  const auto bound = service.start();
  std::printf("serving %s on http://%s:%u\n", asset_path.c_str(), address.c_str(), bound);
  std::fflush(stdout);
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  service.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UV Gaussian head avatars: build, optimize, render, serve"};
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "Render worker threads (0 = all cores)");

  std::uint64_t seed = 0;
  std::string mesh, out, dataset, config, asset, pose, poses, split = "eval", address = "127.0.0.1";
  int uv_size = 320, synth_uv_size = 48, blendmaps = 0, log_every = 50, min_frames = 100, image_size = 128;
  bool report_fps = false, two_expressions = false;
  unsigned short port = 8080;
  unsigned workers = 2;

  auto* make_head = app.add_subcommand("make-head", "Write the procedural test head mesh model");
  make_head->add_option("--seed", seed);
  make_head->add_option("--out", out)->required();

  auto* init = app.add_subcommand("init", "Build a base asset (zero rectification) from a mesh model");
  init->add_option("--mesh", mesh)->required();
  init->add_option("--uv-size", uv_size)->check(CLI::PositiveNumber);
  init->add_option("--blendmaps", blendmaps, "Number of (zero) blendmaps")->check(CLI::NonNegativeNumber);
  init->add_option("--out", out)->required();

  auto* optimize = app.add_subcommand("optimize", "Run both rectification stages on a dataset");
  optimize->add_option("--dataset", dataset, "Manifest JSON")->required();
  optimize->add_option("--config", config, "Optimizer config JSON (overrides only)");
  optimize->add_option("--out", out)->required();
  optimize->add_option("--log-every", log_every);

  auto* render_cmd = app.add_subcommand("render", "Render one pose");
  render_cmd->add_option("--asset", asset)->required();
  render_cmd->add_option("--pose", pose, "Pose JSON (default: neutral, default camera)");
  render_cmd->add_option("--out", out)->required();

  auto* animate = app.add_subcommand("animate", "Render a pose sequence");
  animate->add_option("--asset", asset)->required();
  animate->add_option("--poses", poses)->required();
  animate->add_option("--out", out)->required();
  animate->add_flag("--report-fps", report_fps);
  animate->add_option("--fps-frames", min_frames, "Frames timed for --report-fps")->check(CLI::Range(100, 1000000));

  auto* eval = app.add_subcommand("eval", "L1 / SSIM / PSNR of an asset on a dataset split");
  eval->add_option("--asset", asset)->required();
  eval->add_option("--dataset", dataset)->required();
  eval->add_option("--split", split)->check(CLI::IsMember({"train", "eval", "all"}));

  auto* synth = app.add_subcommand("synth-fixture", "Write the synthetic ground-truth dataset");
  synth->add_option("--seed", seed);
  synth->add_option("--out", out)->required();
  synth->add_flag("--two-expressions", two_expressions);
  synth->add_option("--uv-size", synth_uv_size)->check(CLI::PositiveNumber);
  synth->add_option("--image-size", image_size)->check(CLI::PositiveNumber);

  auto* serve = app.add_subcommand("serve", "Serve an asset over HTTP and WebSocket");
  serve->add_option("--asset", asset)->required();
  serve->add_option("--address", address);
  serve->add_option("--port", port);
  serve->add_option("--workers", workers)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*make_head) return cmd_make_head(seed, out);
    if (*init) return cmd_init(mesh, uv_size, blendmaps, out);
    if (*optimize) return cmd_optimize(dataset, config, out, threads, log_every);
    if (*render_cmd) return cmd_render(asset, pose, out, threads);
    if (*animate) return cmd_animate(asset, poses, out, report_fps, min_frames, threads);
    if (*eval) return cmd_eval(asset, dataset, split, threads);
    if (*synth) return cmd_synth(seed, out, two_expressions, synth_uv_size, image_size);
    if (*serve) return cmd_serve(asset, address, port, workers, threads);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
