// hybridsplat command-line front end.
//
// Exit codes: 0 ok, 1 usage, 2 I/O, 3 verification failure.

#include "hybridsplat/fit.hpp"
#include "hybridsplat/metrics.hpp"
#include "hybridsplat/parallel.hpp"
#include "hybridsplat/renderer.hpp"
#include "hybridsplat/scene_io.hpp"
#include "hybridsplat/scenes.hpp"
#include "hybridsplat/verify.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

namespace hs = hybridsplat;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitVerify = 3;

hs::RenderSettings settings_for(int workers) {
  hs::RenderSettings rs;
  rs.workers = workers > 0 ? workers : hs::default_worker_count();
  return rs;
}

std::vector<hs::Camera> cameras_from(const std::string& views_path, const hs::io::SceneBundle& bundle) {
  if (!views_path.empty()) return hs::io::load_cameras(views_path);
  return bundle.cameras;
}

// ---------------------------------------------------------------------------

struct RenderArgs {
  std::string scene, out, mode = "hybrid", views;
  int view = 0, workers = 0;
  bool srgb = false;
};

int run_render(const RenderArgs& a) {
  const auto bundle = hs::io::load_scene(a.scene);
  const auto cams = cameras_from(a.views, bundle);
  if (a.view < 0 || static_cast<std::size_t>(a.view) >= cams.size()) {
    std::cerr << "render: view " << a.view << " out of range (scene has " << cams.size() << " cameras)\n";
    return kExitUsage;
  }
  const auto out = hs::render(bundle.scene, cams[a.view], settings_for(a.workers), hs::parse_render_mode(a.mode));
  hs::io::write_image(a.out, out.image(), a.srgb);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string scene, targets, views, weights, out, trace, masks, mode = "hybrid";
  int iters = -1, workers = 0;
};

fs::path find_view_file(const fs::path& dir, std::size_t i) {
  char name[32];
  for (const char* ext : {".png", ".ppm"}) {
    std::snprintf(name, sizeof(name), "view_%03zu%s", i, ext);
    if (fs::exists(dir / name)) return dir / name;
  }
  throw hs::io::IoError(hs::io::IoErrorCode::MissingFile,
                        "no view_" + std::to_string(i) + " image (.png or .ppm) in " + dir.string());
}

int run_fit(const FitArgs& a) {
  const auto bundle = hs::io::load_scene(a.scene);
  const auto cams = cameras_from(a.views, bundle);
  if (cams.empty()) {
    std::cerr << "fit: no cameras\n";
    return kExitUsage;
  }
  hs::io::FitOptions opt;
  opt.config = hs::FitConfig::defaults(bundle.scene);
  if (!a.weights.empty()) hs::io::load_options(opt, a.weights);
  if (a.iters >= 0) opt.config.iterations = a.iters;
  opt.config.mode = hs::parse_render_mode(a.mode);
  opt.config.render = settings_for(a.workers);

  std::vector<hs::View> views;
  for (std::size_t i = 0; i < cams.size(); ++i) {
    hs::View v{cams[i], hs::io::read_image(find_view_file(a.targets, i)), {}};
    if (v.target.width != cams[i].width || v.target.height != cams[i].height) {
      std::cerr << "fit: target " << i << " size differs from its camera\n";
      return kExitUsage;
    }
    if (!a.masks.empty()) v.mask = hs::io::read_mask(find_view_file(a.masks, i));
    views.push_back(std::move(v));
  }

  const fs::path out = a.out;
  if (opt.config.checkpoint_every > 0) {
    opt.config.on_checkpoint = [&](int it, const hs::Scene& s) {
      fs::path ck = out;
      ck.replace_filename(out.stem().string() + ".iter" + std::to_string(it) + ".json");
      hs::io::save_scene(ck, s, cams);
    };
  }
  hs::FitResult result;
  try {
    result = hs::fit(bundle.scene, views, opt.config, opt.weights);
  } catch (const hs::FitAborted& e) {
    fs::path snap = out;
    snap.replace_filename(out.stem().string() + ".aborted.json");
    hs::io::save_scene(snap, e.snapshot(), cams);
    std::cerr << "fit: " << e.what() << "; last finite scene written to " << snap << "\n";
    return kExitVerify;
  }
  hs::io::save_scene(out, result.scene, cams);
  const std::string csv = hs::io::trace_csv(result.trace);
  if (!a.trace.empty()) {
    hs::io::write_file_atomic(a.trace, csv);
  } else {
    std::cout << csv;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct MetricsArgs {
  std::string a, b, mask;
};

int run_metrics(const MetricsArgs& m) {
  const hs::Image a = hs::io::read_image(m.a), b = hs::io::read_image(m.b);
  hs::PixelMask mask;
  if (!m.mask.empty()) mask = hs::io::read_mask(m.mask);
  nlohmann::json j;
  j["mae"] = hs::metric_mae(a, b, mask);
  j["psnr"] = hs::metric_psnr(a, b, mask);
  j["ssim"] = hs::metric_ssim(a, b, mask);
  std::cout << j.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string scene, views, mode = "hybrid";
  int repeat = 5, workers = 0, warmup = 1;
};

int run_bench(const BenchArgs& a) {
  const auto bundle = hs::io::load_scene(a.scene);
  const auto cams = cameras_from(a.views, bundle);
  const hs::RenderMode mode = hs::parse_render_mode(a.mode);
  const hs::RenderSettings rs = settings_for(a.workers);
  if (a.repeat < 1) {
    std::cerr << "bench: --repeat must be >= 1\n";
    return kExitUsage;
  }
  std::cout << "mode,view,gaussians,width,height,workers,repeat,min_ms,median_ms,mean_ms\n";
  for (std::size_t v = 0; v < cams.size(); ++v) {
    for (int i = 0; i < a.warmup; ++i) hs::render(bundle.scene, cams[v], rs, mode);
    std::vector<double> ms;
    for (int i = 0; i < a.repeat; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto out = hs::render(bundle.scene, cams[v], rs, mode);
      ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / ms.size();
    std::printf("%s,%zu,%zu,%d,%d,%d,%d,%.4f,%.4f,%.4f\n", hs::to_string(mode), v, bundle.scene.gaussians.size(),
                cams[v].width, cams[v].height, rs.workers, a.repeat, ms.front(), ms[ms.size() / 2], mean);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::uint64_t seed = 0;
  int cases = 10, gradient_cases = -1, workers = 0;
};

int run_verify(const VerifyArgs& a) {
  const int workers = a.workers > 0 ? a.workers : hs::default_worker_count();
  bool ok = true;
  for (int i = 0; i < a.cases; ++i) {
    const auto c = hs::verify::oracle_case(a.seed + i, workers);
    const bool pass = c.max_error <= 1e-5;
    ok = ok && pass;
    std::printf("oracle seed=%llu gaussians=%zu triangles=%zu max_error=%.3e %s\n",
                static_cast<unsigned long long>(c.seed), c.gaussians, c.triangles, c.max_error, pass ? "PASS" : "FAIL");
  }
  const int grads = a.gradient_cases >= 0 ? a.gradient_cases : std::max(1, a.cases / 10);
  for (int i = 0; i < grads; ++i) {
    const auto g = hs::verify::gradient_case(a.seed + i);
    const bool pass = g.worst() < 1e-3;
    ok = ok && pass;
    std::printf("gradient seed=%llu", static_cast<unsigned long long>(g.seed));
    for (std::size_t c = 0; c < hs::kAllParamClasses.size(); ++c) {
      std::printf(" %s=%.3e", hs::to_string(hs::kAllParamClasses[c]), g.relative_error[c]);
    }
    std::printf(" %s\n", pass ? "PASS" : "FAIL");
  }
  std::printf("verify %s\n", ok ? "PASS" : "FAIL");
  return ok ? kExitOk : kExitVerify;
}

// ---------------------------------------------------------------------------

struct MaskArgs {
  std::string priority, out;
  std::size_t budget = 0;
  double frac = 0.75;
  std::uint64_t seed = 0;
};

int run_make_mask(const MaskArgs& a) {
  const hs::Image prio = hs::io::read_image(a.priority, 1);
  if (prio.width != prio.height) {
    std::cerr << "make-mask: priority image must be square\n";
    return kExitUsage;
  }
  std::vector<std::uint8_t> flags(prio.pixel_count());
  for (std::size_t p = 0; p < flags.size(); ++p) flags[p] = prio.data[p] > 0.0 ? 1 : 0;
  const hs::SamplingMask mask = hs::build_sampling_mask(prio.width, flags, a.budget, a.frac, a.seed);
  for (const auto& w : mask.warnings) std::cerr << "make-mask: warning: " << w << "\n";
  hs::io::save_sampling_mask(a.out, mask);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct DemoArgs {
  std::string out, targets;
  int gaussians = 2000, views = 8, size = 128, grid = 48, workers = 0;
  std::uint64_t seed = 7;
};

int run_demo_scene(const DemoArgs& a) {
  hs::scenes::HemisphereOptions o;
  o.gaussians = a.gaussians;
  o.grid = a.grid;
  o.seed = a.seed;
  const hs::Scene scene = hs::scenes::hemisphere_scene(o);
  const auto cams = hs::scenes::orbit_cameras(a.views, a.size, a.size);
  hs::io::save_scene(a.out, scene, cams);
  if (!a.targets.empty()) {
    fs::create_directories(a.targets);
    const hs::RenderSettings rs = settings_for(a.workers);
    for (std::size_t i = 0; i < cams.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "view_%03zu.png", i);
      hs::io::write_image(fs::path(a.targets) / name, hs::render(scene, cams[i], rs).image());
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid mesh + Gaussian splatting renderer and fitter"};
  app.require_subcommand(1);

  RenderArgs ra;
  auto* render = app.add_subcommand("render", "Render one view of a scene");
  render->add_option("scene", ra.scene, "Scene manifest")->required()->check(CLI::ExistingFile);
  render->add_option("--view", ra.view, "Camera index");
  render->add_option("-o,--out", ra.out, "Output image (.ppm or .png)")->required();
  render->add_option("--views", ra.views, "Camera list overriding the scene's cameras");
  render->add_option("--mode", ra.mode, "hybrid | gs-only | mesh-only");
  render->add_option("--workers", ra.workers, "Worker threads (default: HYBRIDSPLAT_WORKERS or all cores)");
  render->add_flag("--srgb", ra.srgb, "Apply the sRGB transfer curve");

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit scene parameters to target views");
  fit->add_option("--scene", fa.scene, "Initial scene manifest")->required()->check(CLI::ExistingFile);
  fit->add_option("--targets", fa.targets, "Directory of view_NNN.png/.ppm targets")->required()->check(CLI::ExistingDirectory);
  fit->add_option("--views", fa.views, "Camera list (default: the scene's cameras)");
  fit->add_option("--iters", fa.iters, "Iterations (overrides the options file)");
  fit->add_option("--weights", fa.weights, "key = value options file")->check(CLI::ExistingFile);
  fit->add_option("--masks", fa.masks, "Directory of view_NNN masks")->check(CLI::ExistingDirectory);
  fit->add_option("--trace", fa.trace, "Write the loss trace CSV here instead of stdout");
  fit->add_option("--mode", fa.mode, "hybrid | gs-only");
  fit->add_option("--workers", fa.workers, "Worker threads");
  fit->add_option("-o,--out", fa.out, "Output scene manifest")->required();

  MetricsArgs ma;
  auto* metrics = app.add_subcommand("metrics", "MAE / PSNR / SSIM between two images");
  metrics->add_option("a", ma.a)->required()->check(CLI::ExistingFile);
  metrics->add_option("b", ma.b)->required()->check(CLI::ExistingFile);
  metrics->add_option("--mask", ma.mask, "Mask image; nonzero pixels count")->check(CLI::ExistingFile);

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Per-frame render timing");
  bench->add_option("--scene", ba.scene)->required()->check(CLI::ExistingFile);
  bench->add_option("--views", ba.views, "Camera list (default: the scene's cameras)");
  bench->add_option("--repeat", ba.repeat, "Timed renders per view");
  bench->add_option("--warmup", ba.warmup, "Untimed renders per view");
  bench->add_option("--mode", ba.mode, "hybrid | gs-only | mesh-only");
  bench->add_option("--workers", ba.workers, "Worker threads");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Oracle-equivalence and gradient-check suites");
  verify->add_option("--seed", va.seed);
  verify->add_option("--cases", va.cases, "Oracle cases");
  verify->add_option("--gradient-cases", va.gradient_cases, "Gradient cases (default: cases / 10, at least 1)");
  verify->add_option("--workers", va.workers, "Worker threads");

  MaskArgs ka;
  auto* mask = app.add_subcommand("make-mask", "Build a UV sampling mask");
  mask->add_option("--priority", ka.priority, "Square priority image; nonzero = priority")->required()->check(CLI::ExistingFile);
  mask->add_option("--budget", ka.budget)->required();
  mask->add_option("--frac", ka.frac, "Fraction of the budget for the priority region");
  mask->add_option("--seed", ka.seed);
  mask->add_option("-o,--out", ka.out, "Output JSON")->required();

  DemoArgs da;
  auto* demo = app.add_subcommand("demo-scene", "Write the textured hemisphere demo scene");
  demo->add_option("-o,--out", da.out, "Output scene manifest")->required();
  demo->add_option("--targets", da.targets, "Also render target views into this directory");
  demo->add_option("--gaussians", da.gaussians);
  demo->add_option("--views", da.views);
  demo->add_option("--size", da.size, "Image width and height");
  demo->add_option("--grid", da.grid, "Mesh grid resolution K");
  demo->add_option("--seed", da.seed);
  demo->add_option("--workers", da.workers);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*render) return run_render(ra);
    if (*fit) return run_fit(fa);
    if (*metrics) return run_metrics(ma);
    if (*bench) return run_bench(ba);
    if (*verify) return run_verify(va);
    if (*mask) return run_make_mask(ka);
    if (*demo) return run_demo_scene(da);
  } catch (const hs::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == hs::ErrorKind::Io ? kExitIo : kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
