#pragma once

// Seeded verification cases: tiled pipeline vs. the brute-force oracle, and
// analytic gradients vs. central finite differences.

#include "hybridsplat/fit.hpp"
#include "hybridsplat/oracle.hpp"
#include "hybridsplat/renderer.hpp"
#include "hybridsplat/scenes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <tuple>
#include <vector>

namespace hybridsplat::verify {

struct OracleCase {
  std::uint64_t seed = 0;
  std::size_t gaussians = 0;
  std::size_t triangles = 0;
  double max_error = 0.0;
};

inline scenes::RandomSceneOptions oracle_scene_options() {
  scenes::RandomSceneOptions o;
  o.grid_min = 4;
  o.grid_max = 16;  // at most 450 triangles
  o.gaussians_max = 200;
  return o;
}

/// Renders a 64x64 random scene both ways with skip, clamp, and early stop
/// disabled, and reports the largest per-channel difference.
inline OracleCase oracle_case(std::uint64_t seed, int workers = 1) {
  const Scene scene = scenes::random_scene(seed, oracle_scene_options());
  const Camera cam = scenes::frontal_camera(64, 64, 50.0);
  RenderSettings rs = RenderSettings::exact();
  rs.workers = workers;
  const Image fast = render(scene, cam, rs).image();
  const Image ref = oracle::reference_render(scene, cam);
  OracleCase c;
  c.seed = seed;
  c.gaussians = scene.gaussians.size();
  c.triangles = scene.mesh.triangles().size();
  for (std::size_t i = 0; i < ref.data.size(); ++i) c.max_error = std::max(c.max_error, std::abs(fast.data[i] - ref.data[i]));
  return c;
}

/// Random per-pixel stream with up to `max_fragments` Gaussians, sorted by
/// (depth, source). Depths sit on a quarter-unit lattice so ties with each
/// other and with the mesh are common; the mesh is transparent or opaque 20%
/// of the time each and missing (infinite depth) 10% of the time.
inline PixelFragmentStream random_stream(scenes::Rng& rng, std::size_t max_fragments = 32) {
  PixelFragmentStream s;
  const std::size_t n = rng.below(max_fragments + 1);
  for (std::size_t i = 0; i < n; ++i) {
    s.gaussians.push_back(Fragment{rng.uniform(0.0, 0.999), Vec3(rng.uniform(), rng.uniform(), rng.uniform()),
                                   std::floor(rng.uniform(1.0, 20.0) * 4.0) / 4.0, static_cast<std::uint32_t>(i)});
  }
  std::sort(s.gaussians.begin(), s.gaussians.end(), [](const Fragment& a, const Fragment& b) {
    return std::tie(a.depth, a.source) < std::tie(b.depth, b.source);
  });
  const double r = rng.uniform();
  s.mesh.opacity = r < 0.2 ? 0.0 : r < 0.4 ? 1.0 : rng.uniform();
  s.mesh.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
  s.mesh.depth = rng.uniform() < 0.1 ? kFarDepth : std::floor(rng.uniform(1.0, 20.0) * 4.0) / 4.0;
  s.background = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
  return s;
}

struct GradientCase {
  std::uint64_t seed = 0;
  std::array<double, kAllParamClasses.size()> relative_error{};
  std::array<double, kAllParamClasses.size()> numeric_norm{};

  double worst() const { return *std::max_element(relative_error.begin(), relative_error.end()); }
};

/// Small scene for finite differences: the mesh overfills a 32x32 view,
/// Gaussians keep a depth gap from the surface so small perturbations never
/// reorder them against it, and a few scales sit outside [0.1, 10] so the
/// scale regularizer is active.
inline Scene gradient_scene(std::uint64_t seed) {
  scenes::RandomSceneOptions o;
  o.grid_min = 6;
  o.grid_max = 8;  // at most 98 triangles
  o.gaussians_min = 10;
  o.gaussians_max = 50;
  o.half_extent = 80.0;
  o.min_gap = 15.0;
  o.log_scale_lo = std::log(0.8);
  o.log_scale_hi = std::log(4.0);
  Scene s = scenes::random_scene(seed, o);
  s.gaussians[0].log_scale[0] = std::log(0.05);
  s.gaussians[1].log_scale[1] = std::log(12.0);
  return s;
}

inline std::vector<View> gradient_views(const Scene& scene, const RenderSettings& rs) {
  // Principal point off the pixel lattice so no pixel center sits on a shared triangle edge.
  Camera cam = scenes::frontal_camera(32, 32, 24.0);
  cam.cx += 0.237;
  cam.cy -= 0.161;
  Scene target = scene;
  for (Gaussian& g : target.gaussians) g.color = 0.5 * g.color + Vec3::Constant(0.2);
  for (double& t : target.mesh.color.texels) t = 1.0 - t;
  return {View{cam, render(target, cam, rs).image(), {}}};
}

inline LossWeights gradient_weights() {
  LossWeights w;
  w.scale = 0.01;
  w.translation = 0.1;
  w.laplacian = 0.01;
  return w;
}

/// Per-class relative error ||analytic - numeric|| / max(||numeric||, 1e-8)
/// over every scalar of the class (interior vertices only).
inline GradientCase gradient_case(std::uint64_t seed, double step = 1e-5) {
  const Scene scene = gradient_scene(seed);
  const RenderSettings rs = RenderSettings::exact();
  const std::vector<View> views = gradient_views(scene, rs);
  const LossWeights w = gradient_weights();
  const LaplacianOperator lap(scene.mesh);
  const LossEvaluation ev = total_loss(scene, views, w, rs, RenderMode::Hybrid, &lap);

  GradientCase out;
  out.seed = seed;
  const int k = scene.mesh.grid();
  for (std::size_t ci = 0; ci < kAllParamClasses.size(); ++ci) {
    const ParamClass c = kAllParamClasses[ci];
    const std::vector<double> x = gather_params(scene, c);
    const std::vector<double> analytic = gather_grads(ev.grads, c);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (c == ParamClass::Vertices) {
        const int v = static_cast<int>(i / 3), r = v / k, col = v % k;
        if (r == 0 || col == 0 || r == k - 1 || col == k - 1) continue;
      }
      idx.push_back(i);
    }
    std::vector<double> sub;
    for (std::size_t i : idx) sub.push_back(x[i]);
    auto loss = [&](const std::vector<double>& p) {
      Scene t = scene;
      std::vector<double> full = x;
      for (std::size_t j = 0; j < idx.size(); ++j) full[idx[j]] = p[j];
      scatter_params(t, c, full);
      return total_loss(t, views, w, rs, RenderMode::Hybrid, &lap).report.total;
    };
    const std::vector<double> numeric = oracle::finite_diff_grad(loss, sub, step);
    double diff = 0.0, norm = 0.0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      diff += (analytic[idx[j]] - numeric[j]) * (analytic[idx[j]] - numeric[j]);
      norm += numeric[j] * numeric[j];
    }
    out.numeric_norm[ci] = std::sqrt(norm);
    out.relative_error[ci] = std::sqrt(diff) / std::max(std::sqrt(norm), 1e-8);
  }
  return out;
}

}  // namespace hybridsplat::verify
