#pragma once

// Procedural scenes and camera rigs for tests, benchmarks, and the demo.

#include "hybridsplat/core.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace hybridsplat::scenes {

/// Uniform draw in [lo, hi) from raw 64-bit words, so sequences do not
/// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  std::uint64_t next() { return engine_(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
  Vec4 unit_quaternion() {
    Vec4 q;
    do {
      q = Vec4(uniform(-1, 1), uniform(-1, 1), uniform(-1, 1), uniform(-1, 1));
    } while (q.norm() < 0.1 || q.norm() > 1.0);
    return q.normalized();
  }

 private:
  std::mt19937_64 engine_;
};

/// Camera at the origin looking down +z.
inline Camera frontal_camera(int width, int height, double focal, double near = 1.0) {
  Camera cam;
  cam.fx = cam.fy = focal;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.width = width;
  cam.height = height;
  cam.near = near;
  return cam;
}

struct RandomSceneOptions {
  int grid_min = 4;
  int grid_max = 16;       // (K-1)^2 * 2 triangles
  int gaussians_min = 1;
  int gaussians_max = 200;
  int texture_min = 4;
  int texture_max = 16;
  double depth = 100.0;    // mesh depth in front of the frontal camera
  double half_extent = 60.0;
  double relief = 8.0;
  double log_scale_lo = std::log(0.5);
  double log_scale_hi = std::log(6.0);
  double front_band = 40.0;  // Gaussians within this distance of the mesh, either side
  double min_gap = 0.0;      // min |depth - mesh depth| along the anchor's line of sight
  bool opaque_mesh = false;
};

/// Height-field grid facing the frontal camera with random textures and
/// Gaussians scattered in front of and behind it.
inline Scene random_scene(std::uint64_t seed, const RandomSceneOptions& o = {}) {
  Rng rng(seed);
  const int k = o.grid_min + static_cast<int>(rng.below(o.grid_max - o.grid_min + 1));
  std::vector<Vec3> pos(static_cast<std::size_t>(k) * k);
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c < k; ++c) {
      const double x = -o.half_extent + 2.0 * o.half_extent * c / (k - 1);
      const double y = -o.half_extent + 2.0 * o.half_extent * r / (k - 1);
      pos[static_cast<std::size_t>(r) * k + c] = Vec3(x, y, o.depth + rng.uniform(-o.relief, o.relief));
    }
  }
  const int tc = o.texture_min + static_cast<int>(rng.below(o.texture_max - o.texture_min + 1));
  TextureMap color(tc, 3), opacity(tc, 1);
  for (double& t : color.texels) t = rng.uniform();
  for (double& t : opacity.texels) t = o.opaque_mesh ? 1.0 : rng.uniform(0.05, 1.0);

  Scene scene;
  scene.mesh = Mesh(k, std::move(pos), grid_topology(k), std::move(color), std::move(opacity));
  scene.background = Vec3(rng.uniform(), rng.uniform(), rng.uniform());

  const int n = o.gaussians_min + static_cast<int>(rng.below(o.gaussians_max - o.gaussians_min + 1));
  for (int i = 0; i < n; ++i) {
    Gaussian g;
    g.anchor = static_cast<std::uint32_t>(rng.below(scene.mesh.vertex_count()));
    const Vec3& a = scene.mesh.positions[g.anchor];
    double dz;
    do {
      dz = rng.uniform(-o.front_band, o.front_band);
    } while (std::abs(dz) < o.min_gap);
    // Move along the anchor's line of sight so the depth offset from the
    // surface is what the gap controls.
    const Vec3 target = a * ((a.z() + dz) / a.z());
    g.offset = target - a + Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), 0.0) * (o.min_gap > 0 ? 0.0 : 1.0);
    g.rotation = rng.unit_quaternion();
    for (int j = 0; j < 3; ++j) g.log_scale[j] = rng.uniform(o.log_scale_lo, o.log_scale_hi);
    g.opacity_logit = rng.uniform(-2.5, 2.5);
    g.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    scene.gaussians.push_back(g);
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Textured hemisphere with a fuzzy "hair" band

struct HemisphereOptions {
  int grid = 48;
  double radius = 80.0;
  int texture = 128;
  int gaussians = 2000;
  int mask_resolution = 256;
  double priority_fraction = 0.75;
  double priority_band = 0.35;  // v below this is the priority region
  double fuzz_length = 4.0;     // max outward displacement, mm
  std::uint64_t seed = 7;
};

/// Point on the front hemisphere for UV in [0,1]^2; faces -z.
inline Vec3 hemisphere_point(const Vec2& uv, double radius) {
  const double phi = (uv.x() - 0.5) * std::numbers::pi;
  const double theta = (uv.y() - 0.5) * std::numbers::pi;
  return radius * Vec3(std::cos(theta) * std::sin(phi), std::sin(theta), -std::cos(theta) * std::cos(phi));
}

/// High-frequency procedural albedo: stripes, checks, and a hue ramp.
inline TextureMap hemisphere_texture(int size) {
  TextureMap tex(size, 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size, v = (y + 0.5) / size;
      const double check = ((x / 8 + y / 8) % 2) ? 0.2 : 0.0;
      const double stripe = 0.15 * std::sin(2.0 * std::numbers::pi * 12.0 * (u + 0.5 * v));
      tex.at(x, y, 0) = std::clamp(0.55 + 0.3 * u + stripe - check, 0.0, 1.0);
      tex.at(x, y, 1) = std::clamp(0.35 + 0.3 * v - stripe, 0.0, 1.0);
      tex.at(x, y, 2) = std::clamp(0.25 + 0.2 * (1 - u) + check, 0.0, 1.0);
    }
  }
  return tex;
}

inline Mesh hemisphere_mesh(const HemisphereOptions& o) {
  std::vector<Vec3> pos(static_cast<std::size_t>(o.grid) * o.grid);
  for (int r = 0; r < o.grid; ++r) {
    for (int c = 0; c < o.grid; ++c) {
      const Vec2 uv(static_cast<double>(c) / (o.grid - 1), static_cast<double>(r) / (o.grid - 1));
      pos[static_cast<std::size_t>(r) * o.grid + c] = hemisphere_point(uv, o.radius);
    }
  }
  return Mesh(o.grid, std::move(pos), grid_topology(o.grid), hemisphere_texture(o.texture),
              TextureMap(o.texture, 1, 1.0));
}

inline std::vector<std::uint8_t> hemisphere_priority(const HemisphereOptions& o) {
  std::vector<std::uint8_t> prio(static_cast<std::size_t>(o.mask_resolution) * o.mask_resolution, 0);
  for (int y = 0; y < o.mask_resolution; ++y) {
    const bool band = (y + 0.5) / o.mask_resolution < o.priority_band;
    for (int x = 0; x < o.mask_resolution; ++x) prio[static_cast<std::size_t>(y) * o.mask_resolution + x] = band;
  }
  return prio;
}

/// Fuzz Gaussians: small, elongated, dark strands standing off the surface,
/// placed through the sampling mask.
inline std::vector<Gaussian> hemisphere_fuzz(const Mesh& mesh, const HemisphereOptions& o) {
  const SamplingMask mask = build_sampling_mask(o.mask_resolution, hemisphere_priority(o),
                                                static_cast<std::size_t>(o.gaussians), o.priority_fraction, o.seed);
  std::vector<Gaussian> gs = gaussians_from_mask(mesh, mask, Gaussian{});
  Rng rng(o.seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t i = 0; i < gs.size(); ++i) {
    Gaussian& g = gs[i];
    const Vec3 p = mesh.positions[g.anchor] + g.offset;
    const Vec3 normal = p.normalized();
    g.offset += normal * rng.uniform(0.0, o.fuzz_length);
    g.rotation = rng.unit_quaternion();
    g.log_scale = Vec3(std::log(rng.uniform(1.5, 3.0)), std::log(rng.uniform(0.3, 0.6)),
                       std::log(rng.uniform(0.3, 0.6)));
    g.opacity_logit = rng.uniform(-0.5, 1.5);
    const double shade = rng.uniform(0.05, 0.3);
    g.color = Vec3(shade * 1.4, shade, shade * 0.7);
  }
  return gs;
}

inline Scene hemisphere_scene(const HemisphereOptions& o = {}) {
  Scene s;
  s.mesh = hemisphere_mesh(o);
  s.gaussians = hemisphere_fuzz(s.mesh, o);
  s.background = Vec3(0.9, 0.9, 0.92);
  return s;
}

// ---------------------------------------------------------------------------
// Budget benchmark: starting models fitted against hemisphere_scene targets

inline Vec4 quaternion_from_rotation(const Mat3& r) {
  const Eigen::Quaterniond q(r);
  return Vec4(q.w(), q.x(), q.y(), q.z());
}

/// Initial model with `n` Gaussians. The hybrid model keeps the reference
/// geometry with a flat grey texture and concentrates its Gaussians in the
/// priority band. The Gaussian-only model spreads flat surface-aligned disks
/// uniformly so they can tile the whole surface.
inline Scene budget_initial_model(const Scene& truth, const HemisphereOptions& o, int n, bool hybrid) {
  Scene s;
  s.background = truth.background;
  s.mesh = truth.mesh;
  for (double& t : s.mesh.color.texels) t = 0.5;
  for (double& t : s.mesh.opacity.texels) t = 1.0;

  const double band_area = std::clamp(o.priority_band, 0.0, 1.0);
  const double frac = hybrid ? o.priority_fraction : band_area;
  const SamplingMask mask = build_sampling_mask(o.mask_resolution, hemisphere_priority(o),
                                                static_cast<std::size_t>(n), frac, o.seed + 1);
  Gaussian proto;
  proto.color = Vec3::Constant(0.5);
  s.gaussians = gaussians_from_mask(s.mesh, mask, proto);

  const double disk = 0.6 * std::sqrt(2.0 * std::numbers::pi * o.radius * o.radius / n);
  for (Gaussian& g : s.gaussians) {
    const Vec3 normal = (s.mesh.positions[g.anchor] + g.offset).normalized();
    if (hybrid) {
      g.offset += 0.5 * o.fuzz_length * normal;
      g.log_scale = Vec3::Zero();
      g.opacity_logit = 0.0;
      g.color = Vec3::Constant(0.3);
    } else {
      const Vec3 a = std::abs(normal.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
      const Vec3 t1 = a.cross(normal).normalized();
      Mat3 r;
      r << t1, normal.cross(t1), normal;
      g.rotation = quaternion_from_rotation(r);
      g.log_scale = Vec3(std::log(disk), std::log(disk), std::log(0.3 * disk));
      g.opacity_logit = 2.0;
    }
  }
  return s;
}

/// Views on a sphere around the origin, spread over yaw in [-40, 40] deg and
/// pitch in [-25, 25] deg, all looking at the origin from in front (-z).
inline std::vector<Camera> orbit_cameras(int count, int width, int height, double distance = 300.0,
                                         double fov_deg = 36.0) {
  std::vector<Camera> cams;
  const double focal = 0.5 * width / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
  for (int i = 0; i < count; ++i) {
    const double t = count == 1 ? 0.5 : static_cast<double>(i) / (count - 1);
    const double yaw = (-40.0 + 80.0 * t) * std::numbers::pi / 180.0;
    const double pitch = 25.0 * std::sin(2.0 * std::numbers::pi * t + 0.5) * std::numbers::pi / 180.0;
    const Vec3 eye = distance * Vec3(std::cos(pitch) * std::sin(yaw), std::sin(pitch), -std::cos(pitch) * std::cos(yaw));
    cams.push_back(Camera::look_at(eye, Vec3::Zero(), Vec3(0, -1, 0), focal, width, height, 1.0));
  }
  return cams;
}

}  // namespace hybridsplat::scenes
