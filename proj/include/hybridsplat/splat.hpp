#pragma once

// Gaussian half of the hybrid renderer: EWA projection to screen space,
// culling, a global depth sort, tile binning, per-pixel alpha evaluation,
// and the chain rule from screen-space quantities back to Gaussian parameters.

#include "hybridsplat/core.hpp"
#include "hybridsplat/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace hybridsplat {

struct RenderSettings {
  double lowpass = 0.3;              // px^2 added to the 2D covariance diagonal
  double alpha_cutoff = 1.0 / 255.0; // fragments below are skipped; 0 disables
  double alpha_clamp = 0.999;        // >= 1 disables
  double early_stop = 1e-4;          // transmittance threshold; 0 disables
  int tile_size = 16;
  int workers = 1;

  /// Every threshold off: the configuration the brute-force oracle mirrors.
  static RenderSettings exact() {
    RenderSettings s;
    s.alpha_cutoff = 0.0;
    s.alpha_clamp = 1.0;
    s.early_stop = 0.0;
    return s;
  }

  // With the skip disabled the screen footprint still has to end somewhere;
  // beyond this alpha a Gaussian is treated as absent.
  double footprint_alpha() const { return alpha_cutoff > 0.0 ? alpha_cutoff : 1e-12; }
};

struct ProjectedGaussian {
  std::uint32_t source = 0;
  Vec2 mean = Vec2::Zero();
  Vec3 cov = Vec3::Zero();    // (xx, xy, yy), px^2
  Vec3 conic = Vec3::Zero();  // inverse of cov, same packing
  double depth = 0.0;
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
  double extent_x = 0.0;  // half-widths of the footprint's axis-aligned box
  double extent_y = 0.0;
  double radius = 0.0;
};

namespace detail {

struct ProjectionTerms {
  Vec3 cam_mean;
  Mat3 cov3d;
  Eigen::Matrix<double, 2, 3> jacobian;
  Mat2 cov2d;
};

inline ProjectionTerms projection_terms(const Gaussian& g, const Mesh& mesh, const Camera& cam, double lowpass) {
  ProjectionTerms t;
  t.cam_mean = cam.world_to_camera.apply(resolve_position(g, mesh));
  t.cov3d = covariance3d(g);
  const double x = t.cam_mean.x(), y = t.cam_mean.y(), z = t.cam_mean.z();
  t.jacobian << cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z);
  const Mat3& w = cam.world_to_camera.rotation;
  const Eigen::Matrix<double, 2, 3> jw = t.jacobian * w;
  t.cov2d = jw * t.cov3d * jw.transpose();
  t.cov2d(0, 0) += lowpass;
  t.cov2d(1, 1) += lowpass;
  return t;
}

}  // namespace detail

/// Projects, culls, and depth-sorts the scene's Gaussians (ascending camera
/// depth, ties by source index). A Gaussian is culled when its center is in
/// front of the near plane or its footprint box misses every pixel center.
/// The footprint is the ellipse where alpha can reach the skip threshold,
/// but never narrower than 3 sigma.
inline std::vector<ProjectedGaussian> project(const Scene& scene, const Camera& cam, const RenderSettings& settings) {
  cam.validate();
  scene.validate();
  const double cutoff = settings.footprint_alpha();
  std::vector<ProjectedGaussian> out;
  out.reserve(scene.gaussians.size());
  for (std::uint32_t k = 0; k < scene.gaussians.size(); ++k) {
    const Gaussian& g = scene.gaussians[k];
    const Vec3 pc = cam.world_to_camera.apply(resolve_position(g, scene.mesh));
    if (pc.z() < cam.near) continue;
    const double o = g.opacity();
    if (!(o > cutoff)) continue;
    const detail::ProjectionTerms t = detail::projection_terms(g, scene.mesh, cam, settings.lowpass);
    const double a = t.cov2d(0, 0), b = t.cov2d(0, 1), c = t.cov2d(1, 1);
    const double det = a * c - b * b;
    if (!(det > 0.0)) continue;

    ProjectedGaussian pg;
    pg.source = k;
    pg.mean = Vec2(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
    pg.cov = Vec3(a, b, c);
    pg.conic = Vec3(c / det, -b / det, a / det);
    pg.depth = pc.z();
    pg.color = g.color;
    pg.opacity = o;
    const double sigmas = std::max(3.0, std::sqrt(2.0 * std::log(o / cutoff)));
    pg.extent_x = sigmas * std::sqrt(a);
    pg.extent_y = sigmas * std::sqrt(c);
    const double mid = 0.5 * (a + c);
    pg.radius = sigmas * std::sqrt(mid + std::sqrt(std::max(0.0, mid * mid - det)));

    if (pg.mean.x() + pg.extent_x < 0.5 || pg.mean.x() - pg.extent_x > cam.width - 0.5 ||
        pg.mean.y() + pg.extent_y < 0.5 || pg.mean.y() - pg.extent_y > cam.height - 0.5) {
      continue;
    }
    out.push_back(pg);
  }
  std::sort(out.begin(), out.end(), [](const ProjectedGaussian& l, const ProjectedGaussian& r) {
    return l.depth < r.depth || (l.depth == r.depth && l.source < r.source);
  });
  return out;
}

/// Unthresholded o * exp(-q/2) and the quadratic form q at a pixel.
inline double gaussian_falloff(const ProjectedGaussian& pg, const Vec2& pixel, double* quad = nullptr) {
  const double dx = pixel.x() - pg.mean.x();
  const double dy = pixel.y() - pg.mean.y();
  const double q = pg.conic[0] * dx * dx + 2.0 * pg.conic[1] * dx * dy + pg.conic[2] * dy * dy;
  if (quad) *quad = q;
  return pg.opacity * std::exp(-0.5 * q);
}

inline double alpha_at(const ProjectedGaussian& pg, const Vec2& pixel, const RenderSettings& settings = {}) {
  const double alpha = std::min(settings.alpha_clamp, gaussian_falloff(pg, pixel));
  return alpha < settings.alpha_cutoff ? 0.0 : alpha;
}

/// Per-tile lists of projected-Gaussian indices in CSR form. Each tile's
/// list preserves the global depth order.
struct TileBins {
  int tile_size = 16;
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::uint32_t> offsets;  // tiles_x * tiles_y + 1
  std::vector<std::uint32_t> entries;

  std::size_t tile_count() const { return static_cast<std::size_t>(tiles_x) * tiles_y; }
  std::size_t tile_of(int px, int py) const {
    return static_cast<std::size_t>(py / tile_size) * tiles_x + px / tile_size;
  }
  std::size_t begin(std::size_t tile) const { return offsets[tile]; }
  std::size_t end(std::size_t tile) const { return offsets[tile + 1]; }
};

namespace detail {

struct TileRect {
  int x0, x1, y0, y1;
  bool empty() const { return x0 > x1 || y0 > y1; }
};

inline TileRect tile_rect(const ProjectedGaussian& pg, int width, int height, int tile) {
  const int px0 = std::max(0, static_cast<int>(std::ceil(pg.mean.x() - pg.extent_x - 0.5)));
  const int px1 = std::min(width - 1, static_cast<int>(std::floor(pg.mean.x() + pg.extent_x - 0.5)));
  const int py0 = std::max(0, static_cast<int>(std::ceil(pg.mean.y() - pg.extent_y - 0.5)));
  const int py1 = std::min(height - 1, static_cast<int>(std::floor(pg.mean.y() + pg.extent_y - 0.5)));
  if (px0 > px1 || py0 > py1) return {1, 0, 1, 0};
  return {px0 / tile, px1 / tile, py0 / tile, py1 / tile};
}

}  // namespace detail

inline TileBins bin_tiles(const std::vector<ProjectedGaussian>& projected, int width, int height, int tile_size = 16) {
  if (tile_size < 1) throw Error(ErrorKind::InvalidArgument, "tile size must be positive");
  TileBins bins;
  bins.tile_size = tile_size;
  bins.tiles_x = (width + tile_size - 1) / tile_size;
  bins.tiles_y = (height + tile_size - 1) / tile_size;
  std::vector<std::uint32_t> counts(bins.tile_count() + 1, 0);
  std::vector<detail::TileRect> rects(projected.size());
  for (std::size_t i = 0; i < projected.size(); ++i) {
    rects[i] = detail::tile_rect(projected[i], width, height, tile_size);
    if (rects[i].empty()) continue;
    for (int ty = rects[i].y0; ty <= rects[i].y1; ++ty) {
      for (int tx = rects[i].x0; tx <= rects[i].x1; ++tx) ++counts[static_cast<std::size_t>(ty) * bins.tiles_x + tx];
    }
  }
  bins.offsets.assign(bins.tile_count() + 1, 0);
  for (std::size_t t = 0; t < bins.tile_count(); ++t) bins.offsets[t + 1] = bins.offsets[t] + counts[t];
  bins.entries.resize(bins.offsets.back());
  std::vector<std::uint32_t> cursor(bins.offsets.begin(), bins.offsets.end() - 1);
  for (std::size_t i = 0; i < projected.size(); ++i) {
    if (rects[i].empty()) continue;
    for (int ty = rects[i].y0; ty <= rects[i].y1; ++ty) {
      for (int tx = rects[i].x0; tx <= rects[i].x1; ++tx) {
        bins.entries[cursor[static_cast<std::size_t>(ty) * bins.tiles_x + tx]++] = static_cast<std::uint32_t>(i);
      }
    }
  }
  return bins;
}

/// Screen-space gradients accumulated per projected Gaussian.
struct ProjectedGrad {
  Vec2 mean = Vec2::Zero();
  Vec3 conic = Vec3::Zero();
  double opacity = 0.0;
  Vec3 color = Vec3::Zero();

  ProjectedGrad& operator+=(const ProjectedGrad& o) {
    mean += o.mean;
    conic += o.conic;
    opacity += o.opacity;
    color += o.color;
    return *this;
  }
};

/// Chains dL/d(alpha) at one pixel into the Gaussian's screen-space gradient.
inline void alpha_backward(const ProjectedGaussian& pg, const Vec2& pixel, double d_alpha,
                           const RenderSettings& settings, ProjectedGrad& grad) {
  const double dx = pixel.x() - pg.mean.x();
  const double dy = pixel.y() - pg.mean.y();
  const double falloff = std::exp(-0.5 * (pg.conic[0] * dx * dx + 2.0 * pg.conic[1] * dx * dy + pg.conic[2] * dy * dy));
  const double raw = pg.opacity * falloff;
  if (raw > settings.alpha_clamp) return;  // clamped: flat
  grad.opacity += d_alpha * falloff;
  const double d_quad = -0.5 * raw * d_alpha;
  grad.conic += d_quad * Vec3(dx * dx, 2.0 * dx * dy, dy * dy);
  grad.mean -= d_quad * 2.0 * Vec2(pg.conic[0] * dx + pg.conic[1] * dy, pg.conic[1] * dx + pg.conic[2] * dy);
}

struct GaussianGrad {
  Vec3 offset = Vec3::Zero();
  Vec4 rotation = Vec4::Zero();
  Vec3 log_scale = Vec3::Zero();
  double opacity_logit = 0.0;
  Vec3 color = Vec3::Zero();
};

/// Pulls screen-space gradients back through projection to the Gaussian
/// parameters; the anchor vertex receives the same world-space gradient as
/// the offset. Depth enters only through the footprint (sorting is flat).
inline void splat_backward(const Scene& scene, const Camera& cam, const std::vector<ProjectedGaussian>& projected,
                           const std::vector<ProjectedGrad>& grads, const RenderSettings& settings,
                           std::vector<GaussianGrad>& out, std::vector<Vec3>& vertex_grads) {
  if (grads.size() != projected.size()) {
    throw Error(ErrorKind::State, "splat_backward: gradient list does not match the projected set");
  }
  out.resize(scene.gaussians.size());
  vertex_grads.resize(scene.mesh.vertex_count(), Vec3::Zero());
  const Mat3& w = cam.world_to_camera.rotation;

  for (std::size_t i = 0; i < projected.size(); ++i) {
    const ProjectedGaussian& pg = projected[i];
    const ProjectedGrad& pgr = grads[i];
    const Gaussian& g = scene.gaussians[pg.source];
    GaussianGrad& gg = out[pg.source];
    gg.color += pgr.color;
    gg.opacity_logit += pgr.opacity * pg.opacity * (1.0 - pg.opacity);

    const detail::ProjectionTerms t = detail::projection_terms(g, scene.mesh, cam, settings.lowpass);
    const double x = t.cam_mean.x(), y = t.cam_mean.y(), z = t.cam_mean.z();

    Mat2 conic;
    conic << pg.conic[0], pg.conic[1], pg.conic[1], pg.conic[2];
    Mat2 d_conic;
    d_conic << pgr.conic[0], 0.5 * pgr.conic[1], 0.5 * pgr.conic[1], pgr.conic[2];
    const Mat2 d_cov2 = -conic * d_conic * conic;

    const Mat3 v = w * t.cov3d * w.transpose();
    const Eigen::Matrix<double, 2, 3> d_j = 2.0 * d_cov2 * t.jacobian * v;
    const Mat3 d_v = t.jacobian.transpose() * d_cov2 * t.jacobian;
    const Mat3 d_sigma = w.transpose() * d_v * w;

    const Mat3 rot = g.rotation_matrix();
    const Vec3 s = g.scale();
    const Mat3 m = rot * s.asDiagonal();
    const Mat3 d_m = 2.0 * d_sigma * m;
    const Mat3 d_rot = d_m * s.asDiagonal();
    for (int j = 0; j < 3; ++j) gg.log_scale[j] += rot.col(j).dot(d_m.col(j)) * s[j];
    gg.rotation += rotation_from_quaternion_backward(g.rotation, d_rot);

    const double iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;
    Vec3 d_cam = Vec3::Zero();
    d_cam.x() += d_j(0, 2) * (-cam.fx * iz2);
    d_cam.y() += d_j(1, 2) * (-cam.fy * iz2);
    d_cam.z() += d_j(0, 0) * (-cam.fx * iz2) + d_j(0, 2) * (2.0 * cam.fx * x * iz3) + d_j(1, 1) * (-cam.fy * iz2) +
                 d_j(1, 2) * (2.0 * cam.fy * y * iz3);
    d_cam.x() += pgr.mean.x() * cam.fx * iz;
    d_cam.z() -= pgr.mean.x() * cam.fx * x * iz2;
    d_cam.y() += pgr.mean.y() * cam.fy * iz;
    d_cam.z() -= pgr.mean.y() * cam.fy * y * iz2;

    const Vec3 d_world = w.transpose() * d_cam;
    gg.offset += d_world;
    vertex_grads[g.anchor] += d_world;
  }
}

}  // namespace hybridsplat
