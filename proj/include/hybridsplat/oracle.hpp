#pragma once

// Brute-force reference implementations for verification. Nothing here calls
// into the rasterizer, splatting, or compositing code: projection, alpha
// evaluation, ray casting, texture sampling, and compositing are re-derived
// independently so that agreement with the main pipeline means something.

#include "hybridsplat/compositor.hpp"
#include "hybridsplat/core.hpp"
#include "hybridsplat/image.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <tuple>
#include <vector>

namespace hybridsplat::oracle {

struct Options {
  double alpha_cutoff = 0.0;  // 0 disables the skip
  double alpha_clamp = 1.0;   // >= 1 disables the clamp
  double lowpass = 0.3;
};

inline constexpr int kMaxPixels = 128 * 128;
inline constexpr std::size_t kMaxGaussians = 500;
inline constexpr std::size_t kMaxTriangles = 1000;

struct RayHit {
  double depth = kFarDepth;
  int triangle = -1;
  Vec3 barycentric = Vec3::Zero();
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
};

inline double sample_texture(const TextureMap& tex, const Vec2& uv, int channel) {
  const double px = uv.x() * tex.size - 0.5;
  const double py = uv.y() * tex.size - 0.5;
  const int ix = static_cast<int>(std::floor(px));
  const int iy = static_cast<int>(std::floor(py));
  double acc = 0.0;
  for (int dy = 0; dy <= 1; ++dy) {
    for (int dx = 0; dx <= 1; ++dx) {
      const double wx = dx ? px - ix : 1.0 - (px - ix);
      const double wy = dy ? py - iy : 1.0 - (py - iy);
      const int sx = std::min(std::max(ix + dx, 0), tex.size - 1);
      const int sy = std::min(std::max(iy + dy, 0), tex.size - 1);
      acc += wx * wy * tex.texels[(static_cast<std::size_t>(sy) * tex.size + sx) * tex.channels + channel];
    }
  }
  return acc;
}

/// Nearest camera-ray / triangle intersection through the pixel center.
/// Triangles with a vertex at or before the near plane are ignored.
inline RayHit cast_pixel(const Mesh& mesh, const Camera& cam, int px, int py) {
  RayHit hit;
  const Vec3 dir((px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy, 1.0);
  const auto& tris = mesh.triangles();
  for (std::size_t t = 0; t < tris.size(); ++t) {
    Vec3 v[3];
    bool ok = true;
    for (int k = 0; k < 3; ++k) {
      v[k] = cam.world_to_camera.rotation * mesh.positions[tris[t][k]] + cam.world_to_camera.translation;
      ok = ok && v[k].z() > cam.near;
    }
    if (!ok) continue;
    // Moller-Trumbore from the camera origin.
    const Vec3 e1 = v[1] - v[0], e2 = v[2] - v[0];
    const Vec3 pvec = dir.cross(e2);
    const double det = e1.dot(pvec);
    if (std::abs(det) < 1e-14) continue;
    const double inv = 1.0 / det;
    const Vec3 tvec = -v[0];
    const double u = tvec.dot(pvec) * inv;
    if (u < 0.0 || u > 1.0) continue;
    const Vec3 qvec = tvec.cross(e1);
    const double w = dir.dot(qvec) * inv;
    if (w < 0.0 || u + w > 1.0) continue;
    const double depth = e2.dot(qvec) * inv;  // dir.z == 1, so ray parameter == camera z
    if (!(depth > 0.0)) continue;
    if (depth < hit.depth) {
      hit.depth = depth;
      hit.triangle = static_cast<int>(t);
      hit.barycentric = Vec3(1.0 - u - w, u, w);
    }
  }
  if (hit.triangle >= 0) {
    const auto& tri = tris[hit.triangle];
    Vec2 uv = Vec2::Zero();
    for (int k = 0; k < 3; ++k) uv += hit.barycentric[k] * mesh.vertex_uv(tri[k]);
    hit.color = Vec3(sample_texture(mesh.color, uv, 0), sample_texture(mesh.color, uv, 1),
                     sample_texture(mesh.color, uv, 2));
    hit.opacity = sample_texture(mesh.opacity, uv, 0);
  }
  return hit;
}

struct ReferenceGaussian {
  std::uint32_t id;
  Vec2 mean;
  Mat2 precision;
  double depth;
  double opacity;
  Vec3 color;
};

inline std::vector<ReferenceGaussian> reference_gaussians(const Scene& scene, const Camera& cam, const Options& opt) {
  std::vector<ReferenceGaussian> out;
  const Mat3& w = cam.world_to_camera.rotation;
  for (std::uint32_t k = 0; k < scene.gaussians.size(); ++k) {
    const Gaussian& g = scene.gaussians[k];
    if (g.anchor >= scene.mesh.vertex_count()) throw Error(ErrorKind::InvalidAnchor, "oracle: anchor out of range");
    const Vec3 pw = scene.mesh.positions[g.anchor] + g.offset;
    const Vec3 pc = w * pw + cam.world_to_camera.translation;
    if (pc.z() < cam.near) continue;
    const Eigen::Quaterniond q(g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]);
    const Mat3 r = q.normalized().toRotationMatrix();
    Mat3 s2 = Mat3::Zero();
    for (int i = 0; i < 3; ++i) s2(i, i) = std::exp(2.0 * g.log_scale[i]);
    const Mat3 sigma = r * s2 * r.transpose();
    Eigen::Matrix<double, 2, 3> j;
    const double z = pc.z();
    j << cam.fx / z, 0.0, -cam.fx * pc.x() / (z * z), 0.0, cam.fy / z, -cam.fy * pc.y() / (z * z);
    Mat2 cov = j * w * sigma * w.transpose() * j.transpose();
    cov += opt.lowpass * Mat2::Identity();
    ReferenceGaussian rg;
    rg.id = k;
    rg.mean = Vec2(cam.fx * pc.x() / z + cam.cx, cam.fy * pc.y() / z + cam.cy);
    rg.precision = cov.inverse();
    rg.depth = z;
    rg.opacity = 1.0 / (1.0 + std::exp(-g.opacity_logit));
    rg.color = g.color;
    out.push_back(rg);
  }
  return out;
}

inline double reference_alpha(const ReferenceGaussian& g, const Vec2& pixel, const Options& opt) {
  const Vec2 d = pixel - g.mean;
  double a = g.opacity * std::exp(-0.5 * d.dot(g.precision * d));
  if (opt.alpha_clamp < 1.0) a = std::min(a, opt.alpha_clamp);
  if (a < opt.alpha_cutoff) a = 0.0;
  return a;
}

struct MergedFragment {
  double depth;
  long long rank;  // mesh = -1, so on a depth tie the mesh comes first
  double alpha;
  Vec3 color;
};

/// Standard front-to-back "over" of a single merged fragment list.
inline Vec3 over_composite(std::vector<MergedFragment> frags, const Vec3& background, double* transmittance = nullptr) {
  std::sort(frags.begin(), frags.end(), [](const MergedFragment& a, const MergedFragment& b) {
    return std::tie(a.depth, a.rank) < std::tie(b.depth, b.rank);
  });
  Vec3 c = Vec3::Zero();
  double t = 1.0;
  for (const MergedFragment& f : frags) {
    c += t * f.alpha * f.color;
    t *= 1.0 - f.alpha;
  }
  if (transmittance) *transmittance = t;
  return c + t * background;
}

/// Merged-list compositing of a per-pixel stream: the mesh sample becomes a
/// single fragment among the Gaussians.
inline Vec3 reference_composite(const PixelFragmentStream& stream, double* transmittance = nullptr) {
  std::vector<MergedFragment> frags;
  frags.reserve(stream.gaussians.size() + 1);
  for (const Fragment& f : stream.gaussians) {
    frags.push_back({f.depth, static_cast<long long>(f.source), f.alpha, f.color});
  }
  frags.push_back({stream.mesh.depth, -1, stream.mesh.opacity, stream.mesh.color});
  return over_composite(std::move(frags), stream.background, transmittance);
}

inline void check_desk_scale(const Scene& scene, const Camera& cam) {
  if (static_cast<long long>(cam.width) * cam.height > kMaxPixels || scene.gaussians.size() > kMaxGaussians ||
      scene.mesh.triangles().size() > kMaxTriangles) {
    throw Error(ErrorKind::InvalidArgument, "oracle: scene exceeds desk-scale limits (128x128, 500 gaussians, 1000 triangles)");
  }
}

/// Per-pixel brute-force hybrid render: every Gaussian at every pixel, the
/// mesh sample by exact ray casting, one merged sort, one over pass.
inline Image reference_render(const Scene& scene, const Camera& cam, const Options& opt = {}) {
  cam.validate();
  check_desk_scale(scene, cam);
  const std::vector<ReferenceGaussian> gs = reference_gaussians(scene, cam, opt);
  Image img(cam.width, cam.height, 3);
  std::vector<MergedFragment> frags;
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Vec2 center(x + 0.5, y + 0.5);
      frags.clear();
      for (const ReferenceGaussian& g : gs) {
        frags.push_back({g.depth, static_cast<long long>(g.id), reference_alpha(g, center, opt), g.color});
      }
      const RayHit hit = cast_pixel(scene.mesh, cam, x, y);
      if (hit.triangle >= 0) frags.push_back({hit.depth, -1, hit.opacity, hit.color});
      img.set_rgb(static_cast<std::size_t>(y) * cam.width + x, over_composite(frags, scene.background));
    }
  }
  return img;
}

/// Central differences (f(x+h) - f(x-h)) / 2h per coordinate.
inline std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& loss,
                                            std::vector<double> params, const std::vector<double>& steps) {
  if (steps.size() != params.size()) throw Error(ErrorKind::Dimension, "finite_diff_grad: one step per parameter");
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double x0 = params[i];
    params[i] = x0 + steps[i];
    const double fp = loss(params);
    params[i] = x0 - steps[i];
    const double fm = loss(params);
    params[i] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw Error(ErrorKind::NonFinite, "finite_diff_grad: loss is not finite at coordinate " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * steps[i]);
  }
  return grad;
}

inline std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& loss,
                                            const std::vector<double>& params, double step = 1e-3) {
  return finite_diff_grad(loss, params, std::vector<double>(params.size(), step));
}

}  // namespace hybridsplat::oracle
