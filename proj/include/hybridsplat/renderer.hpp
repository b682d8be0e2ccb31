#pragma once

// Two-pass pipeline: rasterize the mesh, project and bin the Gaussians, then
// composite per pixel. Also the single-representation baselines.

#include "hybridsplat/compositor.hpp"
#include "hybridsplat/core.hpp"
#include "hybridsplat/image.hpp"
#include "hybridsplat/mesh_raster.hpp"
#include "hybridsplat/splat.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace hybridsplat {

enum class RenderMode { Hybrid, GaussianOnly, MeshOnly };

inline const char* to_string(RenderMode m) {
  switch (m) {
    case RenderMode::Hybrid: return "hybrid";
    case RenderMode::GaussianOnly: return "gs-only";
    case RenderMode::MeshOnly: return "mesh-only";
  }
  return "?";
}

inline RenderMode parse_render_mode(const std::string& s) {
  if (s == "hybrid") return RenderMode::Hybrid;
  if (s == "gs-only") return RenderMode::GaussianOnly;
  if (s == "mesh-only") return RenderMode::MeshOnly;
  throw Error(ErrorKind::InvalidArgument, "unknown render mode '" + s + "'");
}

struct RenderOutput {
  RenderMode mode = RenderMode::Hybrid;
  GBuffer gbuf;
  std::vector<ProjectedGaussian> projected;
  TileBins bins;
  CompositeImage composite;

  bool has_mesh() const { return mode != RenderMode::GaussianOnly; }
  const GBuffer* gbuffer() const { return has_mesh() ? &gbuf : nullptr; }
  const Image& image() const { return composite.image; }
};

inline RenderOutput render(const Scene& scene, const Camera& cam, const RenderSettings& settings = {},
                           RenderMode mode = RenderMode::Hybrid) {
  cam.validate();
  scene.validate();
  RenderOutput out;
  out.mode = mode;
  if (mode != RenderMode::GaussianOnly) out.gbuf = rasterize(scene.mesh, cam, settings.workers);
  if (mode != RenderMode::MeshOnly) out.projected = project(scene, cam, settings);
  out.bins = bin_tiles(out.projected, cam.width, cam.height, settings.tile_size);
  out.composite = composite_image(out.gbuffer(), out.bins, out.projected, scene.background, cam.width, cam.height,
                                  settings);
  return out;
}

struct SceneGradients {
  MeshGradients mesh;
  std::vector<GaussianGrad> gaussians;
  Vec3 background = Vec3::Zero();

  SceneGradients() = default;
  explicit SceneGradients(const Scene& scene) : mesh(scene.mesh), gaussians(scene.gaussians.size()) {}

  SceneGradients& operator+=(const SceneGradients& o) {
    mesh += o.mesh;
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
      gaussians[i].offset += o.gaussians[i].offset;
      gaussians[i].rotation += o.gaussians[i].rotation;
      gaussians[i].log_scale += o.gaussians[i].log_scale;
      gaussians[i].opacity_logit += o.gaussians[i].opacity_logit;
      gaussians[i].color += o.gaussians[i].color;
    }
    background += o.background;
    return *this;
  }

  SceneGradients& operator*=(double s) {
    for (auto& p : mesh.positions) p *= s;
    for (auto& t : mesh.color.texels) t *= s;
    for (auto& t : mesh.opacity.texels) t *= s;
    for (auto& g : gaussians) {
      g.offset *= s;
      g.rotation *= s;
      g.log_scale *= s;
      g.opacity_logit *= s;
      g.color *= s;
    }
    background *= s;
    return *this;
  }
};

/// Gradients of a scalar loss with respect to every scene parameter, given
/// dL/d(image) for a forward `render` of the same scene and camera.
inline SceneGradients render_backward(const Scene& scene, const Camera& cam, const RenderOutput& fwd,
                                      const Image& d_image, const RenderSettings& settings = {}) {
  SceneGradients g(scene);
  CompositeGradients cg = composite_image_backward(fwd.gbuffer(), fwd.bins, fwd.projected, scene.background,
                                                   fwd.composite, d_image, settings);
  g.background = cg.background;
  std::vector<Vec3> vertex_grads;
  splat_backward(scene, cam, fwd.projected, cg.projected, settings, g.gaussians, vertex_grads);
  if (fwd.has_mesh()) {
    g.mesh = rasterize_backward(scene.mesh, cam, fwd.gbuf, cg.mesh_color, cg.mesh_opacity, cg.mesh_depth,
                                settings.workers);
  }
  for (std::size_t v = 0; v < vertex_grads.size(); ++v) g.mesh.positions[v] += vertex_grads[v];
  return g;
}

}  // namespace hybridsplat
