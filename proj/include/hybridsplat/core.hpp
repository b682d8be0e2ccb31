#pragma once

// Domain types shared by every stage of the hybrid renderer: cameras,
// the UV-grid mesh with its textures, anchored Gaussians, and the static
// sampling mask that decides where Gaussians live on the grid.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hybridsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

enum class ErrorKind {
  InvalidArgument,
  InvalidAnchor,
  Dimension,
  State,
  Contract,
  NonFinite,
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline constexpr double kFarDepth = std::numeric_limits<double>::infinity();

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 apply_inverse(const Vec3& p) const { return rotation.transpose() * (p - translation); }
};

/// Pinhole camera. Camera space is x right, y down, z forward; depth is
/// camera-space z in scene units (mm). Pixel (i, j) covers [i, i+1) x [j, j+1),
/// so its center sits at (i + 0.5, j + 0.5).
struct Camera {
  RigidTransform world_to_camera;
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;
  double near = 1.0;

  void validate() const {
    const Mat3& r = world_to_camera.rotation;
    if (!r.allFinite() || !world_to_camera.translation.allFinite()) {
      throw Error(ErrorKind::InvalidArgument, "camera extrinsics are not finite");
    }
    if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
        std::abs(r.determinant() - 1.0) > 1e-6) {
      throw Error(ErrorKind::InvalidArgument, "camera rotation is not a proper rotation");
    }
    if (!(fx > 0.0) || !(fy > 0.0) || !(near > 0.0)) {
      throw Error(ErrorKind::InvalidArgument, "camera fx, fy and near must be positive");
    }
    if (width < 1 || height < 1) {
      throw Error(ErrorKind::InvalidArgument, "camera image size must be at least 1x1");
    }
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  // Looks from `eye` towards `target`; `up` is a hint for the image's up direction.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                        int width, int height, double near = 1.0) {
    const Vec3 forward = (target - eye).normalized();
    const Vec3 right = forward.cross(up).normalized();
    const Vec3 down = forward.cross(right);
    Camera cam;
    cam.world_to_camera.rotation.row(0) = right.transpose();
    cam.world_to_camera.rotation.row(1) = down.transpose();
    cam.world_to_camera.rotation.row(2) = forward.transpose();
    cam.world_to_camera.translation = -(cam.world_to_camera.rotation * eye);
    cam.fx = focal;
    cam.fy = focal;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.width = width;
    cam.height = height;
    cam.near = near;
    return cam;
  }
};

struct ProjectedPoint {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
  bool behind = false;  // depth <= near; callers cull
};

inline ProjectedPoint project_point(const Camera& cam, const Vec3& world) {
  const Vec3 p = cam.world_to_camera.apply(world);
  ProjectedPoint out;
  out.depth = p.z();
  out.behind = !(p.z() > cam.near);
  out.pixel = Vec2(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
  return out;
}

inline Vec3 unproject_point(const Camera& cam, const Vec2& pixel, double depth) {
  const Vec3 p((pixel.x() - cam.cx) / cam.fx * depth, (pixel.y() - cam.cy) / cam.fy * depth, depth);
  return cam.world_to_camera.apply_inverse(p);
}

// ---------------------------------------------------------------------------
// Rotations. Quaternions are stored w-first and need not be exactly unit
// length: the rotation is built from the normalized quaternion, so gradients
// taken against the raw four components stay consistent with the forward map.

inline Vec4 identity_quaternion() { return Vec4(1.0, 0.0, 0.0, 0.0); }

inline Mat3 rotation_from_unit_quaternion(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

inline Mat3 rotation_from_quaternion(const Vec4& q) { return rotation_from_unit_quaternion(q.normalized()); }

/// Pulls dL/dR back to the raw (unnormalized) quaternion components.
inline Vec4 rotation_from_quaternion_backward(const Vec4& q, const Mat3& dR) {
  const double norm = q.norm();
  const Vec4 u = q / norm;
  const double w = u[0], x = u[1], y = u[2], z = u[3];
  Vec4 g;
  g[0] = 2.0 * (-z * dR(0, 1) + y * dR(0, 2) + z * dR(1, 0) - x * dR(1, 2) - y * dR(2, 0) + x * dR(2, 1));
  g[1] = 2.0 * (y * dR(0, 1) + z * dR(0, 2) + y * dR(1, 0) - 2.0 * x * dR(1, 1) - w * dR(1, 2) +
                z * dR(2, 0) + w * dR(2, 1) - 2.0 * x * dR(2, 2));
  g[2] = 2.0 * (-2.0 * y * dR(0, 0) + x * dR(0, 1) + w * dR(0, 2) + x * dR(1, 0) + z * dR(1, 2) -
                w * dR(2, 0) + z * dR(2, 1) - 2.0 * y * dR(2, 2));
  g[3] = 2.0 * (-2.0 * z * dR(0, 0) - w * dR(0, 1) + x * dR(0, 2) + w * dR(1, 0) - 2.0 * z * dR(1, 1) +
                y * dR(1, 2) + x * dR(2, 0) + y * dR(2, 1));
  return (g - u * u.dot(g)) / norm;
}

// ---------------------------------------------------------------------------

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// One anisotropic primitive, anchored to a vertex of the mesh UV grid.
/// Scale and opacity are stored unconstrained (log / pre-sigmoid).
struct Gaussian {
  std::uint32_t anchor = 0;
  Vec3 offset = Vec3::Zero();
  Vec4 rotation = identity_quaternion();
  Vec3 log_scale = Vec3::Zero();
  double opacity_logit = 0.0;
  Vec3 color = Vec3::Constant(0.5);

  Vec3 scale() const { return log_scale.array().exp().matrix(); }
  double opacity() const { return sigmoid(opacity_logit); }
  Mat3 rotation_matrix() const { return rotation_from_quaternion(rotation); }
};

/// Square texture, row-major, `channels` interleaved values per texel.
struct TextureMap {
  int size = 0;
  int channels = 0;
  std::vector<double> texels;

  TextureMap() = default;
  TextureMap(int size_, int channels_, double fill = 0.0)
      : size(size_), channels(channels_),
        texels(static_cast<std::size_t>(size_) * size_ * channels_, fill) {}

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * size + x) * channels + c;
  }
  double& at(int x, int y, int c = 0) { return texels[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return texels[index(x, y, c)]; }
};

using Triangle = std::array<std::uint32_t, 3>;

/// Triangle mesh whose K x K vertices are laid out on a UV grid. Vertex
/// v = row * K + col has UV (col / (K-1), row / (K-1)). Topology is fixed at
/// construction; positions and textures are the mutable parameters.
class Mesh {
 public:
  Mesh() = default;

  Mesh(int grid, std::vector<Vec3> positions_, std::vector<Triangle> triangles, TextureMap color_,
       TextureMap opacity_)
      : positions(std::move(positions_)), color(std::move(color_)), opacity(std::move(opacity_)),
        grid_(grid), triangles_(std::move(triangles)) {
    if (grid_ < 1) throw Error(ErrorKind::InvalidArgument, "mesh grid resolution must be >= 1");
    const std::size_t n = static_cast<std::size_t>(grid_) * grid_;
    if (positions.size() != n) {
      throw Error(ErrorKind::Dimension, "mesh needs exactly K*K vertex positions");
    }
    for (const Triangle& t : triangles_) {
      for (std::uint32_t v : t) {
        if (v >= n) throw Error(ErrorKind::InvalidArgument, "triangle index out of range");
      }
    }
    if (color.channels != 3 || color.size < 1 ||
        color.texels.size() != static_cast<std::size_t>(color.size) * color.size * 3) {
      throw Error(ErrorKind::Dimension, "color texture must be a square 3-channel map");
    }
    if (opacity.channels != 1 || opacity.size < 1 ||
        opacity.texels.size() != static_cast<std::size_t>(opacity.size) * opacity.size) {
      throw Error(ErrorKind::Dimension, "opacity texture must be a square 1-channel map");
    }
    clamp_textures();
  }

  int grid() const { return grid_; }
  std::size_t vertex_count() const { return positions.size(); }
  const std::vector<Triangle>& triangles() const { return triangles_; }

  Vec2 vertex_uv(std::uint32_t v) const {
    if (grid_ < 2) return Vec2::Zero();
    const double inv = 1.0 / (grid_ - 1);
    return Vec2((v % grid_) * inv, (v / grid_) * inv);
  }

  void clamp_textures() {
    for (double& t : color.texels) t = std::clamp(t, 0.0, 1.0);
    for (double& t : opacity.texels) t = std::clamp(t, 0.0, 1.0);
  }

  /// Bilinear interpolation of the vertex grid at a UV location.
  Vec3 surface_point(const Vec2& uv) const {
    if (grid_ < 2) return positions.front();
    const double gx = std::clamp(uv.x(), 0.0, 1.0) * (grid_ - 1);
    const double gy = std::clamp(uv.y(), 0.0, 1.0) * (grid_ - 1);
    const int x0 = std::min(static_cast<int>(gx), grid_ - 2);
    const int y0 = std::min(static_cast<int>(gy), grid_ - 2);
    const double tx = gx - x0, ty = gy - y0;
    auto at = [&](int x, int y) -> const Vec3& { return positions[static_cast<std::size_t>(y) * grid_ + x]; };
    return (1 - ty) * ((1 - tx) * at(x0, y0) + tx * at(x0 + 1, y0)) +
           ty * ((1 - tx) * at(x0, y0 + 1) + tx * at(x0 + 1, y0 + 1));
  }

  std::uint32_t nearest_vertex(const Vec2& uv) const {
    if (grid_ < 2) return 0;
    const int col = static_cast<int>(std::lround(std::clamp(uv.x(), 0.0, 1.0) * (grid_ - 1)));
    const int row = static_cast<int>(std::lround(std::clamp(uv.y(), 0.0, 1.0) * (grid_ - 1)));
    return static_cast<std::uint32_t>(row * grid_ + col);
  }

  std::vector<Vec3> positions;
  TextureMap color;
  TextureMap opacity;

 private:
  int grid_ = 0;
  std::vector<Triangle> triangles_;
};

/// Two triangles per grid cell, split along the (row, col)-(row+1, col+1) diagonal.
inline std::vector<Triangle> grid_topology(int grid) {
  std::vector<Triangle> tris;
  if (grid < 2) return tris;
  tris.reserve(static_cast<std::size_t>(grid - 1) * (grid - 1) * 2);
  for (int r = 0; r + 1 < grid; ++r) {
    for (int c = 0; c + 1 < grid; ++c) {
      const auto v00 = static_cast<std::uint32_t>(r * grid + c);
      const auto v01 = v00 + 1;
      const auto v10 = v00 + static_cast<std::uint32_t>(grid);
      const auto v11 = v10 + 1;
      tris.push_back({v00, v01, v11});
      tris.push_back({v00, v11, v10});
    }
  }
  return tris;
}

struct Scene {
  Mesh mesh;
  std::vector<Gaussian> gaussians;
  Vec3 background = Vec3::Zero();

  void validate() const {
    for (const Gaussian& g : gaussians) {
      if (g.anchor >= mesh.vertex_count()) {
        throw Error(ErrorKind::InvalidAnchor, "gaussian anchor " + std::to_string(g.anchor) +
                                                  " out of range for " +
                                                  std::to_string(mesh.vertex_count()) + " vertices");
      }
    }
  }
};

inline Vec3 resolve_position(const Gaussian& g, const Mesh& mesh) {
  if (g.anchor >= mesh.vertex_count()) {
    throw Error(ErrorKind::InvalidAnchor, "gaussian anchor " + std::to_string(g.anchor) + " out of range");
  }
  return mesh.positions[g.anchor] + g.offset;
}

/// Sigma = R diag(s)^2 R^T.
inline Mat3 covariance3d(const Gaussian& g) {
  const Mat3 m = g.rotation_matrix() * g.scale().asDiagonal();
  const Mat3 sigma = m * m.transpose();
  return 0.5 * (sigma + sigma.transpose());  // exactly symmetric
}

// ---------------------------------------------------------------------------
// Static sampling mask

struct SamplingMask {
  int resolution = 0;
  std::vector<std::uint8_t> priority;  // resolution^2 flags, row-major
  std::size_t budget = 0;
  double priority_fraction = 0.75;
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> selected;  // sorted texel indices
  std::vector<std::string> warnings;

  Vec2 texel_uv(std::uint32_t texel) const {
    return Vec2((texel % resolution + 0.5) / resolution, (texel / resolution + 0.5) / resolution);
  }
};

namespace detail {

// One pick per equal-width stratum of the (sorted) candidate list.
inline void stratified_pick(const std::vector<std::uint32_t>& candidates, std::size_t quota,
                            std::mt19937_64& rng, std::vector<std::uint32_t>& out) {
  const std::size_t n = candidates.size();
  for (std::size_t s = 0; s < quota; ++s) {
    const std::size_t lo = s * n / quota;
    const std::size_t hi = (s + 1) * n / quota;
    out.push_back(candidates[lo + static_cast<std::size_t>(rng() % (hi - lo))]);
  }
}

}  // namespace detail

inline SamplingMask build_sampling_mask(int resolution, const std::vector<std::uint8_t>& priority,
                                        std::size_t budget, double priority_fraction = 0.75,
                                        std::uint64_t seed = 0) {
  const std::size_t total = static_cast<std::size_t>(resolution) * resolution;
  if (resolution < 1 || priority.size() != total) {
    throw Error(ErrorKind::Dimension, "priority map must be resolution x resolution");
  }
  if (budget > total) throw Error(ErrorKind::InvalidArgument, "budget exceeds the number of texels");
  if (!(priority_fraction >= 0.0 && priority_fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "priority fraction must be in [0, 1]");
  }

  SamplingMask mask;
  mask.resolution = resolution;
  mask.priority = priority;
  mask.budget = budget;
  mask.priority_fraction = priority_fraction;
  mask.seed = seed;

  std::vector<std::uint32_t> prio, rest;
  for (std::uint32_t i = 0; i < total; ++i) (priority[i] ? prio : rest).push_back(i);

  std::size_t prio_quota = static_cast<std::size_t>(std::llround(priority_fraction * budget));
  std::size_t rest_quota = budget - prio_quota;
  if (prio_quota > prio.size()) {
    mask.warnings.push_back("priority region has " + std::to_string(prio.size()) +
                            " texels, fewer than its quota of " + std::to_string(prio_quota) +
                            "; remainder taken from the rest");
    prio_quota = prio.size();
    rest_quota = budget - prio_quota;
  } else if (rest_quota > rest.size()) {
    mask.warnings.push_back("non-priority region has " + std::to_string(rest.size()) +
                            " texels, fewer than its quota of " + std::to_string(rest_quota) +
                            "; remainder taken from the priority region");
    rest_quota = rest.size();
    prio_quota = budget - rest_quota;
  }

  std::mt19937_64 rng(seed);
  detail::stratified_pick(prio, prio_quota, rng, mask.selected);
  detail::stratified_pick(rest, rest_quota, rng, mask.selected);
  std::sort(mask.selected.begin(), mask.selected.end());
  return mask;
}

/// Spawns one Gaussian per selected texel, anchored at the nearest grid
/// vertex with its offset pointing at the texel's surface location.
inline std::vector<Gaussian> gaussians_from_mask(const Mesh& mesh, const SamplingMask& mask,
                                                 const Gaussian& prototype) {
  std::vector<Gaussian> out;
  out.reserve(mask.selected.size());
  for (std::uint32_t texel : mask.selected) {
    const Vec2 uv = mask.texel_uv(texel);
    Gaussian g = prototype;
    g.anchor = mesh.nearest_vertex(uv);
    g.offset = mesh.surface_point(uv) - mesh.positions[g.anchor];
    out.push_back(g);
  }
  return out;
}

}  // namespace hybridsplat
