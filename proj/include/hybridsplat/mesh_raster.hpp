#pragma once

// First pass of the hybrid pipeline: an opaque z-buffered rasterization of
// the textured mesh producing per-pixel color, opacity, and camera depth.

#include "hybridsplat/core.hpp"
#include "hybridsplat/parallel.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace hybridsplat {

struct GBuffer {
  int width = 0;
  int height = 0;
  std::vector<Vec3> color;
  std::vector<double> opacity;
  std::vector<double> depth;           // kFarDepth where uncovered
  std::vector<std::int32_t> triangle;  // -1 where uncovered
  std::vector<Vec3> barycentric;       // perspective-correct weights of the winning triangle

  GBuffer() = default;
  GBuffer(int w, int h)
      : width(w), height(h), color(static_cast<std::size_t>(w) * h, Vec3::Zero()),
        opacity(static_cast<std::size_t>(w) * h, 0.0), depth(static_cast<std::size_t>(w) * h, kFarDepth),
        triangle(static_cast<std::size_t>(w) * h, -1),
        barycentric(static_cast<std::size_t>(w) * h, Vec3::Zero()) {}

  std::size_t pixel_count() const { return depth.size(); }
  bool covered(std::size_t p) const { return triangle[p] >= 0; }
};

/// Bilinear footprint of a UV location on a square texture, clamp-to-edge.
/// Texel (i, j) has its center at ((i + 0.5) / size, (j + 0.5) / size).
struct BilinearTap {
  int x0, x1, y0, y1;
  double tx, ty;

  BilinearTap(int size, const Vec2& uv) {
    const double fx = uv.x() * size - 0.5;
    const double fy = uv.y() * size - 0.5;
    const double flx = std::floor(fx), fly = std::floor(fy);
    tx = fx - flx;
    ty = fy - fly;
    const int ix = static_cast<int>(flx), iy = static_cast<int>(fly);
    x0 = std::clamp(ix, 0, size - 1);
    x1 = std::clamp(ix + 1, 0, size - 1);
    y0 = std::clamp(iy, 0, size - 1);
    y1 = std::clamp(iy + 1, 0, size - 1);
  }

  double w00() const { return (1 - tx) * (1 - ty); }
  double w10() const { return tx * (1 - ty); }
  double w01() const { return (1 - tx) * ty; }
  double w11() const { return tx * ty; }

  double sample(const TextureMap& t, int c) const {
    return w00() * t.at(x0, y0, c) + w10() * t.at(x1, y0, c) + w01() * t.at(x0, y1, c) + w11() * t.at(x1, y1, c);
  }

  // d(sample)/d(uv); zero along an axis where the footprint is clamped flat.
  Vec2 sample_grad(const TextureMap& t, int c) const {
    const double du = (1 - ty) * (t.at(x1, y0, c) - t.at(x0, y0, c)) + ty * (t.at(x1, y1, c) - t.at(x0, y1, c));
    const double dv = (1 - tx) * (t.at(x0, y1, c) - t.at(x0, y0, c)) + tx * (t.at(x1, y1, c) - t.at(x1, y0, c));
    return Vec2(du * t.size, dv * t.size);
  }

  void scatter(TextureMap& t, int c, double g) const {
    t.at(x0, y0, c) += w00() * g;
    t.at(x1, y0, c) += w10() * g;
    t.at(x0, y1, c) += w01() * g;
    t.at(x1, y1, c) += w11() * g;
  }
};

namespace detail {

inline double edge_fn(const Vec2& a, const Vec2& b, const Vec2& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

struct ScreenTriangle {
  Vec2 s[3];
  double inv_z[3];
  double inv_area;
  int xmin, xmax, ymin, ymax;
};

}  // namespace detail

/// Z-buffered rasterization at pixel centers. The nearest covering triangle
/// wins; on equal depth the lower triangle index wins. Triangles with any
/// vertex at or in front of the near plane are skipped, as are triangles of
/// zero projected area.
inline GBuffer rasterize(const Mesh& mesh, const Camera& cam, int workers = 1) {
  cam.validate();
  GBuffer gb(cam.width, cam.height);
  const auto& tris = mesh.triangles();
  if (tris.empty()) return gb;

  std::vector<Vec3> vc(mesh.vertex_count());
  for (std::size_t i = 0; i < vc.size(); ++i) vc[i] = cam.world_to_camera.apply(mesh.positions[i]);

  std::vector<detail::ScreenTriangle> screen(tris.size());
  std::vector<std::uint8_t> live(tris.size(), 0);
  for (std::size_t t = 0; t < tris.size(); ++t) {
    detail::ScreenTriangle& st = screen[t];
    bool ok = true;
    for (int k = 0; k < 3; ++k) {
      const Vec3& p = vc[tris[t][k]];
      if (!(p.z() > cam.near)) {
        ok = false;
        break;
      }
      st.s[k] = Vec2(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
      st.inv_z[k] = 1.0 / p.z();
    }
    if (!ok) continue;
    const double area = detail::edge_fn(st.s[0], st.s[1], st.s[2]);
    if (!(std::abs(area) > 1e-12)) continue;
    st.inv_area = 1.0 / area;
    const double minx = std::min({st.s[0].x(), st.s[1].x(), st.s[2].x()});
    const double maxx = std::max({st.s[0].x(), st.s[1].x(), st.s[2].x()});
    const double miny = std::min({st.s[0].y(), st.s[1].y(), st.s[2].y()});
    const double maxy = std::max({st.s[0].y(), st.s[1].y(), st.s[2].y()});
    st.xmin = std::max(0, static_cast<int>(std::ceil(minx - 0.5)));
    st.xmax = std::min(cam.width - 1, static_cast<int>(std::floor(maxx - 0.5)));
    st.ymin = std::max(0, static_cast<int>(std::ceil(miny - 0.5)));
    st.ymax = std::min(cam.height - 1, static_cast<int>(std::floor(maxy - 0.5)));
    if (st.xmin > st.xmax || st.ymin > st.ymax) continue;
    live[t] = 1;
  }

  parallel_chunks(static_cast<std::size_t>(cam.height), workers, [&](int, std::size_t row0, std::size_t row1) {
    for (std::size_t t = 0; t < tris.size(); ++t) {
      if (!live[t]) continue;
      const detail::ScreenTriangle& st = screen[t];
      const int y0 = std::max<int>(st.ymin, static_cast<int>(row0));
      const int y1 = std::min<int>(st.ymax, static_cast<int>(row1) - 1);
      for (int y = y0; y <= y1; ++y) {
        for (int x = st.xmin; x <= st.xmax; ++x) {
          const Vec2 p(x + 0.5, y + 0.5);
          const double l0 = detail::edge_fn(st.s[1], st.s[2], p) * st.inv_area;
          const double l1 = detail::edge_fn(st.s[2], st.s[0], p) * st.inv_area;
          const double l2 = detail::edge_fn(st.s[0], st.s[1], p) * st.inv_area;
          if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
          const double q0 = l0 * st.inv_z[0], q1 = l1 * st.inv_z[1], q2 = l2 * st.inv_z[2];
          const double sum = q0 + q1 + q2;
          const double depth = 1.0 / sum;
          const std::size_t pix = static_cast<std::size_t>(y) * cam.width + x;
          const auto tid = static_cast<std::int32_t>(t);
          if (depth < gb.depth[pix] || (depth == gb.depth[pix] && tid < gb.triangle[pix])) {
            gb.depth[pix] = depth;
            gb.triangle[pix] = tid;
            gb.barycentric[pix] = Vec3(q0, q1, q2) / sum;
          }
        }
      }
    }
    for (std::size_t y = row0; y < row1; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const std::size_t pix = y * cam.width + x;
        if (gb.triangle[pix] < 0) continue;
        const Triangle& tri = tris[gb.triangle[pix]];
        const Vec3& b = gb.barycentric[pix];
        const Vec2 uv = b[0] * mesh.vertex_uv(tri[0]) + b[1] * mesh.vertex_uv(tri[1]) + b[2] * mesh.vertex_uv(tri[2]);
        const BilinearTap ct(mesh.color.size, uv);
        gb.color[pix] = Vec3(ct.sample(mesh.color, 0), ct.sample(mesh.color, 1), ct.sample(mesh.color, 2));
        const BilinearTap ot(mesh.opacity.size, uv);
        gb.opacity[pix] = ot.sample(mesh.opacity, 0);
      }
    }
  });
  return gb;
}

struct MeshGradients {
  std::vector<Vec3> positions;
  TextureMap color;
  TextureMap opacity;

  MeshGradients() = default;
  explicit MeshGradients(const Mesh& mesh)
      : positions(mesh.vertex_count(), Vec3::Zero()), color(mesh.color.size, 3), opacity(mesh.opacity.size, 1) {}

  MeshGradients& operator+=(const MeshGradients& o) {
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] += o.positions[i];
    for (std::size_t i = 0; i < color.texels.size(); ++i) color.texels[i] += o.color.texels[i];
    for (std::size_t i = 0; i < opacity.texels.size(); ++i) opacity.texels[i] += o.opacity.texels[i];
    return *this;
  }
};

/// Reverse-mode of `rasterize` for a fixed visibility configuration.
/// Texture gradients scatter through the bilinear weights; vertex gradients
/// flow through the perspective-correct barycentrics and depth of the winning
/// triangle. Coverage changes (silhouettes) contribute nothing.
inline MeshGradients rasterize_backward(const Mesh& mesh, const Camera& cam, const GBuffer& gb,
                                        const std::vector<Vec3>& d_color, const std::vector<double>& d_opacity,
                                        const std::vector<double>& d_depth, int workers = 1) {
  const std::size_t n = cam.pixel_count();
  if (gb.width != cam.width || gb.height != cam.height || gb.pixel_count() != n) {
    throw Error(ErrorKind::Dimension, "rasterize_backward: gbuffer does not match camera");
  }
  if (d_color.size() != n || d_opacity.size() != n || d_depth.size() != n) {
    throw Error(ErrorKind::Dimension, "rasterize_backward: gradient images do not match gbuffer");
  }
  const auto& tris = mesh.triangles();
  const Mat3& w2c = cam.world_to_camera.rotation;

  std::vector<MeshGradients> partial;
  const int nw = std::max(1, std::min<int>(workers, cam.height));
  partial.reserve(nw);
  for (int w = 0; w < nw; ++w) partial.emplace_back(mesh);

  parallel_chunks(static_cast<std::size_t>(cam.height), nw, [&](int w, std::size_t row0, std::size_t row1) {
    MeshGradients& g = partial[w];
    for (std::size_t y = row0; y < row1; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const std::size_t pix = y * cam.width + x;
        if (gb.triangle[pix] < 0) continue;
        const Vec3& dc = d_color[pix];
        const double da = d_opacity[pix];
        const double dd = d_depth[pix];
        if (dc.isZero(0.0) && da == 0.0 && dd == 0.0) continue;

        const Triangle& tri = tris[gb.triangle[pix]];
        const Vec3& b = gb.barycentric[pix];
        const Vec2 uv0 = mesh.vertex_uv(tri[0]), uv1 = mesh.vertex_uv(tri[1]), uv2 = mesh.vertex_uv(tri[2]);
        const Vec2 uv = b[0] * uv0 + b[1] * uv1 + b[2] * uv2;

        const BilinearTap ct(mesh.color.size, uv);
        const BilinearTap ot(mesh.opacity.size, uv);
        Vec2 d_uv = Vec2::Zero();
        for (int c = 0; c < 3; ++c) {
          if (dc[c] == 0.0) continue;
          ct.scatter(g.color, c, dc[c]);
          d_uv += dc[c] * ct.sample_grad(mesh.color, c);
        }
        if (da != 0.0) {
          ot.scatter(g.opacity, 0, da);
          d_uv += da * ot.sample_grad(mesh.opacity, 0);
        }

        // The winning point solves b1 e1 + b2 e2 - t r = -V0 for (b1, b2, t);
        // differentiate that 3x3 system implicitly.
        const Vec3 v0 = cam.world_to_camera.apply(mesh.positions[tri[0]]);
        const Vec3 v1 = cam.world_to_camera.apply(mesh.positions[tri[1]]);
        const Vec3 v2 = cam.world_to_camera.apply(mesh.positions[tri[2]]);
        const Vec3 ray((x + 0.5 - cam.cx) / cam.fx, (y + 0.5 - cam.cy) / cam.fy, 1.0);
        Mat3 a;
        a.col(0) = v1 - v0;
        a.col(1) = v2 - v0;
        a.col(2) = -ray;
        const double db0 = d_uv.dot(uv0), db1 = d_uv.dot(uv1), db2 = d_uv.dot(uv2);
        const Vec3 gx(db1 - db0, db2 - db0, dd);
        const Vec3 lambda = a.transpose().partialPivLu().solve(gx);
        g.positions[tri[0]] -= b[0] * (w2c.transpose() * lambda);
        g.positions[tri[1]] -= b[1] * (w2c.transpose() * lambda);
        g.positions[tri[2]] -= b[2] * (w2c.transpose() * lambda);
      }
    }
  });

  MeshGradients total = std::move(partial[0]);
  for (int w = 1; w < nw; ++w) total += partial[w];
  return total;
}

}  // namespace hybridsplat
