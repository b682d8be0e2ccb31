#pragma once

// Per-pixel hybrid compositing. Gaussians in front of the mesh sample are
// accumulated first, then the mesh sample attenuated by their transmittance,
// then the Gaussians at or behind the mesh depth attenuated by both:
//
//   C_front  = sum_{k<m}  c_k a_k prod_{j<k}(1 - a_j)
//   C_mesh   = C' a' prod_{j<m}(1 - a_j)
//   C_behind = (1 - a') sum_{k>=m} c_k a_k prod_{j<k}(1 - a_j)
//   C_p      = C_front + C_mesh + C_behind + T_final * background
//
// where m is the first Gaussian with d_k >= d' (a depth tie goes behind).
// Equivalently, the mesh sample is one fragment inserted into the depth-sorted
// stream, and the sum is ordinary front-to-back "over" compositing. That is
// how both kernels below walk the stream.

#include "hybridsplat/core.hpp"
#include "hybridsplat/image.hpp"
#include "hybridsplat/mesh_raster.hpp"
#include "hybridsplat/parallel.hpp"
#include "hybridsplat/splat.hpp"

#include <algorithm>
#include <cstdint>
#include <vector>

namespace hybridsplat {

struct Fragment {
  double alpha = 0.0;
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  std::uint32_t source = 0;
};

struct MeshSample {
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
  double depth = kFarDepth;
};

struct PixelFragmentStream {
  std::vector<Fragment> gaussians;  // ascending (depth, source)
  MeshSample mesh;
  Vec3 background = Vec3::Zero();

  void check_sorted() const {
    for (std::size_t i = 1; i < gaussians.size(); ++i) {
      const Fragment& a = gaussians[i - 1];
      const Fragment& b = gaussians[i];
      if (b.depth < a.depth || (b.depth == a.depth && b.source < a.source)) {
        throw Error(ErrorKind::Contract, "fragment stream is not sorted by (depth, source)");
      }
    }
  }
};

/// What the backward walk needs from the forward pass, per pixel.
struct CompositeTrace {
  double t_final = 1.0;
  double t_mesh = 1.0;          // transmittance just before the mesh sample
  std::uint32_t processed = 0;  // stream entries visited before termination
  std::uint32_t split = 0;      // stream position the mesh sample was inserted at
  bool mesh_composited = false;
};

struct CompositeResult {
  Vec3 color = Vec3::Zero();
  double transmittance = 1.0;
  std::size_t split = 0;  // m: first Gaussian with d_k >= d'
  Vec3 front = Vec3::Zero();
  Vec3 mesh = Vec3::Zero();
  Vec3 behind = Vec3::Zero();
  CompositeTrace trace;
  std::size_t fragment_count = 0;
};

namespace detail {

struct NoParts {
  void add(bool, bool, const Vec3&) {}
};

struct SplitParts {
  Vec3 front = Vec3::Zero(), mesh = Vec3::Zero(), behind = Vec3::Zero();
  void add(bool is_mesh, bool past_mesh, const Vec3& c) {
    if (is_mesh) {
      mesh += c;
    } else if (past_mesh) {
      behind += c;
    } else {
      front += c;
    }
  }
};

/// Front-to-back walk over `count` depth-sorted entries with the optional
/// mesh sample inserted before the first entry whose depth is >= its depth.
/// `depth_of(i)` must be cheap; `fragment(i, alpha, color)` evaluates the
/// entry (alpha 0 means skipped).
template <class DepthFn, class FragmentFn, class Parts>
Vec3 composite_walk(std::size_t count, DepthFn&& depth_of, FragmentFn&& fragment, const MeshSample* mesh,
                    const Vec3& background, double early_stop, CompositeTrace& trace, Parts& parts) {
  double t = 1.0;
  Vec3 c = Vec3::Zero();
  bool done = false;
  trace = CompositeTrace{};
  trace.processed = static_cast<std::uint32_t>(count);
  trace.split = static_cast<std::uint32_t>(count);

  auto insert_mesh = [&](std::size_t at) {
    trace.split = static_cast<std::uint32_t>(at);
    trace.t_mesh = t;
    trace.mesh_composited = true;
    const Vec3 contrib = (t * mesh->opacity) * mesh->color;
    c += contrib;
    parts.add(true, false, contrib);
    t *= 1.0 - mesh->opacity;
  };

  double alpha = 0.0;
  Vec3 color;
  for (std::size_t i = 0; i < count; ++i) {
    if (mesh && !trace.mesh_composited && !(depth_of(i) < mesh->depth)) {
      insert_mesh(i);
      if (t < early_stop) {
        trace.processed = static_cast<std::uint32_t>(i);
        done = true;
        break;
      }
    }
    fragment(i, alpha, color);
    if (alpha == 0.0) continue;
    const Vec3 contrib = (t * alpha) * color;
    c += contrib;
    parts.add(false, trace.mesh_composited, contrib);
    t *= 1.0 - alpha;
    if (t < early_stop) {
      trace.processed = static_cast<std::uint32_t>(i + 1);
      done = true;
      break;
    }
  }
  if (mesh && !done && !trace.mesh_composited) insert_mesh(count);
  trace.t_final = t;
  return c + t * background;
}

/// Reverse walk of composite_walk. Transmittance is recovered by dividing
/// out each fragment's (1 - alpha), restarting from the stored value at the
/// mesh sample so an opaque mesh never needs a division by zero.
template <class FragmentFn, class FragmentGradFn>
void composite_walk_backward(const CompositeTrace& trace, FragmentFn&& fragment, const MeshSample* mesh,
                             const Vec3& background, const Vec3& d_out, FragmentGradFn&& on_fragment,
                             Vec3& d_mesh_color, double& d_mesh_opacity, Vec3& d_background) {
  double t = trace.t_final;
  Vec3 behind = background;  // color seen through everything after the current entry
  d_background += t * d_out;
  std::size_t pos = trace.processed;
  double alpha = 0.0;
  Vec3 color;
  for (;;) {
    if (mesh && trace.mesh_composited && trace.split == pos) {
      t = trace.t_mesh;
      d_mesh_color += (mesh->opacity * t) * d_out;
      d_mesh_opacity += t * (mesh->color - behind).dot(d_out);
      behind = mesh->opacity * mesh->color + (1.0 - mesh->opacity) * behind;
    }
    if (pos == 0) break;
    --pos;
    fragment(pos, alpha, color);
    if (alpha == 0.0) continue;
    t /= 1.0 - alpha;
    on_fragment(pos, t * (color - behind).dot(d_out), (alpha * t) * d_out);
    behind = alpha * color + (1.0 - alpha) * behind;
  }
}

}  // namespace detail

/// Composites one pixel's stream; `early_stop` is the transmittance below
/// which the walk terminates (0 disables).
inline CompositeResult composite_pixel(const PixelFragmentStream& stream, double early_stop = 1e-4) {
  stream.check_sorted();
  const auto& frags = stream.gaussians;
  CompositeResult r;
  r.fragment_count = frags.size();
  detail::SplitParts parts;
  r.color = detail::composite_walk(
      frags.size(), [&](std::size_t i) { return frags[i].depth; },
      [&](std::size_t i, double& a, Vec3& c) {
        a = frags[i].alpha;
        c = frags[i].color;
      },
      &stream.mesh, stream.background, early_stop, r.trace, parts);
  r.transmittance = r.trace.t_final;
  r.front = parts.front;
  r.mesh = parts.mesh;
  r.behind = parts.behind;
  r.split = static_cast<std::size_t>(
      std::find_if(frags.begin(), frags.end(), [&](const Fragment& f) { return !(f.depth < stream.mesh.depth); }) -
      frags.begin());
  return r;
}

/// The same walk with no mesh fragment at all: plain 3DGS compositing.
inline CompositeResult composite_gaussians_only(const PixelFragmentStream& stream, double early_stop = 1e-4) {
  stream.check_sorted();
  const auto& frags = stream.gaussians;
  CompositeResult r;
  r.fragment_count = frags.size();
  detail::NoParts parts;
  r.color = detail::composite_walk(
      frags.size(), [&](std::size_t i) { return frags[i].depth; },
      [&](std::size_t i, double& a, Vec3& c) {
        a = frags[i].alpha;
        c = frags[i].color;
      },
      nullptr, stream.background, early_stop, r.trace, parts);
  r.transmittance = r.trace.t_final;
  r.split = frags.size();
  return r;
}

struct StreamGradients {
  std::vector<double> alpha;
  std::vector<Vec3> color;
  Vec3 mesh_color = Vec3::Zero();
  double mesh_opacity = 0.0;
  Vec3 background = Vec3::Zero();
};

/// Exact reverse-mode of composite_pixel. Depths get no gradient: the split
/// index is piecewise constant in them.
inline StreamGradients composite_backward(const PixelFragmentStream& stream, const CompositeResult& forward,
                                          const Vec3& d_color) {
  const auto& frags = stream.gaussians;
  if (forward.fragment_count != frags.size() || forward.trace.processed > frags.size()) {
    throw Error(ErrorKind::State, "composite_backward: forward state does not belong to this stream");
  }
  StreamGradients g;
  g.alpha.assign(frags.size(), 0.0);
  g.color.assign(frags.size(), Vec3::Zero());
  detail::composite_walk_backward(
      forward.trace,
      [&](std::size_t i, double& a, Vec3& c) {
        a = frags[i].alpha;
        c = frags[i].color;
      },
      &stream.mesh, stream.background, d_color,
      [&](std::size_t i, double da, const Vec3& dc) {
        g.alpha[i] += da;
        g.color[i] += dc;
      },
      g.mesh_color, g.mesh_opacity, g.background);
  return g;
}

// ---------------------------------------------------------------------------
// Image level

/// Forward products of composite_image, retained for the backward pass.
struct CompositeImage {
  Image image;
  std::vector<CompositeTrace> traces;  // per pixel; split/processed index the tile list
  bool with_mesh = false;
};

/// Composites every pixel from its tile's Gaussian list and its GBuffer
/// sample. A null `gbuf` composites Gaussians only (no mesh fragment).
inline CompositeImage composite_image(const GBuffer* gbuf, const TileBins& bins,
                                      const std::vector<ProjectedGaussian>& projected, const Vec3& background,
                                      int width, int height, const RenderSettings& settings) {
  if (gbuf && (gbuf->width != width || gbuf->height != height)) {
    throw Error(ErrorKind::Dimension, "composite_image: gbuffer size does not match the image");
  }
  if (bins.tiles_x != (width + bins.tile_size - 1) / bins.tile_size ||
      bins.tiles_y != (height + bins.tile_size - 1) / bins.tile_size) {
    throw Error(ErrorKind::Dimension, "composite_image: tile grid does not match the image");
  }
  CompositeImage out;
  out.image = Image(width, height, 3);
  out.traces.resize(static_cast<std::size_t>(width) * height);
  out.with_mesh = gbuf != nullptr;

  parallel_chunks(bins.tile_count(), settings.workers, [&](int, std::size_t t0, std::size_t t1) {
    detail::NoParts parts;
    for (std::size_t tile = t0; tile < t1; ++tile) {
      const int tx = static_cast<int>(tile % bins.tiles_x), ty = static_cast<int>(tile / bins.tiles_x);
      const std::uint32_t* list = bins.entries.data() + bins.begin(tile);
      const std::size_t count = bins.end(tile) - bins.begin(tile);
      const int x_end = std::min(width, (tx + 1) * bins.tile_size);
      const int y_end = std::min(height, (ty + 1) * bins.tile_size);
      for (int y = ty * bins.tile_size; y < y_end; ++y) {
        for (int x = tx * bins.tile_size; x < x_end; ++x) {
          const std::size_t pix = static_cast<std::size_t>(y) * width + x;
          const Vec2 center(x + 0.5, y + 0.5);
          MeshSample ms;
          if (gbuf) ms = MeshSample{gbuf->color[pix], gbuf->opacity[pix], gbuf->depth[pix]};
          const Vec3 c = detail::composite_walk(
              count, [&](std::size_t i) { return projected[list[i]].depth; },
              [&](std::size_t i, double& a, Vec3& col) {
                const ProjectedGaussian& pg = projected[list[i]];
                a = alpha_at(pg, center, settings);
                col = pg.color;
              },
              gbuf ? &ms : nullptr, background, settings.early_stop, out.traces[pix], parts);
          out.image.set_rgb(pix, c);
        }
      }
    }
  });
  return out;
}

struct CompositeGradients {
  std::vector<ProjectedGrad> projected;  // indexed like the projected list
  std::vector<Vec3> mesh_color;          // per pixel
  std::vector<double> mesh_opacity;      // per pixel
  std::vector<double> mesh_depth;        // per pixel, identically zero
  Vec3 background = Vec3::Zero();
};

inline CompositeGradients composite_image_backward(const GBuffer* gbuf, const TileBins& bins,
                                                   const std::vector<ProjectedGaussian>& projected,
                                                   const Vec3& background, const CompositeImage& forward,
                                                   const Image& d_image, const RenderSettings& settings) {
  const int width = forward.image.width, height = forward.image.height;
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (forward.traces.size() != n || forward.with_mesh != (gbuf != nullptr)) {
    throw Error(ErrorKind::State, "composite_image_backward: forward state missing or mismatched");
  }
  if (d_image.width != width || d_image.height != height || d_image.channels != 3) {
    throw Error(ErrorKind::Dimension, "composite_image_backward: gradient image has the wrong shape");
  }
  CompositeGradients g;
  g.mesh_color.assign(n, Vec3::Zero());
  g.mesh_opacity.assign(n, 0.0);
  g.mesh_depth.assign(n, 0.0);

  const int nw = std::max(1, std::min<int>(settings.workers, static_cast<int>(std::max<std::size_t>(1, bins.tile_count()))));
  std::vector<std::vector<ProjectedGrad>> partial(nw, std::vector<ProjectedGrad>(projected.size()));
  std::vector<Vec3> partial_bg(nw, Vec3::Zero());

  parallel_chunks(bins.tile_count(), nw, [&](int w, std::size_t t0, std::size_t t1) {
    auto& acc = partial[w];
    for (std::size_t tile = t0; tile < t1; ++tile) {
      const int tx = static_cast<int>(tile % bins.tiles_x), ty = static_cast<int>(tile / bins.tiles_x);
      const std::uint32_t* list = bins.entries.data() + bins.begin(tile);
      const int x_end = std::min(width, (tx + 1) * bins.tile_size);
      const int y_end = std::min(height, (ty + 1) * bins.tile_size);
      for (int y = ty * bins.tile_size; y < y_end; ++y) {
        for (int x = tx * bins.tile_size; x < x_end; ++x) {
          const std::size_t pix = static_cast<std::size_t>(y) * width + x;
          const Vec3 d_out = d_image.rgb(pix);
          if (d_out.isZero(0.0)) continue;
          const Vec2 center(x + 0.5, y + 0.5);
          MeshSample ms;
          if (gbuf) ms = MeshSample{gbuf->color[pix], gbuf->opacity[pix], gbuf->depth[pix]};
          detail::composite_walk_backward(
              forward.traces[pix],
              [&](std::size_t i, double& a, Vec3& col) {
                const ProjectedGaussian& pg = projected[list[i]];
                a = alpha_at(pg, center, settings);
                col = pg.color;
              },
              gbuf ? &ms : nullptr, background, d_out,
              [&](std::size_t i, double d_alpha, const Vec3& d_col) {
                const std::uint32_t k = list[i];
                acc[k].color += d_col;
                alpha_backward(projected[k], center, d_alpha, settings, acc[k]);
              },
              g.mesh_color[pix], g.mesh_opacity[pix], partial_bg[w]);
        }
      }
    }
  });

  g.projected = std::move(partial[0]);
  g.background = partial_bg[0];
  for (int w = 1; w < nw; ++w) {
    for (std::size_t k = 0; k < projected.size(); ++k) g.projected[k] += partial[w][k];
    g.background += partial_bg[w];
  }
  return g;
}

}  // namespace hybridsplat
