#pragma once

// Joint first-order fitting of mesh vertices, textures, and Gaussian
// parameters against reference views, with the scale, translation, and
// Laplacian regularizers.

#include "hybridsplat/core.hpp"
#include "hybridsplat/image.hpp"
#include "hybridsplat/metrics.hpp"
#include "hybridsplat/renderer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace hybridsplat {

struct LossWeights {
  double photo = 1.0;
  double scale = 0.0;
  double translation = 0.0;
  double laplacian = 0.0;
  double scale_lo = 0.1;      // mm
  double scale_hi = 10.0;     // mm
  double scale_floor = 1e-7;
  double translation_max = 10.0;  // mm

  void validate() const {
    if (!(photo >= 0.0 && scale >= 0.0 && translation >= 0.0 && laplacian >= 0.0)) {
      throw Error(ErrorKind::InvalidArgument, "loss weights must be non-negative");
    }
    if (!(scale_lo < scale_hi)) throw Error(ErrorKind::InvalidArgument, "scale bounds must satisfy lo < hi");
  }
};

// ---------------------------------------------------------------------------
// Photometric term

inline double photometric_loss(const Image& rendered, const Image& target, const PixelMask& mask = {}) {
  require_same_shape(rendered, target, "photometric_loss");
  if (!mask.empty() && mask.flags.size() != rendered.pixel_count()) {
    throw Error(ErrorKind::Dimension, "photometric_loss: mask size differs from the images");
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < rendered.pixel_count(); ++p) {
    if (!mask.selected(p)) continue;
    for (int c = 0; c < rendered.channels; ++c) {
      const double d = rendered.data[p * rendered.channels + c] - target.data[p * target.channels + c];
      sum += d * d;
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

/// d(scale * photometric_loss)/d(rendered).
inline Image photometric_loss_grad(const Image& rendered, const Image& target, const PixelMask& mask, double scale) {
  require_same_shape(rendered, target, "photometric_loss_grad");
  Image g(rendered.width, rendered.height, rendered.channels);
  std::size_t n = 0;
  for (std::size_t p = 0; p < rendered.pixel_count(); ++p) n += mask.selected(p) ? rendered.channels : 0;
  if (n == 0) return g;
  const double k = 2.0 * scale / static_cast<double>(n);
  for (std::size_t p = 0; p < rendered.pixel_count(); ++p) {
    if (!mask.selected(p)) continue;
    for (int c = 0; c < rendered.channels; ++c) {
      const std::size_t i = p * rendered.channels + c;
      g.data[i] = k * (rendered.data[i] - target.data[i]);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Regularizers

/// Per-component penalty: 1/max(s, floor) below the range, (s - hi)^2 above.
/// Discontinuous at s = lo by construction.
inline double scale_penalty(double s, const LossWeights& w = {}) {
  if (s < w.scale_lo) return 1.0 / std::max(s, w.scale_floor);
  if (s > w.scale_hi) return (s - w.scale_hi) * (s - w.scale_hi);
  return 0.0;
}

inline double scale_penalty_grad(double s, const LossWeights& w = {}) {
  if (s < w.scale_lo) return s > w.scale_floor ? -1.0 / (s * s) : 0.0;
  if (s > w.scale_hi) return 2.0 * (s - w.scale_hi);
  return 0.0;
}

/// Mean penalty over every scale component of every Gaussian.
inline double scale_loss(const std::vector<Gaussian>& gaussians, const LossWeights& w = {}) {
  if (gaussians.empty()) return 0.0;
  double sum = 0.0;
  for (const Gaussian& g : gaussians) {
    const Vec3 s = g.scale();
    for (int i = 0; i < 3; ++i) sum += scale_penalty(s[i], w);
  }
  return sum / (3.0 * gaussians.size());
}

inline void scale_loss_backward(const std::vector<Gaussian>& gaussians, const LossWeights& w, double weight,
                                std::vector<GaussianGrad>& out) {
  if (gaussians.empty() || weight == 0.0) return;
  const double k = weight / (3.0 * gaussians.size());
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    const Vec3 s = gaussians[i].scale();
    for (int j = 0; j < 3; ++j) out[i].log_scale[j] += k * scale_penalty_grad(s[j], w) * s[j];
  }
}

/// Mean hinge max(0, |t| - t_max) over Gaussians.
inline double translation_loss(const std::vector<Gaussian>& gaussians, const LossWeights& w = {}) {
  if (gaussians.empty()) return 0.0;
  double sum = 0.0;
  for (const Gaussian& g : gaussians) sum += std::max(0.0, g.offset.norm() - w.translation_max);
  return sum / gaussians.size();
}

inline void translation_loss_backward(const std::vector<Gaussian>& gaussians, const LossWeights& w, double weight,
                                      std::vector<GaussianGrad>& out) {
  if (gaussians.empty() || weight == 0.0) return;
  const double k = weight / gaussians.size();
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    const double n = gaussians[i].offset.norm();
    if (n > w.translation_max) out[i].offset += k * gaussians[i].offset / n;
  }
}

/// Uniform-weight umbrella Laplacian over the 1-ring of each vertex.
class LaplacianOperator {
 public:
  LaplacianOperator() = default;
  explicit LaplacianOperator(const Mesh& mesh) {
    std::vector<std::set<std::uint32_t>> ring(mesh.vertex_count());
    for (const Triangle& t : mesh.triangles()) {
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          if (a != b && t[a] != t[b]) ring[t[a]].insert(t[b]);
        }
      }
    }
    offsets_.assign(ring.size() + 1, 0);
    for (std::size_t v = 0; v < ring.size(); ++v) {
      offsets_[v + 1] = offsets_[v] + static_cast<std::uint32_t>(ring[v].size());
      neighbors_.insert(neighbors_.end(), ring[v].begin(), ring[v].end());
    }
  }

  std::size_t vertex_count() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }

  /// x_v minus the mean of its neighbors; zero for an isolated vertex.
  Vec3 residual(const std::vector<Vec3>& x, std::size_t v) const {
    const std::uint32_t b = offsets_[v], e = offsets_[v + 1];
    if (b == e) return Vec3::Zero();
    Vec3 mean = Vec3::Zero();
    for (std::uint32_t i = b; i < e; ++i) mean += x[neighbors_[i]];
    return x[v] - mean / static_cast<double>(e - b);
  }

  double loss(const std::vector<Vec3>& x) const {
    if (x.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t v = 0; v < x.size(); ++v) sum += residual(x, v).squaredNorm();
    return sum / static_cast<double>(x.size());
  }

  void backward(const std::vector<Vec3>& x, double weight, std::vector<Vec3>& grad) const {
    if (x.empty() || weight == 0.0) return;
    const double k = 2.0 * weight / static_cast<double>(x.size());
    for (std::size_t v = 0; v < x.size(); ++v) {
      const std::uint32_t b = offsets_[v], e = offsets_[v + 1];
      if (b == e) continue;
      const Vec3 r = k * residual(x, v);
      grad[v] += r;
      const Vec3 share = r / static_cast<double>(e - b);
      for (std::uint32_t i = b; i < e; ++i) grad[neighbors_[i]] -= share;
    }
  }

 private:
  std::vector<std::uint32_t> offsets_;
  std::vector<std::uint32_t> neighbors_;
};

inline double laplacian_loss(const Mesh& mesh) { return LaplacianOperator(mesh).loss(mesh.positions); }

// ---------------------------------------------------------------------------
// Parameter classes, flattening

enum class ParamClass {
  Vertices,
  TextureColor,
  TextureOpacity,
  Offsets,
  Rotations,
  LogScales,
  Opacities,
  Colors,
  Background,
};

inline constexpr std::array<ParamClass, 9> kAllParamClasses = {
    ParamClass::Vertices,  ParamClass::TextureColor, ParamClass::TextureOpacity,
    ParamClass::Offsets,   ParamClass::Rotations,    ParamClass::LogScales,
    ParamClass::Opacities, ParamClass::Colors,       ParamClass::Background,
};

inline const char* to_string(ParamClass c) {
  switch (c) {
    case ParamClass::Vertices: return "vertices";
    case ParamClass::TextureColor: return "texture_color";
    case ParamClass::TextureOpacity: return "texture_opacity";
    case ParamClass::Offsets: return "offsets";
    case ParamClass::Rotations: return "rotations";
    case ParamClass::LogScales: return "log_scales";
    case ParamClass::Opacities: return "opacities";
    case ParamClass::Colors: return "colors";
    case ParamClass::Background: return "background";
  }
  return "?";
}

namespace detail {

// Visits every scalar of one parameter class (of a scene or its gradients)
// in a fixed order.
template <class SceneLike, class Fn>
void for_each_param(SceneLike& s, ParamClass c, Fn&& fn) {
  auto vec = [&](auto& v) {
    for (int i = 0; i < v.size(); ++i) fn(v[i]);
  };
  switch (c) {
    case ParamClass::Vertices:
      for (auto& p : s.mesh_positions()) vec(p);
      break;
    case ParamClass::TextureColor:
      for (auto& t : s.mesh_color()) fn(t);
      break;
    case ParamClass::TextureOpacity:
      for (auto& t : s.mesh_opacity()) fn(t);
      break;
    case ParamClass::Background:
      vec(s.background());
      break;
    default:
      for (std::size_t k = 0; k < s.gaussian_count(); ++k) {
        auto& g = s.gaussian(k);
        switch (c) {
          case ParamClass::Offsets: vec(g.offset); break;
          case ParamClass::Rotations: vec(g.rotation); break;
          case ParamClass::LogScales: vec(g.log_scale); break;
          case ParamClass::Opacities: fn(g.opacity_logit); break;
          case ParamClass::Colors: vec(g.color); break;
          default: break;
        }
      }
  }
}

// Scene and SceneGradients share member names, so one view serves both.
template <class S>
struct SceneParams {
  S& s;
  auto& mesh_positions() { return s.mesh.positions; }
  auto& mesh_color() { return s.mesh.color.texels; }
  auto& mesh_opacity() { return s.mesh.opacity.texels; }
  auto& background() { return s.background; }
  std::size_t gaussian_count() { return s.gaussians.size(); }
  auto& gaussian(std::size_t k) { return s.gaussians[k]; }
};

}  // namespace detail

inline std::vector<double> gather_params(const Scene& scene, ParamClass c) {
  std::vector<double> out;
  detail::SceneParams<const Scene> view{scene};
  detail::for_each_param(view, c, [&](const double& v) { out.push_back(v); });
  return out;
}

inline void scatter_params(Scene& scene, ParamClass c, const std::vector<double>& values) {
  std::size_t i = 0;
  detail::SceneParams<Scene> view{scene};
  detail::for_each_param(view, c, [&](double& v) {
    if (i >= values.size()) throw Error(ErrorKind::Dimension, "scatter_params: too few values");
    v = values[i++];
  });
  if (i != values.size()) throw Error(ErrorKind::Dimension, "scatter_params: too many values");
}

inline std::vector<double> gather_grads(const SceneGradients& grads, ParamClass c) {
  std::vector<double> out;
  detail::SceneParams<const SceneGradients> view{grads};
  detail::for_each_param(view, c, [&](const double& v) { out.push_back(v); });
  return out;
}

// ---------------------------------------------------------------------------
// Total loss

struct View {
  Camera camera;
  Image target;
  PixelMask mask;
};

struct LossReport {
  double total = 0.0;
  double photo = 0.0;   // mean over views of the per-view MSE, [0, 1] scale
  double scale = 0.0;
  double translation = 0.0;
  double laplacian = 0.0;
  double psnr = kPsnrCap;  // from the mean photometric MSE, 0-255 scale
};

struct LossEvaluation {
  LossReport report;
  SceneGradients grads;
};

/// Weighted sum of the photometric term (averaged over `views`) and the
/// regularizers, with gradients for every parameter class.
inline LossEvaluation total_loss(const Scene& scene, const std::vector<View>& views, const LossWeights& weights,
                                 const RenderSettings& settings = {}, RenderMode mode = RenderMode::Hybrid,
                                 const LaplacianOperator* laplacian = nullptr,
                                 const std::vector<std::size_t>* subset = nullptr) {
  weights.validate();
  std::vector<std::size_t> all;
  if (!subset) {
    all.resize(views.size());
    std::iota(all.begin(), all.end(), 0);
    subset = &all;
  }
  if (subset->empty()) throw Error(ErrorKind::InvalidArgument, "total_loss needs at least one view");

  LossEvaluation ev;
  ev.grads = SceneGradients(scene);
  LossReport& r = ev.report;

  double photo_sum = 0.0;
  for (std::size_t vi : *subset) {
    const View& v = views.at(vi);
    const RenderOutput out = render(scene, v.camera, settings, mode);
    photo_sum += photometric_loss(out.image(), v.target, v.mask);
    if (weights.photo == 0.0) continue;
    const Image d_image =
        photometric_loss_grad(out.image(), v.target, v.mask, weights.photo / static_cast<double>(subset->size()));
    ev.grads += render_backward(scene, v.camera, out, d_image, settings);
  }
  r.photo = photo_sum / static_cast<double>(subset->size());
  r.psnr = psnr_from_mse_255(r.photo * 255.0 * 255.0);

  r.scale = scale_loss(scene.gaussians, weights);
  scale_loss_backward(scene.gaussians, weights, weights.scale, ev.grads.gaussians);
  r.translation = translation_loss(scene.gaussians, weights);
  translation_loss_backward(scene.gaussians, weights, weights.translation, ev.grads.gaussians);

  LaplacianOperator local;
  if (!laplacian) {
    local = LaplacianOperator(scene.mesh);
    laplacian = &local;
  }
  r.laplacian = laplacian->loss(scene.mesh.positions);
  laplacian->backward(scene.mesh.positions, weights.laplacian, ev.grads.mesh.positions);

  r.total = weights.photo * r.photo + weights.scale * r.scale + weights.translation * r.translation +
            weights.laplacian * r.laplacian;
  return ev;
}

// ---------------------------------------------------------------------------
// Optimizer

struct FitConfig {
  int iterations = 1000;
  // Learning rate per ParamClass (indexed by its enum value); 0 freezes a class.
  std::array<double, 9> learning_rate{};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  int log_every = 10;
  int views_per_iteration = 0;  // 0 = every view every iteration
  RenderMode mode = RenderMode::Hybrid;
  RenderSettings render;
  int checkpoint_every = 0;
  std::function<void(int, const Scene&)> on_checkpoint;

  double& lr(ParamClass c) { return learning_rate[static_cast<std::size_t>(c)]; }
  double lr(ParamClass c) const { return learning_rate[static_cast<std::size_t>(c)]; }

  void validate() const {
    if (iterations < 0) throw Error(ErrorKind::InvalidArgument, "iterations must be >= 0");
    for (double l : learning_rate) {
      if (!(l >= 0.0) || !std::isfinite(l)) throw Error(ErrorKind::InvalidArgument, "learning rates must be >= 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0)) {
      throw Error(ErrorKind::InvalidArgument, "invalid optimizer moment coefficients");
    }
  }

  /// 3DGS-style rates; positional rates scale with the mesh's bounding radius.
  static FitConfig defaults(const Scene& scene) {
    FitConfig c;
    double extent = 1.0;
    if (!scene.mesh.positions.empty()) {
      Vec3 lo = scene.mesh.positions.front(), hi = lo;
      for (const Vec3& p : scene.mesh.positions) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
      extent = std::max(1.0, 0.5 * (hi - lo).norm());
    }
    c.lr(ParamClass::Vertices) = 1.6e-4 * extent;
    c.lr(ParamClass::Offsets) = 1.6e-4 * extent;
    c.lr(ParamClass::Colors) = 2.5e-3;
    c.lr(ParamClass::Opacities) = 5e-2;
    c.lr(ParamClass::LogScales) = 5e-3;
    c.lr(ParamClass::Rotations) = 1e-3;
    c.lr(ParamClass::TextureColor) = 1e-2;
    c.lr(ParamClass::TextureOpacity) = 1e-2;
    c.lr(ParamClass::Background) = 0.0;
    return c;
  }
};

/// Adaptive-moment state for every parameter class of one scene.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const FitConfig& cfg) : cfg_(cfg) {}

  void step(Scene& scene, const SceneGradients& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (ParamClass c : kAllParamClasses) {
      const double lr = cfg_.lr(c);
      const auto idx = static_cast<std::size_t>(c);
      const std::vector<double> g = gather_grads(grads, c);
      std::vector<double> x = gather_params(scene, c);
      auto& m = m_[idx];
      auto& v = v_[idx];
      if (m.size() != x.size()) {
        m.assign(x.size(), 0.0);
        v.assign(x.size(), 0.0);
      }
      if (lr == 0.0) continue;
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        x[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.epsilon);
      }
      scatter_params(scene, c, x);
    }
    project_constraints(scene);
  }

  int steps() const { return t_; }

  /// Unit quaternions, colors and textures in [0, 1]. Only touches classes
  /// that can move, so a zero-rate step leaves every bit unchanged.
  void project_constraints(Scene& scene) const {
    if (cfg_.lr(ParamClass::Rotations) != 0.0) {
      for (Gaussian& g : scene.gaussians) g.rotation.normalize();
    }
    if (cfg_.lr(ParamClass::Colors) != 0.0) {
      for (Gaussian& g : scene.gaussians) g.color = g.color.cwiseMax(0.0).cwiseMin(1.0);
    }
    if (cfg_.lr(ParamClass::TextureColor) != 0.0 || cfg_.lr(ParamClass::TextureOpacity) != 0.0) {
      scene.mesh.clamp_textures();
    }
    if (cfg_.lr(ParamClass::Background) != 0.0) {
      scene.background = scene.background.cwiseMax(0.0).cwiseMin(1.0);
    }
  }

 private:
  FitConfig cfg_;
  int t_ = 0;
  std::array<std::vector<double>, 9> m_;
  std::array<std::vector<double>, 9> v_;
};

struct TraceRow {
  int iteration = 0;
  LossReport loss;
};

struct FitResult {
  Scene scene;
  std::vector<TraceRow> trace;
};

/// Thrown when the loss turns non-finite; carries the last finite scene.
class FitAborted : public Error {
 public:
  FitAborted(int iteration, Scene snapshot)
      : Error(ErrorKind::NonFinite, "fit: loss became non-finite at iteration " + std::to_string(iteration)),
        iteration_(iteration), snapshot_(std::move(snapshot)) {}
  int iteration() const { return iteration_; }
  const Scene& snapshot() const { return snapshot_; }

 private:
  int iteration_;
  Scene snapshot_;
};

inline FitResult fit(Scene scene, const std::vector<View>& views, const FitConfig& config, const LossWeights& weights) {
  config.validate();
  weights.validate();
  scene.validate();
  if (views.empty()) throw Error(ErrorKind::InvalidArgument, "fit needs at least one view");

  FitResult result;
  AdamOptimizer adam(config);
  const LaplacianOperator lap(scene.mesh);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(views.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t per_iter = config.views_per_iteration <= 0
                                   ? views.size()
                                   : std::min<std::size_t>(views.size(), config.views_per_iteration);

  std::vector<std::size_t> subset;
  for (int it = 1; it <= config.iterations; ++it) {
    subset.clear();
    if (per_iter == views.size()) {
      subset = order;
    } else {
      while (subset.size() < per_iter) {
        if (cursor == order.size()) {
          // Fisher-Yates with an explicit modulus keeps the sequence identical across standard libraries.
          for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
          cursor = 0;
        }
        subset.push_back(order[cursor++]);
      }
    }
    LossEvaluation ev = total_loss(scene, views, weights, config.render, config.mode, &lap, &subset);
    if (!std::isfinite(ev.report.total)) throw FitAborted(it, scene);
    if (config.log_every > 0 && (it == 1 || it % config.log_every == 0 || it == config.iterations)) {
      result.trace.push_back({it, ev.report});
    }
    adam.step(scene, ev.grads);
    if (config.checkpoint_every > 0 && config.on_checkpoint && it % config.checkpoint_every == 0) {
      config.on_checkpoint(it, scene);
    }
  }
  result.scene = std::move(scene);
  return result;
}

}  // namespace hybridsplat
