#include "hybridsplat/compositor.hpp"
#include "hybridsplat/fit.hpp"
#include "hybridsplat/oracle.hpp"
#include "hybridsplat/renderer.hpp"
#include "hybridsplat/scenes.hpp"
#include "hybridsplat/verify.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace hybridsplat;

namespace {

Fragment frag(double alpha, const Vec3& color, double depth, std::uint32_t source) {
  return Fragment{alpha, color, depth, source};
}

using verify::random_stream;

}  // namespace

TEST(CompositePixel, OpaqueMeshOnly) {
  PixelFragmentStream s;
  s.mesh = MeshSample{Vec3(1, 0, 0), 1.0, 5.0};
  const CompositeResult r = composite_pixel(s);
  EXPECT_EQ(r.color, Vec3(1, 0, 0));
  EXPECT_EQ(r.transmittance, 0.0);
  EXPECT_EQ(r.split, 0u);
}

TEST(CompositePixel, GaussianInFrontOfMesh) {
  PixelFragmentStream s;
  s.gaussians = {frag(0.5, Vec3(0, 0, 1), 1.0, 0)};
  s.mesh = MeshSample{Vec3(1, 0, 0), 1.0, 2.0};
  const CompositeResult r = composite_pixel(s);
  EXPECT_EQ(r.front, Vec3(0, 0, 0.5));
  EXPECT_EQ(r.mesh, Vec3(0.5, 0, 0));
  EXPECT_EQ(r.behind, Vec3::Zero());
  EXPECT_EQ(r.color, Vec3(0.5, 0, 0.5));
  EXPECT_EQ(r.split, 1u);
}

TEST(CompositePixel, GaussianBehindOpaqueMeshIsOccluded) {
  PixelFragmentStream s;
  s.gaussians = {frag(0.9, Vec3(1, 1, 1), 3.0, 0)};
  s.mesh = MeshSample{Vec3(0.2, 0.3, 0.4), 1.0, 2.0};
  s.background = Vec3(0.7, 0.7, 0.7);
  EXPECT_EQ(composite_pixel(s).color, Vec3(0.2, 0.3, 0.4));
}

TEST(CompositePixel, TransparentMeshIsVanillaCompositing) {
  PixelFragmentStream s;
  s.gaussians = {frag(0.5, Vec3(1, 0, 0), 1.0, 0), frag(0.5, Vec3(0, 1, 0), 2.0, 1)};
  s.mesh = MeshSample{Vec3(0.3, 0.3, 0.3), 0.0, 1.5};
  const CompositeResult r = composite_pixel(s);
  EXPECT_EQ(r.color, Vec3(0.5, 0.25, 0));
  EXPECT_EQ(r.transmittance, 0.25);
}

TEST(CompositePixel, DepthTieGoesBehindMesh) {
  PixelFragmentStream s;
  s.gaussians = {frag(0.8, Vec3(0, 1, 0), 2.0, 0)};
  s.mesh = MeshSample{Vec3(1, 0, 0), 1.0, 2.0};
  const CompositeResult r = composite_pixel(s);
  EXPECT_EQ(r.split, 0u);
  EXPECT_EQ(r.color, Vec3(1, 0, 0));
}

TEST(CompositePixel, UnsortedStreamIsContractViolation) {
  PixelFragmentStream s;
  s.gaussians = {frag(0.5, Vec3::Ones(), 3.0, 0), frag(0.5, Vec3::Ones(), 1.0, 1)};
  try {
    composite_pixel(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Contract);
  }
}

TEST(CompositePixel, MatchesMergedListOracle) {
  scenes::Rng rng(77);
  for (int i = 0; i < 5000; ++i) {
    const PixelFragmentStream s = random_stream(rng);
    double t_ref = 0.0;
    const Vec3 ref = oracle::reference_composite(s, &t_ref);
    const CompositeResult r = composite_pixel(s, 0.0);
    ASSERT_LT((r.color - ref).cwiseAbs().maxCoeff(), 1e-6) << "stream " << i;
    ASSERT_NEAR(r.transmittance, t_ref, 1e-6);
    EXPECT_LT((r.front + r.mesh + r.behind + r.transmittance * s.background - r.color).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CompositePixel, ConvexityAndTransmittanceProduct) {
  scenes::Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    const PixelFragmentStream s = random_stream(rng);
    const CompositeResult r = composite_pixel(s, 0.0);
    double t = 1.0 - s.mesh.opacity;
    for (const Fragment& f : s.gaussians) t *= 1.0 - f.alpha;
    EXPECT_NEAR(r.transmittance, t, 1e-6);
    EXPECT_GE(r.transmittance, 0.0);
    EXPECT_LE(r.transmittance, 1.0);
    EXPECT_GE(r.color.minCoeff(), -1e-12);
    EXPECT_LE(r.color.maxCoeff(), 1.0 + 1e-12);
  }
}

TEST(CompositePixel, OpaqueMeshIgnoresBehindGaussians) {
  scenes::Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    PixelFragmentStream s = random_stream(rng);
    s.mesh.opacity = 1.0;
    s.mesh.depth = 10.0;
    const CompositeResult r = composite_pixel(s, 0.0);
    EXPECT_EQ(r.behind, Vec3::Zero());
    PixelFragmentStream front = s;
    front.gaussians.erase(std::remove_if(front.gaussians.begin(), front.gaussians.end(),
                                         [](const Fragment& f) { return f.depth >= 10.0; }),
                          front.gaussians.end());
    EXPECT_EQ(composite_pixel(front, 0.0).color, r.color);
  }
}

TEST(CompositePixel, TransparentMeshIsBitEqualToGaussianPath) {
  scenes::Rng rng(9);
  for (int i = 0; i < 2000; ++i) {
    PixelFragmentStream s = random_stream(rng);
    s.mesh.opacity = 0.0;
    EXPECT_EQ(composite_pixel(s).color, composite_gaussians_only(s).color);
    EXPECT_EQ(composite_pixel(s).transmittance, composite_gaussians_only(s).transmittance);
  }
}

TEST(CompositePixel, MonotoneInWhiteMeshOpacity) {
  scenes::Rng rng(10);
  for (int i = 0; i < 500; ++i) {
    PixelFragmentStream s = random_stream(rng);
    s.mesh.color = Vec3::Ones();
    if (std::isinf(s.mesh.depth)) s.mesh.depth = 7.0;
    Vec3 prev = Vec3::Constant(-1.0);
    for (double a = 0.0; a <= 1.0; a += 0.125) {
      s.mesh.opacity = a;
      const Vec3 c = composite_pixel(s, 0.0).color;
      EXPECT_TRUE((c.array() >= prev.array() - 1e-12).all());
      prev = c;
    }
  }
}

TEST(CompositePixel, EarlyStopErrorBounded) {
  scenes::Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    PixelFragmentStream s = random_stream(rng, 64);
    for (Fragment& f : s.gaussians) f.alpha = std::max(f.alpha, 0.5);
    const Vec3 exact = composite_pixel(s, 0.0).color;
    const Vec3 stopped = composite_pixel(s, 1e-4).color;
    EXPECT_LE((exact - stopped).cwiseAbs().maxCoeff(), 1e-4 + 1e-12);
  }
}

TEST(CompositeBackward, MatchesFiniteDifferences) {
  scenes::Rng rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const PixelFragmentStream s = random_stream(rng, 12);
    const Vec3 w(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const CompositeResult fwd = composite_pixel(s, 0.0);
    const StreamGradients g = composite_backward(s, fwd, w);
    auto loss = [&](const PixelFragmentStream& t) { return w.dot(composite_pixel(t, 0.0).color); };
    const double h = 1e-6;
    auto fd = [&](auto mutate) {
      PixelFragmentStream p = s, m = s;
      mutate(p, h);
      mutate(m, -h);
      return (loss(p) - loss(m)) / (2 * h);
    };
    for (std::size_t i = 0; i < s.gaussians.size(); ++i) {
      EXPECT_NEAR(g.alpha[i], fd([&](PixelFragmentStream& t, double d) { t.gaussians[i].alpha += d; }), 1e-6);
      for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(g.color[i][c], fd([&](PixelFragmentStream& t, double d) { t.gaussians[i].color[c] += d; }), 1e-6);
      }
    }
    if (!std::isinf(s.mesh.depth)) {
      // Above 1 the transmittance goes negative and the walk stops, so an
      // opaque mesh gets a one-sided difference (the loss is linear in it).
      double fd_opacity = 0.0;
      if (s.mesh.opacity == 1.0) {
        PixelFragmentStream m = s;
        m.mesh.opacity -= h;
        fd_opacity = (loss(s) - loss(m)) / h;
      } else {
        fd_opacity = fd([](PixelFragmentStream& t, double d) { t.mesh.opacity += d; });
      }
      EXPECT_NEAR(g.mesh_opacity, fd_opacity, 1e-6);
      for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(g.mesh_color[c], fd([&](PixelFragmentStream& t, double d) { t.mesh.color[c] += d; }), 1e-6);
      }
    }
    for (int c = 0; c < 3; ++c) {
      EXPECT_NEAR(g.background[c], fd([&](PixelFragmentStream& t, double d) { t.background[c] += d; }), 1e-6);
    }
  }
}

TEST(CompositeBackward, OpaqueMeshNoGaussians) {
  PixelFragmentStream s;
  s.mesh = MeshSample{Vec3(0.2, 0.4, 0.6), 1.0, 3.0};
  s.background = Vec3(0.9, 0.1, 0.5);
  const Vec3 up(1.0, 2.0, 3.0);
  const StreamGradients g = composite_backward(s, composite_pixel(s), up);
  EXPECT_EQ(g.mesh_color, up);
  // dC/d(alpha') = C' - background
  EXPECT_NEAR(g.mesh_opacity, up.dot(s.mesh.color - s.background), 1e-12);
}

TEST(CompositeBackward, TransparentMeshMatchesGaussianPath) {
  scenes::Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    PixelFragmentStream s = random_stream(rng);
    s.mesh.opacity = 0.0;
    if (std::isinf(s.mesh.depth)) s.mesh.depth = 5.0;
    const Vec3 up(0.3, -0.2, 0.9);
    const StreamGradients a = composite_backward(s, composite_pixel(s), up);
    PixelFragmentStream none = s;
    none.mesh = MeshSample{};
    const StreamGradients b = composite_backward(none, composite_pixel(none), up);
    for (std::size_t k = 0; k < s.gaussians.size(); ++k) {
      EXPECT_NEAR(a.alpha[k], b.alpha[k], 1e-12);
      EXPECT_LT((a.color[k] - b.color[k]).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(CompositeBackward, ForeignForwardStateIsStateError) {
  PixelFragmentStream s;
  s.gaussians = {frag(0.5, Vec3::Ones(), 1.0, 0)};
  const CompositeResult r = composite_pixel(PixelFragmentStream{});
  try {
    composite_backward(s, r, Vec3::Ones());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::State);
  }
}

TEST(CompositeImage, ZeroOpacityGaussiansGiveMeshOverBackground) {
  Scene s = scenes::random_scene(31);
  for (Gaussian& g : s.gaussians) g.opacity_logit = -1e3;
  const Camera cam = scenes::frontal_camera(48, 40, 40.0);
  const auto out = render(s, cam);
  const GBuffer& gb = out.gbuf;
  for (std::size_t p = 0; p < cam.pixel_count(); ++p) {
    const Vec3 expected = gb.color[p] * gb.opacity[p] + (1.0 - gb.opacity[p]) * s.background;
    EXPECT_LT((out.image().rgb(p) - expected).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(CompositeImage, EmptySceneIsBackground) {
  Scene s;
  s.mesh = Mesh(1, {Vec3::Zero()}, {}, TextureMap(1, 3), TextureMap(1, 1));
  s.background = Vec3(0.1, 0.2, 0.3);
  const auto out = render(s, scenes::frontal_camera(20, 10, 10.0));
  for (std::size_t p = 0; p < 200; ++p) EXPECT_EQ(out.image().rgb(p), s.background);
}

TEST(CompositeImage, DimensionMismatchThrows) {
  const Scene s = scenes::random_scene(1);
  const Camera cam = scenes::frontal_camera(32, 32, 24.0);
  const GBuffer gb = rasterize(s.mesh, cam);
  const auto p = project(s, cam, RenderSettings{});
  const TileBins bins = bin_tiles(p, 32, 32);
  EXPECT_THROW(composite_image(&gb, bins, p, s.background, 48, 32, RenderSettings{}), Error);
}

TEST(CompositeImage, WorkerCountIsDeterministic) {
  const Scene s = scenes::random_scene(44);
  const Camera cam = scenes::frontal_camera(64, 64, 50.0);
  RenderSettings a, b;
  b.workers = 7;
  const auto fa = render(s, cam, a), fb = render(s, cam, b);
  EXPECT_EQ(fa.image().data, fb.image().data);
  Image d(64, 64, 3);
  for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] = std::sin(0.37 * i);
  // Same worker count: bit-identical. Different counts: same up to merge order.
  const auto g1 = render_backward(s, cam, fb, d, b), g2 = render_backward(s, cam, fb, d, b);
  const auto g0 = render_backward(s, cam, fa, d, a);
  for (ParamClass c : kAllParamClasses) {
    EXPECT_EQ(gather_grads(g1, c), gather_grads(g2, c)) << to_string(c);
    const auto x = gather_grads(g0, c), y = gather_grads(g1, c);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], y[i], 1e-9 * (1.0 + std::abs(x[i])));
  }
}
