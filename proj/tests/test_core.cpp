#include "hybridsplat/core.hpp"
#include "hybridsplat/scenes.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <algorithm>
#include <set>

using namespace hybridsplat;

namespace {

Mesh flat_grid(int k, double z = 10.0) {
  std::vector<Vec3> pos;
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c < k; ++c) pos.emplace_back(c, r, z);
  }
  return Mesh(k, pos, grid_topology(k), TextureMap(2, 3, 0.5), TextureMap(2, 1, 1.0));
}

}  // namespace

TEST(ResolvePosition, ZeroOffsetIsAnchorVertex) {
  const Mesh m = flat_grid(3);
  Gaussian g;
  g.anchor = 4;
  EXPECT_EQ(resolve_position(g, m), m.positions[4]);
}

TEST(ResolvePosition, AddsOffset) {
  Mesh m = flat_grid(2);
  m.positions[1] = Vec3(1, 2, 3);
  Gaussian g;
  g.anchor = 1;
  g.offset = Vec3(0, 0, 5);
  EXPECT_EQ(resolve_position(g, m), Vec3(1, 2, 8));
}

TEST(ResolvePosition, FollowsVertexMotion) {
  Mesh m = flat_grid(3);
  Gaussian g;
  g.anchor = 2;
  g.offset = Vec3(0.25, -1.5, 2.0);
  const Vec3 before = resolve_position(g, m);
  const Vec3 delta(0.5, 0.25, -0.125);
  m.positions[2] += delta;
  EXPECT_EQ(resolve_position(g, m) - before, delta);
}

TEST(ResolvePosition, InvalidAnchorThrows) {
  const Mesh m = flat_grid(2);
  Gaussian g;
  g.anchor = 4;
  try {
    resolve_position(g, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidAnchor);
  }
  Scene s;
  s.mesh = m;
  s.gaussians = {g};
  EXPECT_THROW(s.validate(), Error);
}

TEST(Covariance3d, IdentityUnitScale) {
  Gaussian g;
  EXPECT_TRUE(covariance3d(g).isApprox(Mat3::Identity(), 1e-15));
}

TEST(Covariance3d, AxisScale) {
  Gaussian g;
  g.log_scale = Vec3(std::log(2.0), 0.0, 0.0);
  const Mat3 expected = Vec3(4, 1, 1).asDiagonal();
  EXPECT_LT((covariance3d(g) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Covariance3d, EigenvaluesAreSquaredScales) {
  scenes::Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    Gaussian g;
    g.rotation = rng.unit_quaternion() * rng.uniform(0.5, 2.0);  // unnormalized on purpose
    for (int j = 0; j < 3; ++j) g.log_scale[j] = rng.uniform(-3.0, 2.0);
    const Mat3 sigma = covariance3d(g);
    ASSERT_EQ(sigma, sigma.transpose());
    Eigen::SelfAdjointEigenSolver<Mat3> es(sigma);
    std::array<double, 3> ev{es.eigenvalues()[0], es.eigenvalues()[1], es.eigenvalues()[2]};
    std::array<double, 3> s2{};
    for (int j = 0; j < 3; ++j) s2[j] = std::exp(2.0 * g.log_scale[j]);
    std::sort(ev.begin(), ev.end());
    std::sort(s2.begin(), s2.end());
    EXPECT_GT(ev[0], 0.0);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(ev[j], s2[j], 1e-6 * std::max(1.0, s2[j]));
  }
}

TEST(Quaternion, RotationIsProper) {
  scenes::Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Mat3 r = rotation_from_quaternion(rng.unit_quaternion() * 3.0);
    EXPECT_LT((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
  }
}

TEST(Quaternion, BackwardMatchesFiniteDifferences) {
  scenes::Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec4 q = rng.unit_quaternion() * rng.uniform(0.5, 2.0);
    Mat3 dr;
    for (int i = 0; i < 9; ++i) dr(i / 3, i % 3) = rng.uniform(-1, 1);
    const Vec4 analytic = rotation_from_quaternion_backward(q, dr);
    for (int k = 0; k < 4; ++k) {
      const double h = 1e-6;
      Vec4 qp = q, qm = q;
      qp[k] += h;
      qm[k] -= h;
      const double fd = ((rotation_from_quaternion(qp) - rotation_from_quaternion(qm)).cwiseProduct(dr)).sum() / (2 * h);
      EXPECT_NEAR(analytic[k], fd, 1e-7);
    }
  }
}

TEST(ProjectPoint, OpticalAxis) {
  Camera cam = scenes::frontal_camera(64, 48, 100.0);
  const ProjectedPoint p = project_point(cam, Vec3(0, 0, 250.0));
  EXPECT_EQ(p.pixel, Vec2(cam.cx, cam.cy));
  EXPECT_EQ(p.depth, 250.0);
  EXPECT_FALSE(p.behind);
}

TEST(ProjectPoint, FocalScaling) {
  Camera cam = scenes::frontal_camera(64, 48, 100.0);
  const Vec3 x(3.0, -2.0, 40.0);
  const double a = project_point(cam, x).pixel.x() - cam.cx;
  cam.fx *= 2.0;
  EXPECT_DOUBLE_EQ(project_point(cam, x).pixel.x() - cam.cx, 2.0 * a);
}

TEST(ProjectPoint, BehindFlag) {
  const Camera cam = scenes::frontal_camera(8, 8, 10.0, 2.0);
  EXPECT_TRUE(project_point(cam, Vec3(0, 0, 2.0)).behind);
  EXPECT_TRUE(project_point(cam, Vec3(0, 0, -5.0)).behind);
  EXPECT_FALSE(project_point(cam, Vec3(0, 0, 2.5)).behind);
}

TEST(ProjectPoint, UnprojectRoundTrip) {
  scenes::Rng rng(9);
  const auto cams = scenes::orbit_cameras(5, 128, 96);
  for (const Camera& cam : cams) {
    for (int i = 0; i < 50; ++i) {
      const Vec2 px(rng.uniform(0, 128), rng.uniform(0, 96));
      const double depth = rng.uniform(5, 500);
      const ProjectedPoint p = project_point(cam, unproject_point(cam, px, depth));
      EXPECT_LT((p.pixel - px).norm(), 1e-6);
      EXPECT_NEAR(p.depth, depth, 1e-9 * depth);
    }
  }
}

TEST(Camera, ValidationRejectsBadIntrinsics) {
  Camera cam = scenes::frontal_camera(8, 8, 10.0);
  EXPECT_NO_THROW(cam.validate());
  Camera bad = cam;
  bad.near = 0.0;
  EXPECT_THROW(bad.validate(), Error);
  bad = cam;
  bad.width = 0;
  EXPECT_THROW(bad.validate(), Error);
  bad = cam;
  bad.world_to_camera.rotation(0, 0) = -1.0;  // reflection
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Mesh, ValidatesTopologyAndClampsTextures) {
  std::vector<Vec3> pos(4, Vec3::Zero());
  EXPECT_THROW(Mesh(2, pos, {{0, 1, 4}}, TextureMap(1, 3), TextureMap(1, 1)), Error);
  EXPECT_THROW(Mesh(3, pos, {}, TextureMap(1, 3), TextureMap(1, 1)), Error);
  TextureMap c(1, 3);
  c.texels = {-0.5, 0.5, 1.5};
  const Mesh m(2, pos, {{0, 1, 3}}, c, TextureMap(1, 1, 2.0));
  EXPECT_EQ(m.color.texels, (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_EQ(m.opacity.texels[0], 1.0);
}

TEST(Mesh, GridUvAndTopology) {
  const Mesh m = flat_grid(4);
  EXPECT_EQ(m.triangles().size(), 18u);
  EXPECT_EQ(m.vertex_uv(0), Vec2(0, 0));
  EXPECT_EQ(m.vertex_uv(15), Vec2(1, 1));
  EXPECT_EQ(m.nearest_vertex(Vec2(0.34, 0.65)), 2u * 4u + 1u);
  EXPECT_TRUE(m.surface_point(Vec2(0.5, 0.5)).isApprox(Vec3(1.5, 1.5, 10.0)));
}

TEST(SamplingMask, SplitsBudget) {
  std::vector<std::uint8_t> prio(16, 0);
  for (int i = 0; i < 8; ++i) prio[i] = 1;
  const SamplingMask m = build_sampling_mask(4, prio, 8, 0.75, 1);
  ASSERT_EQ(m.selected.size(), 8u);
  const auto n_prio = std::count_if(m.selected.begin(), m.selected.end(), [&](auto t) { return prio[t] != 0; });
  EXPECT_EQ(n_prio, 6);
  EXPECT_TRUE(m.warnings.empty());
}

TEST(SamplingMask, ZeroFractionUsesRestOnly) {
  std::vector<std::uint8_t> prio(64, 0);
  for (int i = 0; i < 32; ++i) prio[i] = 1;
  const SamplingMask m = build_sampling_mask(8, prio, 10, 0.0, 4);
  ASSERT_EQ(m.selected.size(), 10u);
  for (auto t : m.selected) EXPECT_EQ(prio[t], 0);
}

TEST(SamplingMask, PaperBudgetSplit) {
  std::vector<std::uint8_t> prio(256 * 256, 0);
  for (std::size_t i = 0; i < prio.size() / 2; ++i) prio[i] = 1;
  const SamplingMask m = build_sampling_mask(256, prio, 16384, 0.75, 2);
  ASSERT_EQ(m.selected.size(), 16384u);
  const auto n_prio = std::count_if(m.selected.begin(), m.selected.end(), [&](auto t) { return prio[t] != 0; });
  EXPECT_EQ(n_prio, 12288);
  EXPECT_EQ(std::set<std::uint32_t>(m.selected.begin(), m.selected.end()).size(), 16384u);
}

TEST(SamplingMask, SmallPriorityRegionFallsBack) {
  std::vector<std::uint8_t> prio(16, 0);
  prio[3] = prio[7] = 1;
  const SamplingMask m = build_sampling_mask(4, prio, 8, 0.75, 0);
  ASSERT_EQ(m.selected.size(), 8u);
  EXPECT_EQ(m.warnings.size(), 1u);
  EXPECT_TRUE(std::binary_search(m.selected.begin(), m.selected.end(), 3u));
  EXPECT_TRUE(std::binary_search(m.selected.begin(), m.selected.end(), 7u));
}

TEST(SamplingMask, DeterministicForSeed) {
  std::vector<std::uint8_t> prio(32 * 32);
  for (std::size_t i = 0; i < prio.size(); ++i) prio[i] = (i * 7) % 3 == 0;
  const auto a = build_sampling_mask(32, prio, 100, 0.75, 42);
  const auto b = build_sampling_mask(32, prio, 100, 0.75, 42);
  const auto c = build_sampling_mask(32, prio, 100, 0.75, 43);
  EXPECT_EQ(a.selected, b.selected);
  EXPECT_NE(a.selected, c.selected);
}

TEST(SamplingMask, RejectsOversizedBudget) {
  EXPECT_THROW(build_sampling_mask(2, std::vector<std::uint8_t>(4, 1), 5), Error);
  EXPECT_THROW(build_sampling_mask(2, std::vector<std::uint8_t>(3, 1), 1), Error);
}

TEST(SamplingMask, SpawnsAnchoredGaussians) {
  const Mesh m = flat_grid(5);
  std::vector<std::uint8_t> prio(16 * 16, 1);
  const SamplingMask mask = build_sampling_mask(16, prio, 20, 0.75, 3);
  const auto gs = gaussians_from_mask(m, mask, Gaussian{});
  ASSERT_EQ(gs.size(), 20u);
  for (std::size_t i = 0; i < gs.size(); ++i) {
    EXPECT_LT(gs[i].anchor, m.vertex_count());
    EXPECT_TRUE(resolve_position(gs[i], m).isApprox(m.surface_point(mask.texel_uv(mask.selected[i])), 1e-12));
  }
}
