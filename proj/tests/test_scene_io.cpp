#include "hybridsplat/scene_io.hpp"
#include "hybridsplat/scenes.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

using namespace hybridsplat;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("hybridsplat_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

// Storage is 32-bit, so the round trip is exact for float-representable values.
Scene float_scene(std::uint64_t seed) {
  scenes::RandomSceneOptions o;
  o.gaussians_min = 0;
  Scene s = scenes::random_scene(seed, o);
  for (ParamClass c : kAllParamClasses) {
    auto x = gather_params(s, c);
    for (double& v : x) v = static_cast<float>(v);
    scatter_params(s, c, x);
  }
  return s;
}

void expect_bit_identical(const Scene& a, const Scene& b) {
  ASSERT_EQ(a.mesh.grid(), b.mesh.grid());
  ASSERT_EQ(a.mesh.triangles(), b.mesh.triangles());
  ASSERT_EQ(a.gaussians.size(), b.gaussians.size());
  for (std::size_t i = 0; i < a.gaussians.size(); ++i) EXPECT_EQ(a.gaussians[i].anchor, b.gaussians[i].anchor);
  for (ParamClass c : kAllParamClasses) {
    const auto x = gather_params(a, c), y = gather_params(b, c);
    ASSERT_EQ(x.size(), y.size()) << to_string(c);
    if (!x.empty()) {
      EXPECT_EQ(std::memcmp(x.data(), y.data(), x.size() * sizeof(double)), 0) << to_string(c);
    }
  }
}

io::IoErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const io::IoError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
    return e.code();
  }
  ADD_FAILURE() << "expected an IoError";
  return io::IoErrorCode::Parse;
}

}  // namespace

using SceneIo = TempDir;

TEST_F(SceneIo, RoundTripIsBitIdentical) {
  const auto cams = scenes::orbit_cameras(3, 40, 30);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scene s = float_scene(seed);
    const fs::path manifest = dir_ / ("scene" + std::to_string(seed) + ".json");
    io::save_scene(manifest, s, cams);
    const io::SceneBundle b = io::load_scene(manifest);
    expect_bit_identical(s, b.scene);
    ASSERT_EQ(b.cameras.size(), cams.size());
    for (std::size_t i = 0; i < cams.size(); ++i) {
      EXPECT_EQ(b.cameras[i].world_to_camera.rotation, cams[i].world_to_camera.rotation);
      EXPECT_EQ(b.cameras[i].world_to_camera.translation, cams[i].world_to_camera.translation);
      EXPECT_EQ(b.cameras[i].fx, cams[i].fx);
      EXPECT_EQ(b.cameras[i].width, cams[i].width);
    }
  }
}

TEST_F(SceneIo, EmptyGaussianListIsValid) {
  Scene s = float_scene(3);
  s.gaussians.clear();
  io::save_scene(dir_ / "empty.json", s);
  EXPECT_TRUE(io::load_scene(dir_ / "empty.json").scene.gaussians.empty());
  EXPECT_EQ(io::encode_gaussians({}).size(), io::kBlobHeader);
}

TEST_F(SceneIo, NoTempFilesLeftBehind) {
  io::save_scene(dir_ / "s.json", float_scene(1));
  for (const auto& e : fs::directory_iterator(dir_)) EXPECT_NE(e.path().extension(), ".tmp");
}

TEST(GaussianBlob, Layout) {
  Gaussian g;
  g.anchor = 7;
  g.offset = Vec3(1, 2, 3);
  const std::string b = io::encode_gaussians({g, g});
  ASSERT_EQ(b.size(), 16u + 120u);
  EXPECT_EQ(b.substr(0, 4), "GPCA");
  std::uint32_t version = 0;
  std::uint64_t count = 0;
  std::memcpy(&version, b.data() + 4, 4);
  std::memcpy(&count, b.data() + 8, 8);
  EXPECT_EQ(version, 1u);
  EXPECT_EQ(count, 2u);
  std::uint32_t anchor = 0;
  float ox = 0;
  std::memcpy(&anchor, b.data() + 16, 4);
  std::memcpy(&ox, b.data() + 20, 4);
  EXPECT_EQ(anchor, 7u);
  EXPECT_EQ(ox, 1.0f);
}

TEST(GaussianBlob, TruncatedIsCountMismatch) {
  const std::string b = io::encode_gaussians(float_scene(2).gaussians);
  EXPECT_EQ(code_of([&] { io::decode_gaussians(b.substr(0, b.size() - 1)); }), io::IoErrorCode::CountMismatch);
  EXPECT_EQ(code_of([&] { io::decode_gaussians(b.substr(0, b.size() - 60)); }), io::IoErrorCode::CountMismatch);
  EXPECT_EQ(code_of([&] { io::decode_gaussians(b.substr(0, 10)); }), io::IoErrorCode::CountMismatch);
}

TEST(GaussianBlob, BadMagicAndVersion) {
  std::string b = io::encode_gaussians({Gaussian{}});
  std::string bad = b;
  bad[0] = 'X';
  EXPECT_EQ(code_of([&] { io::decode_gaussians(bad); }), io::IoErrorCode::BadMagic);
  bad = b;
  bad[4] = 2;
  EXPECT_EQ(code_of([&] { io::decode_gaussians(bad); }), io::IoErrorCode::VersionMismatch);
}

TEST_F(SceneIo, MissingFiles) {
  EXPECT_EQ(code_of([&] { io::load_scene(dir_ / "nope.json"); }), io::IoErrorCode::MissingFile);
  io::save_scene(dir_ / "s.json", float_scene(4));
  fs::remove(dir_ / "s.gpca");
  EXPECT_EQ(code_of([&] { io::load_scene(dir_ / "s.json"); }), io::IoErrorCode::MissingFile);
}

TEST_F(SceneIo, TruncatedSceneBlob) {
  Scene s = float_scene(5);
  ASSERT_FALSE(s.gaussians.empty());
  io::save_scene(dir_ / "s.json", s);
  const std::string blob = io::read_file(dir_ / "s.gpca");
  std::ofstream(dir_ / "s.gpca", std::ios::binary | std::ios::trunc) << blob.substr(0, blob.size() - 7);
  EXPECT_EQ(code_of([&] { io::load_scene(dir_ / "s.json"); }), io::IoErrorCode::CountMismatch);
}

TEST_F(SceneIo, ManifestVersionAndFormat) {
  io::save_scene(dir_ / "s.json", float_scene(6));
  nlohmann::json j = io::parse_json(dir_ / "s.json");
  j["version"] = 99;
  std::ofstream(dir_ / "v.json") << j.dump();
  EXPECT_EQ(code_of([&] { io::load_scene(dir_ / "v.json"); }), io::IoErrorCode::VersionMismatch);
  j["version"] = 1;
  j["format"] = "other";
  std::ofstream(dir_ / "f.json") << j.dump();
  EXPECT_EQ(code_of([&] { io::load_scene(dir_ / "f.json"); }), io::IoErrorCode::BadMagic);
  std::ofstream(dir_ / "g.json") << "{ not json";
  EXPECT_EQ(code_of([&] { io::load_scene(dir_ / "g.json"); }), io::IoErrorCode::Parse);
}

TEST(Quantize, HalfAwayFromZero) {
  EXPECT_EQ(io::quantize(0.0), 0);
  EXPECT_EQ(io::quantize(1.0), 255);
  EXPECT_EQ(io::quantize(-0.3), 0);
  EXPECT_EQ(io::quantize(1.7), 255);
  EXPECT_EQ(io::quantize(0.5 / 255.0), 1);
  EXPECT_EQ(io::quantize(127.5 / 255.0), 128);
  EXPECT_EQ(io::quantize(0.49 / 255.0), 0);
}

TEST(Srgb, TransferCurve) {
  EXPECT_EQ(io::srgb_encode(0.0), 0.0);
  EXPECT_NEAR(io::srgb_encode(1.0), 1.0, 1e-12);
  EXPECT_NEAR(io::srgb_encode(0.001), 0.01292, 1e-12);
  EXPECT_NEAR(io::srgb_encode(0.5), 0.735356983, 1e-8);
}

TEST_F(SceneIo, ImageRoundTrips) {
  Image img(7, 5, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = (i * 37 % 256) / 255.0;
  for (const char* ext : {".ppm", ".png"}) {
    const fs::path p = dir_ / (std::string("img") + ext);
    io::write_image(p, img);
    const Image back = io::read_image(p);
    ASSERT_TRUE(back.same_shape(img)) << ext;
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_EQ(back.data[i], img.data[i]) << ext;
  }
  EXPECT_THROW(io::write_image(dir_ / "img.bmp", img), Error);
  EXPECT_EQ(code_of([&] { io::read_image(dir_ / "absent.png"); }), io::IoErrorCode::MissingFile);
}

TEST_F(SceneIo, MaskFromGrayImage) {
  Image img(4, 2, 3, 0.0);
  img.set_rgb(1, Vec3::Constant(1.0));
  img.set_rgb(6, Vec3::Constant(0.2));
  io::write_image(dir_ / "m.png", img);
  const PixelMask m = io::read_mask(dir_ / "m.png");
  EXPECT_EQ(m.flags, (std::vector<std::uint8_t>{0, 1, 0, 0, 0, 0, 1, 0}));
}

TEST(Options, ParsesKeysAndComments) {
  io::FitOptions o;
  io::parse_options(o,
                    "# weights\n"
                    "scale = 0.5\n"
                    "  translation=0.25   # trailing\n"
                    "\n"
                    "iterations = 42\n"
                    "lr.colors = 0.01\n"
                    "lr.background = 0\n");
  EXPECT_EQ(o.weights.scale, 0.5);
  EXPECT_EQ(o.weights.translation, 0.25);
  EXPECT_EQ(o.config.iterations, 42);
  EXPECT_EQ(o.config.lr(ParamClass::Colors), 0.01);
}

TEST(Options, Errors) {
  io::FitOptions o;
  EXPECT_EQ(code_of([&] { io::parse_options(o, "bogus = 1\n"); }), io::IoErrorCode::Parse);
  EXPECT_EQ(code_of([&] { io::parse_options(o, "scale = abc\n"); }), io::IoErrorCode::Parse);
  EXPECT_EQ(code_of([&] { io::parse_options(o, "scale 1\n"); }), io::IoErrorCode::Parse);
}

TEST(Cameras, JsonRoundTripAndValidation) {
  const auto cams = scenes::orbit_cameras(4, 64, 48);
  const auto back = io::cameras_from_json(nlohmann::json::parse(io::cameras_to_json(cams).dump()));
  ASSERT_EQ(back.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(back[i].world_to_camera.rotation, cams[i].world_to_camera.rotation);
    EXPECT_EQ(back[i].cx, cams[i].cx);
  }
  nlohmann::json j = io::camera_to_json(cams[0]);
  j["fx"] = -1.0;
  EXPECT_THROW(io::camera_from_json(j), Error);
  j.erase("fx");
  EXPECT_EQ(code_of([&] { io::camera_from_json(j); }), io::IoErrorCode::Parse);
}

TEST(Trace, CsvHeader) {
  TraceRow r;
  r.iteration = 3;
  r.loss.total = 0.5;
  const std::string csv = io::trace_csv({r});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "iteration,total,photo,scale,translation,laplacian,psnr");
  EXPECT_EQ(csv.substr(csv.find('\n') + 1, 6), "3,0.5,");
}
