#include "hybridsplat/scene_io.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <sys/wait.h>

namespace fs = std::filesystem;
using namespace hybridsplat;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run_cli(const std::string& args) {
  const std::string cmd = std::string(HYBRIDSPLAT_CLI) + " " + args + " 2>/dev/null";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "hybridsplat_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    const CliRun r = run_cli("demo-scene -o " + (dir_ / "demo.json").string() + " --targets " + (dir_ / "targets").string() +
                      " --gaussians 300 --views 2 --size 48 --grid 16 --workers 2");
    ASSERT_EQ(r.code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static std::string path(const std::string& name) { return (dir_ / name).string(); }
  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, DemoSceneLoads) {
  const io::SceneBundle b = io::load_scene(path("demo.json"));
  EXPECT_EQ(b.scene.gaussians.size(), 300u);
  EXPECT_EQ(b.cameras.size(), 2u);
  EXPECT_TRUE(fs::exists(path("targets/view_000.png")));
  EXPECT_TRUE(fs::exists(path("targets/view_001.png")));
}

TEST_F(Cli, RenderIsByteIdentical) {
  ASSERT_EQ(run_cli("render " + path("demo.json") + " --view 1 -o " + path("a.png") + " --workers 3").code, 0);
  ASSERT_EQ(run_cli("render " + path("demo.json") + " --view 1 -o " + path("b.png") + " --workers 3").code, 0);
  ASSERT_EQ(run_cli("render " + path("demo.json") + " --view 1 -o " + path("c.ppm") + " --workers 1").code, 0);
  EXPECT_EQ(io::read_file(path("a.png")), io::read_file(path("b.png")));
  const Image png = io::read_image(path("a.png")), ppm = io::read_image(path("c.ppm"));
  EXPECT_EQ(png.width, 48);
  EXPECT_EQ(png.data, ppm.data);
  EXPECT_EQ(io::read_file(path("a.png")), io::read_file(path("targets/view_001.png")));
}

TEST_F(Cli, MetricsOfImageWithItself) {
  const CliRun r = run_cli("metrics " + path("targets/view_000.png") + " " + path("targets/view_000.png"));
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("mae").get<double>(), 0.0);
  EXPECT_EQ(j.at("psnr").get<double>(), 100.0);
  EXPECT_EQ(j.at("ssim").get<double>(), 1.0);
}

TEST_F(Cli, FitWritesSceneAndTrace) {
  std::ofstream(path("w.txt")) << "iterations = 3\nlog_every = 1\nscale = 0.01\n";
  const CliRun r = run_cli("fit --scene " + path("demo.json") + " --targets " + path("targets") + " --weights " +
                    path("w.txt") + " --trace " + path("trace.csv") + " -o " + path("fitted.json"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(io::load_scene(path("fitted.json")).scene.gaussians.size(), 300u);
  const std::string csv = io::read_file(path("trace.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST_F(Cli, BenchPrintsRows) {
  const CliRun r = run_cli("bench --scene " + path("demo.json") + " --repeat 2 --warmup 0 --mode gs-only --workers 1");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("mode,view,gaussians,width,height,workers,repeat,min_ms,median_ms,mean_ms", 0), 0u);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 3);
  EXPECT_NE(r.out.find("\ngs-only,0,300,48,48,1,2,"), std::string::npos);
}

TEST_F(Cli, VerifyPasses) {
  const CliRun r = run_cli("verify --seed 3 --cases 2 --gradient-cases 1");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("verify PASS"), std::string::npos);
}

TEST_F(Cli, MakeMask) {
  Image pri(16, 16, 3, 0.0);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 16; ++x) pri.set_rgb(static_cast<std::size_t>(y) * 16 + x, Vec3::Constant(1.0));
  }
  io::write_image(path("pri.png"), pri);
  ASSERT_EQ(run_cli("make-mask --priority " + path("pri.png") + " --budget 8 --seed 1 -o " + path("mask.json")).code, 0);
  const auto j = io::parse_json(path("mask.json"));
  EXPECT_EQ(j.at("selected").size(), 8u);
  EXPECT_EQ(j.at("resolution").get<int>(), 16);
}

TEST_F(Cli, UsageAndIoErrors) {
  EXPECT_EQ(run_cli("render " + path("demo.json") + " --bogus -o " + path("x.png")).code, 1);
  EXPECT_EQ(run_cli("").code, 1);
  EXPECT_NE(run_cli("render " + path("missing.json") + " -o " + path("x.png")).code, 0);
  EXPECT_NE(run_cli("metrics " + path("missing.png") + " " + path("a.png")).code, 0);
  EXPECT_FALSE(fs::exists(path("x.png")));
  std::ofstream(path("bad.json")) << "{}";
  EXPECT_EQ(run_cli("render " + path("bad.json") + " -o " + path("x.png")).code, 2);
  EXPECT_FALSE(fs::exists(path("x.png")));
}
