#pragma once

// On-disk formats: JSON scene manifest, raw little-endian arrays for mesh
// data, the GPCA Gaussian blob, camera lists, 8-bit PPM/PNG images, fit
// option files, and trace CSVs. Every write goes to a temporary file that is
// renamed into place, so readers never see a partial file.

#include "hybridsplat/core.hpp"
#include "hybridsplat/fit.hpp"
#include "hybridsplat/image.hpp"

#include <nlohmann/json.hpp>
#include <png.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace hybridsplat::io {

static_assert(std::endian::native == std::endian::little, "raw formats assume a little-endian host");

namespace fs = std::filesystem;

enum class IoErrorCode { MissingFile, BadMagic, VersionMismatch, CountMismatch, Parse, Write };

inline const char* to_string(IoErrorCode c) {
  switch (c) {
    case IoErrorCode::MissingFile: return "missing-file";
    case IoErrorCode::BadMagic: return "bad-magic";
    case IoErrorCode::VersionMismatch: return "version-mismatch";
    case IoErrorCode::CountMismatch: return "count-mismatch";
    case IoErrorCode::Parse: return "parse";
    case IoErrorCode::Write: return "write";
  }
  return "?";
}

class IoError : public Error {
 public:
  IoError(IoErrorCode code, const std::string& what)
      : Error(ErrorKind::Io, std::string(to_string(code)) + ": " + what), code_(code) {}
  IoErrorCode code() const noexcept { return code_; }

 private:
  IoErrorCode code_;
};

inline constexpr std::uint32_t kSceneVersion = 1;
inline constexpr std::uint32_t kBlobVersion = 1;
inline constexpr char kBlobMagic[4] = {'G', 'P', 'C', 'A'};
inline constexpr std::size_t kBlobHeader = 16;
inline constexpr std::size_t kBlobRecord = 60;

// ---------------------------------------------------------------------------
// Raw file helpers

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorCode::MissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
inline void write_file_atomic(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoErrorCode::Write, "cannot create " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw IoError(IoErrorCode::Write, "short write to " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError(IoErrorCode::Write, "cannot rename into " + path.string() + ": " + ec.message());
  }
}

template <class T>
void append_raw(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

template <class T>
T read_raw(const std::string& buf, std::size_t& pos) {
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

inline std::string encode_f32(const std::vector<double>& values) {
  std::string buf;
  buf.reserve(values.size() * 4);
  for (double v : values) append_raw(buf, static_cast<float>(v));
  return buf;
}

inline std::vector<double> decode_f32(const std::string& bytes, std::size_t expected, const std::string& what) {
  if (bytes.size() != expected * 4) {
    throw IoError(IoErrorCode::CountMismatch, what + ": expected " + std::to_string(expected) + " floats, file has " +
                                                  std::to_string(bytes.size()) + " bytes");
  }
  std::vector<double> out(expected);
  std::size_t pos = 0;
  for (double& v : out) v = read_raw<float>(bytes, pos);
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian blob

inline std::string encode_gaussians(const std::vector<Gaussian>& gs) {
  std::string buf;
  buf.reserve(kBlobHeader + kBlobRecord * gs.size());
  buf.append(kBlobMagic, 4);
  append_raw<std::uint32_t>(buf, kBlobVersion);
  append_raw<std::uint64_t>(buf, gs.size());
  for (const Gaussian& g : gs) {
    append_raw<std::uint32_t>(buf, g.anchor);
    for (int i = 0; i < 3; ++i) append_raw(buf, static_cast<float>(g.offset[i]));
    for (int i = 0; i < 4; ++i) append_raw(buf, static_cast<float>(g.rotation[i]));
    for (int i = 0; i < 3; ++i) append_raw(buf, static_cast<float>(g.log_scale[i]));
    append_raw(buf, static_cast<float>(g.opacity_logit));
    for (int i = 0; i < 3; ++i) append_raw(buf, static_cast<float>(g.color[i]));
  }
  return buf;
}

inline std::vector<Gaussian> decode_gaussians(const std::string& buf, const std::string& what = "gaussian blob") {
  if (buf.size() < kBlobHeader) throw IoError(IoErrorCode::CountMismatch, what + ": shorter than its header");
  if (std::memcmp(buf.data(), kBlobMagic, 4) != 0) throw IoError(IoErrorCode::BadMagic, what + ": not a GPCA blob");
  std::size_t pos = 4;
  const auto version = read_raw<std::uint32_t>(buf, pos);
  if (version != kBlobVersion) {
    throw IoError(IoErrorCode::VersionMismatch, what + ": version " + std::to_string(version) + ", expected " +
                                                    std::to_string(kBlobVersion));
  }
  const auto count = read_raw<std::uint64_t>(buf, pos);
  if ((buf.size() - kBlobHeader) % kBlobRecord != 0 || (buf.size() - kBlobHeader) / kBlobRecord != count) {
    throw IoError(IoErrorCode::CountMismatch, what + ": header declares " + std::to_string(count) +
                                                  " records but the file holds " + std::to_string(buf.size()) + " bytes");
  }
  std::vector<Gaussian> gs(count);
  for (Gaussian& g : gs) {
    g.anchor = read_raw<std::uint32_t>(buf, pos);
    for (int i = 0; i < 3; ++i) g.offset[i] = read_raw<float>(buf, pos);
    for (int i = 0; i < 4; ++i) g.rotation[i] = read_raw<float>(buf, pos);
    for (int i = 0; i < 3; ++i) g.log_scale[i] = read_raw<float>(buf, pos);
    g.opacity_logit = read_raw<float>(buf, pos);
    for (int i = 0; i < 3; ++i) g.color[i] = read_raw<float>(buf, pos);
  }
  return gs;
}

inline void save_gaussians(const fs::path& path, const std::vector<Gaussian>& gs) {
  write_file_atomic(path, encode_gaussians(gs));
}

inline std::vector<Gaussian> load_gaussians(const fs::path& path) {
  return decode_gaussians(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Cameras

inline nlohmann::json camera_to_json(const Camera& c) {
  nlohmann::json j;
  j["width"] = c.width;
  j["height"] = c.height;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["near"] = c.near;
  std::vector<double> r(9), t(3);
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) r[i * 3 + k] = c.world_to_camera.rotation(i, k);
    t[i] = c.world_to_camera.translation[i];
  }
  j["rotation"] = r;
  j["translation"] = t;
  return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
  try {
    Camera c;
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.near = j.value("near", 1.0);
    const auto r = j.at("rotation").get<std::vector<double>>();
    const auto t = j.at("translation").get<std::vector<double>>();
    if (r.size() != 9 || t.size() != 3) throw IoError(IoErrorCode::Parse, "camera rotation/translation sizes");
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 3; ++k) c.world_to_camera.rotation(i, k) = r[i * 3 + k];
      c.world_to_camera.translation[i] = t[i];
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrorCode::Parse, std::string("camera: ") + e.what());
  }
}

inline nlohmann::json cameras_to_json(const std::vector<Camera>& cams) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Camera& c : cams) arr.push_back(camera_to_json(c));
  return arr;
}

inline std::vector<Camera> cameras_from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) throw IoError(IoErrorCode::Parse, "camera list must be an array");
  std::vector<Camera> out;
  for (const auto& j : arr) out.push_back(camera_from_json(j));
  return out;
}

inline nlohmann::json parse_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrorCode::Parse, path.string() + ": " + e.what());
  }
}

/// A camera file is either a bare array or an object with a "cameras" array.
inline std::vector<Camera> load_cameras(const fs::path& path) {
  const nlohmann::json j = parse_json(path);
  return cameras_from_json(j.is_object() ? j.at("cameras") : j);
}

inline void save_cameras(const fs::path& path, const std::vector<Camera>& cams) {
  nlohmann::json j;
  j["cameras"] = cameras_to_json(cams);
  write_file_atomic(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Scene manifest

struct SceneBundle {
  Scene scene;
  std::vector<Camera> cameras;
};

/// Writes `<stem>.json` plus sibling data files `<stem>.positions.f32`,
/// `<stem>.topology.u32`, `<stem>.color.f32`, `<stem>.opacity.f32` and
/// `<stem>.gpca`. Mesh and Gaussian values are stored as 32-bit floats.
inline void save_scene(const fs::path& manifest, const Scene& scene, const std::vector<Camera>& cameras = {}) {
  scene.validate();
  const fs::path dir = manifest.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  const std::string stem = manifest.stem().string();
  auto sibling = [&](const std::string& suffix) { return stem + suffix; };

  std::vector<double> flat;
  flat.reserve(scene.mesh.positions.size() * 3);
  for (const Vec3& p : scene.mesh.positions) flat.insert(flat.end(), {p.x(), p.y(), p.z()});
  write_file_atomic(dir / sibling(".positions.f32"), encode_f32(flat));

  std::string topo;
  for (const Triangle& t : scene.mesh.triangles()) {
    for (std::uint32_t v : t) append_raw(topo, v);
  }
  write_file_atomic(dir / sibling(".topology.u32"), topo);
  write_file_atomic(dir / sibling(".color.f32"), encode_f32(scene.mesh.color.texels));
  write_file_atomic(dir / sibling(".opacity.f32"), encode_f32(scene.mesh.opacity.texels));
  save_gaussians(dir / sibling(".gpca"), scene.gaussians);

  nlohmann::json j;
  j["format"] = "hybridsplat-scene";
  j["version"] = kSceneVersion;
  j["mesh"] = {{"grid", scene.mesh.grid()},
               {"positions", sibling(".positions.f32")},
               {"topology", sibling(".topology.u32")},
               {"triangles", scene.mesh.triangles().size()}};
  j["textures"] = {{"color", {{"file", sibling(".color.f32")}, {"size", scene.mesh.color.size}}},
                   {"opacity", {{"file", sibling(".opacity.f32")}, {"size", scene.mesh.opacity.size}}}};
  j["gaussians"] = {{"file", sibling(".gpca")}, {"count", scene.gaussians.size()}};
  j["background"] = {scene.background.x(), scene.background.y(), scene.background.z()};
  j["cameras"] = cameras_to_json(cameras);
  write_file_atomic(manifest, j.dump(2) + "\n");
}

inline SceneBundle load_scene(const fs::path& manifest) {
  if (!fs::exists(manifest)) throw IoError(IoErrorCode::MissingFile, "no scene manifest at " + manifest.string());
  const nlohmann::json j = parse_json(manifest);
  const fs::path dir = manifest.parent_path();
  try {
    if (j.value("format", std::string()) != "hybridsplat-scene") {
      throw IoError(IoErrorCode::BadMagic, manifest.string() + ": not a hybridsplat scene manifest");
    }
    const auto version = j.at("version").get<std::uint32_t>();
    if (version != kSceneVersion) {
      throw IoError(IoErrorCode::VersionMismatch, manifest.string() + ": manifest version " +
                                                      std::to_string(version) + ", expected " +
                                                      std::to_string(kSceneVersion));
    }
    const auto& m = j.at("mesh");
    const int grid = m.at("grid").get<int>();
    if (grid < 1) throw IoError(IoErrorCode::Parse, "mesh grid must be >= 1");
    const std::size_t nv = static_cast<std::size_t>(grid) * grid;
    const auto flat = decode_f32(read_file(dir / m.at("positions").get<std::string>()), nv * 3, "mesh positions");
    std::vector<Vec3> pos(nv);
    for (std::size_t i = 0; i < nv; ++i) pos[i] = Vec3(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);

    const std::string topo = read_file(dir / m.at("topology").get<std::string>());
    const auto ntri = m.at("triangles").get<std::size_t>();
    if (topo.size() != ntri * 12) {
      throw IoError(IoErrorCode::CountMismatch, "mesh topology: expected " + std::to_string(ntri) + " triangles");
    }
    std::vector<Triangle> tris(ntri);
    std::size_t p = 0;
    for (Triangle& t : tris) {
      for (auto& v : t) v = read_raw<std::uint32_t>(topo, p);
    }

    auto load_tex = [&](const char* key, int channels) {
      const auto& t = j.at("textures").at(key);
      const int size = t.at("size").get<int>();
      if (size < 1) throw IoError(IoErrorCode::Parse, std::string(key) + " texture size must be >= 1");
      TextureMap tex(size, channels);
      tex.texels = decode_f32(read_file(dir / t.at("file").get<std::string>()), tex.texels.size(),
                              std::string(key) + " texture");
      return tex;
    };
    TextureMap color = load_tex("color", 3);
    TextureMap opacity = load_tex("opacity", 1);

    SceneBundle b;
    b.scene.mesh = Mesh(grid, std::move(pos), std::move(tris), std::move(color), std::move(opacity));
    const auto& g = j.at("gaussians");
    b.scene.gaussians = load_gaussians(dir / g.at("file").get<std::string>());
    if (b.scene.gaussians.size() != g.at("count").get<std::size_t>()) {
      throw IoError(IoErrorCode::CountMismatch, "gaussian count differs from the manifest");
    }
    const auto bg = j.at("background").get<std::vector<double>>();
    if (bg.size() != 3) throw IoError(IoErrorCode::Parse, "background must have 3 components");
    b.scene.background = Vec3(bg[0], bg[1], bg[2]);
    if (j.contains("cameras")) b.cameras = cameras_from_json(j.at("cameras"));
    b.scene.validate();
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrorCode::Parse, manifest.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Images

inline double srgb_encode(double linear) {
  return linear <= 0.0031308 ? 12.92 * linear : 1.055 * std::pow(linear, 1.0 / 2.4) - 0.055;
}

/// Clamp to [0, 1], scale to 255, round half away from zero.
inline std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::round(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::vector<std::uint8_t> to_bytes(const Image& img, bool srgb = false) {
  std::vector<std::uint8_t> out(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    out[i] = quantize(srgb ? srgb_encode(std::clamp(img.data[i], 0.0, 1.0)) : img.data[i]);
  }
  return out;
}

inline bool has_extension(const fs::path& p, const char* ext) {
  std::string e = p.extension().string();
  for (char& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return e == ext;
}

inline std::string encode_ppm(const Image& img, bool srgb = false) {
  if (img.channels != 3) throw Error(ErrorKind::Dimension, "PPM output needs a 3-channel image");
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  const auto bytes = to_bytes(img, srgb);
  out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  return out;
}

inline std::string encode_png(const Image& img, bool srgb = false) {
  if (img.channels != 1 && img.channels != 3) throw Error(ErrorKind::Dimension, "PNG output needs 1 or 3 channels");
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const auto bytes = to_bytes(img, srgb);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, bytes.data(), 0, nullptr)) {
    throw IoError(IoErrorCode::Write, std::string("png encode: ") + pi.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, bytes.data(), 0, nullptr)) {
    throw IoError(IoErrorCode::Write, std::string("png encode: ") + pi.message);
  }
  out.resize(size);
  return out;
}

/// Format chosen by extension (.ppm or .png).
inline void write_image(const fs::path& path, const Image& img, bool srgb = false) {
  if (has_extension(path, ".ppm")) {
    write_file_atomic(path, encode_ppm(img, srgb));
  } else if (has_extension(path, ".png")) {
    write_file_atomic(path, encode_png(img, srgb));
  } else {
    throw Error(ErrorKind::InvalidArgument, "unsupported image extension: " + path.string());
  }
}

inline Image decode_ppm(const std::string& buf, const std::string& what) {
  std::istringstream in(buf);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  auto skip = [&] {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
  };
  in >> magic;
  if (magic != "P6") throw IoError(IoErrorCode::BadMagic, what + ": only binary P6 PPM is supported");
  skip();
  in >> w;
  skip();
  in >> h;
  skip();
  in >> maxval;
  in.get();
  if (!in || w < 1 || h < 1 || maxval != 255) throw IoError(IoErrorCode::Parse, what + ": bad PPM header");
  const std::size_t offset = static_cast<std::size_t>(in.tellg());
  const std::size_t n = static_cast<std::size_t>(w) * h * 3;
  if (buf.size() - offset != n) throw IoError(IoErrorCode::CountMismatch, what + ": PPM pixel data size");
  Image img(w, h, 3);
  for (std::size_t i = 0; i < n; ++i) img.data[i] = static_cast<std::uint8_t>(buf[offset + i]) / 255.0;
  return img;
}

/// Reads an 8-bit image into [0, 1]; `channels` is 3 (RGB) or 1 (gray).
inline Image read_image(const fs::path& path, int channels = 3) {
  const std::string buf = read_file(path);
  if (has_extension(path, ".ppm")) {
    Image rgb = decode_ppm(buf, path.string());
    if (channels == 3) return rgb;
    Image g(rgb.width, rgb.height, 1);
    for (std::size_t p = 0; p < g.pixel_count(); ++p) g.data[p] = rgb.data[3 * p];
    return g;
  }
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, buf.data(), buf.size())) {
    throw IoError(IoErrorCode::BadMagic, path.string() + ": " + pi.message);
  }
  pi.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw IoError(IoErrorCode::Parse, path.string() + ": " + pi.message);
  }
  Image img(static_cast<int>(pi.width), static_cast<int>(pi.height), channels);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

/// Any nonzero value selects the pixel.
inline PixelMask read_mask(const fs::path& path) {
  const Image g = read_image(path, 1);
  PixelMask m;
  m.width = g.width;
  m.height = g.height;
  m.flags.resize(g.pixel_count());
  for (std::size_t p = 0; p < g.pixel_count(); ++p) m.flags[p] = g.data[p] > 0.0 ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------
// Sampling masks

inline void save_sampling_mask(const fs::path& path, const SamplingMask& m) {
  nlohmann::json j;
  j["resolution"] = m.resolution;
  j["budget"] = m.budget;
  j["priority_fraction"] = m.priority_fraction;
  j["seed"] = m.seed;
  j["selected"] = m.selected;
  j["warnings"] = m.warnings;
  write_file_atomic(path, j.dump() + "\n");
}

// ---------------------------------------------------------------------------
// Fit option files: one `key = value` per line, `#` starts a comment.

struct FitOptions {
  LossWeights weights;
  FitConfig config;
};

/// Keys: photo, scale, translation, laplacian, scale_lo, scale_hi,
/// scale_floor, translation_max, iterations, seed, log_every,
/// views_per_iteration, checkpoint_every, beta1, beta2, epsilon, and
/// lr.<class> for each parameter class (e.g. lr.vertices).
inline void apply_option(FitOptions& o, const std::string& key, double v) {
  LossWeights& w = o.weights;
  FitConfig& c = o.config;
  if (key == "photo") w.photo = v;
  else if (key == "scale") w.scale = v;
  else if (key == "translation") w.translation = v;
  else if (key == "laplacian") w.laplacian = v;
  else if (key == "scale_lo") w.scale_lo = v;
  else if (key == "scale_hi") w.scale_hi = v;
  else if (key == "scale_floor") w.scale_floor = v;
  else if (key == "translation_max") w.translation_max = v;
  else if (key == "iterations") c.iterations = static_cast<int>(v);
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(v);
  else if (key == "log_every") c.log_every = static_cast<int>(v);
  else if (key == "views_per_iteration") c.views_per_iteration = static_cast<int>(v);
  else if (key == "checkpoint_every") c.checkpoint_every = static_cast<int>(v);
  else if (key == "beta1") c.beta1 = v;
  else if (key == "beta2") c.beta2 = v;
  else if (key == "epsilon") c.epsilon = v;
  else {
    for (ParamClass pc : kAllParamClasses) {
      if (key == std::string("lr.") + to_string(pc)) {
        c.lr(pc) = v;
        return;
      }
    }
    throw IoError(IoErrorCode::Parse, "unknown option '" + key + "'");
  }
}

inline void parse_options(FitOptions& o, const std::string& text, const std::string& what = "options") {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError(IoErrorCode::Parse, what + ":" + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r\"");
      const auto e = s.find_last_not_of(" \t\r\"");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(val, &used);
      if (used != val.size()) throw std::invalid_argument(val);
    } catch (const std::exception&) {
      throw IoError(IoErrorCode::Parse, what + ":" + std::to_string(lineno) + ": '" + val + "' is not a number");
    }
    apply_option(o, key, v);
  }
}

inline void load_options(FitOptions& o, const fs::path& path) { parse_options(o, read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Fit trace

inline std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream out;
  out.precision(10);
  out << "iteration,total,photo,scale,translation,laplacian,psnr\n";
  for (const TraceRow& r : trace) {
    out << r.iteration << ',' << r.loss.total << ',' << r.loss.photo << ',' << r.loss.scale << ','
        << r.loss.translation << ',' << r.loss.laplacian << ',' << r.loss.psnr << '\n';
  }
  return out.str();
}

}  // namespace hybridsplat::io
