#include "anchorcloth/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace anchorcloth {

int SequenceDataset::total_frames() const {
  int n = 0;
  for (const Clip& c : clips) n += c.n_frames();
  return n;
}

// ---- base64 ----

namespace {
constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}
}  // namespace

std::string base64_encode(const unsigned char* data, size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (size_t i = 0; i < n; i += 3) {
    unsigned v = static_cast<unsigned>(data[i]) << 16;
    if (i + 1 < n) v |= static_cast<unsigned>(data[i + 1]) << 8;
    if (i + 2 < n) v |= static_cast<unsigned>(data[i + 2]);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(i + 1 < n ? kB64Alphabet[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < n ? kB64Alphabet[v & 63] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& s) {
  if (s.size() % 4 != 0) throw UsageError("base64: length not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(s.size() / 4 * 3);
  for (size_t i = 0; i < s.size(); i += 4) {
    int pad = 0;
    unsigned v = 0;
    for (int k = 0; k < 4; ++k) {
      char c = s[i + k];
      if (c == '=') {
        // Padding is only legal in the last one or two positions of the input.
        if (i + 4 != s.size() || k < 2) throw UsageError("base64: misplaced padding");
        ++pad;
        v <<= 6;
        continue;
      }
      if (pad > 0) throw UsageError("base64: data after padding");
      int d = b64_value(c);
      if (d < 0) throw UsageError(std::string("base64: invalid character '") + c + "'");
      v = (v << 6) | static_cast<unsigned>(d);
    }
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<unsigned char>(v & 0xff));
  }
  return out;
}

std::string base64_doubles(const std::vector<double>& v) {
  std::vector<unsigned char> bytes(v.size() * 8);
  for (size_t i = 0; i < v.size(); ++i) {
    uint64_t u;
    std::memcpy(&u, &v[i], 8);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>(u >> (8 * b));
  }
  return base64_encode(bytes.data(), bytes.size());
}

std::vector<double> doubles_base64(const std::string& s) {
  std::vector<unsigned char> bytes = base64_decode(s);
  if (bytes.size() % 8 != 0) throw UsageError("base64: payload is not a whole number of doubles");
  std::vector<double> out(bytes.size() / 8);
  for (size_t i = 0; i < out.size(); ++i) {
    uint64_t u = 0;
    for (int b = 0; b < 8; ++b) u |= static_cast<uint64_t>(bytes[i * 8 + b]) << (8 * b);
    std::memcpy(&out[i], &u, 8);
  }
  return out;
}

// ---- json helpers ----

namespace {

json vec3_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 json_vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3 || !j[0].is_number() || !j[1].is_number() ||
      !j[2].is_number())
    throw UsageError(std::string(what) + ": expected an array of 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json mat3_json(const Mat3& m) {
  json a = json::array();
  for (int i = 0; i < 9; ++i) a.push_back(m.m[i]);
  return a;
}

Mat3 json_mat3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 9)
    throw UsageError(std::string(what) + ": expected an array of 9 numbers");
  Mat3 m;
  for (int i = 0; i < 9; ++i) {
    if (!j[i].is_number()) throw UsageError(std::string(what) + ": expected numbers");
    m.m[i] = j[i].get<double>();
  }
  return m;
}

std::vector<double> flatten_points(const std::vector<Vec3>& pts) {
  std::vector<double> out;
  out.reserve(pts.size() * 3);
  for (const Vec3& p : pts) {
    out.push_back(p.x);
    out.push_back(p.y);
    out.push_back(p.z);
  }
  return out;
}

std::vector<Vec3> unflatten_points(const std::vector<double>& v, const char* what) {
  if (v.size() % 3 != 0)
    throw UsageError(std::string(what) + ": payload length is not a multiple of 3");
  std::vector<Vec3> out(v.size() / 3);
  for (size_t i = 0; i < out.size(); ++i) out[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  return out;
}

json frame_json(const MotionFrame& f) {
  json j;
  j["theta"] = f.theta;
  j["t"] = vec3_json(f.t);
  j["r_global"] = mat3_json(f.r_global);
  j["j_root"] = vec3_json(f.j_root);
  if (f.has_gt()) j["gt"] = base64_doubles(flatten_points(f.gt));
  if (f.has_body) {
    j["body_vertices"] = base64_doubles(flatten_points(f.body_vertices));
    j["body_normals"] = base64_doubles(flatten_points(f.body_normals));
    if (f.has_body_transforms) {
      std::vector<double> packed;
      packed.reserve(f.body_vertex_transforms.size() * 12);
      for (const RigidTransform& x : f.body_vertex_transforms) {
        for (int i = 0; i < 9; ++i) packed.push_back(x.r.m[i]);
        packed.push_back(x.t.x);
        packed.push_back(x.t.y);
        packed.push_back(x.t.z);
      }
      j["body_transforms"] = base64_doubles(packed);
    }
  }
  return j;
}

std::string b64_field(const json& j, const char* key, const std::string& where) {
  const json& v = j.at(key);
  if (!v.is_string()) throw UsageError(where + ": field '" + key + "' must be a base64 string");
  return v.get<std::string>();
}

MotionFrame parse_frame(const json& j, const std::string& where) {
  if (!j.is_object()) throw UsageError(where + ": frame record must be an object");
  MotionFrame f;
  if (!j.contains("theta") || !j["theta"].is_array())
    throw UsageError(where + ": missing 'theta' array");
  for (const json& v : j["theta"]) {
    if (!v.is_number()) throw UsageError(where + ": 'theta' must contain numbers");
    f.theta.push_back(v.get<double>());
  }
  if (f.theta.empty()) throw UsageError(where + ": 'theta' is empty");
  if (!j.contains("t") || !j.contains("r_global") || !j.contains("j_root"))
    throw UsageError(where + ": missing 't', 'r_global' or 'j_root'");
  f.t = json_vec3(j["t"], "t");
  f.r_global = json_mat3(j["r_global"], "r_global");
  if (rotation_defect(f.r_global) > 1e-6)
    throw UsageError(where + ": 'r_global' is not a rotation matrix");
  f.j_root = json_vec3(j["j_root"], "j_root");
  if (j.contains("gt")) f.gt = unflatten_points(doubles_base64(b64_field(j, "gt", where)), "gt");
  if (j.contains("body_vertices") != j.contains("body_normals"))
    throw UsageError(where + ": body vertices and normals must come together");
  if (j.contains("body_vertices")) {
    f.body_vertices =
        unflatten_points(doubles_base64(b64_field(j, "body_vertices", where)), "body_vertices");
    f.body_normals =
        unflatten_points(doubles_base64(b64_field(j, "body_normals", where)), "body_normals");
    if (f.body_vertices.empty() || f.body_vertices.size() != f.body_normals.size())
      throw UsageError(where + ": body vertex/normal counts disagree");
    for (const Vec3& n : f.body_normals)
      if (std::abs(norm(n) - 1.0) > 1e-3)
        throw UsageError(where + ": body normals must be unit length");
    f.has_body = true;
    if (j.contains("body_transforms")) {
      std::vector<double> packed = doubles_base64(b64_field(j, "body_transforms", where));
      if (packed.size() != f.body_vertices.size() * 12)
        throw UsageError(where + ": body transform payload has the wrong size");
      f.body_vertex_transforms.resize(f.body_vertices.size());
      for (size_t i = 0; i < f.body_vertices.size(); ++i) {
        RigidTransform& x = f.body_vertex_transforms[i];
        for (int k = 0; k < 9; ++k) x.r.m[k] = packed[12 * i + k];
        x.t = {packed[12 * i + 9], packed[12 * i + 10], packed[12 * i + 11]};
        if (rotation_defect(x.r) > 1e-6)
          throw UsageError(where + ": body transform rotation is not orthonormal");
      }
      f.has_body_transforms = true;
    }
  } else if (j.contains("body_transforms")) {
    throw UsageError(where + ": body transforms require body vertices");
  }
  return f;
}

}  // namespace

// ---- dataset io ----

void save_clip(const Clip& clip, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path);
  for (const MotionFrame& f : clip.frames) out << frame_json(f).dump() << "\n";
  if (!out) throw UsageError("failed while writing " + path);
}

Clip load_clip(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path);
  Clip clip;
  clip.name = fs::path(path).stem().string();
  std::string line;
  int line_no = 0;
  size_t theta_dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string where = path + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw UsageError(where + ": invalid JSON (" + e.what() + ")");
    }
    MotionFrame f = parse_frame(j, where);
    if (clip.frames.empty())
      theta_dim = f.theta.size();
    else if (f.theta.size() != theta_dim)
      throw UsageError(where + ": 'theta' length changed mid-clip");
    clip.frames.push_back(std::move(f));
  }
  if (clip.frames.empty()) throw UsageError(path + ": clip has no frames");
  return clip;
}

void save_dataset(const SequenceDataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "clips");
  save_obj(ds.template_mesh, (fs::path(dir) / "template.obj").string());
  json manifest;
  manifest["version"] = "1";
  manifest["template_obj"] = "template.obj";
  manifest["fps"] = ds.fps;
  if (!ds.body_rest_vertices.empty()) {
    Mesh body;
    body.vertices = ds.body_rest_vertices;
    save_obj(body, (fs::path(dir) / "body_rest.obj").string());
    manifest["body_rest_obj"] = "body_rest.obj";
  }
  json clips = json::array();
  for (const Clip& c : ds.clips) {
    std::string rel = "clips/" + c.name + ".jsonl";
    save_clip(c, (fs::path(dir) / rel).string());
    clips.push_back(json{{"name", c.name}, {"file", rel}});
  }
  manifest["clips"] = clips;
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!out) throw UsageError("cannot write manifest in " + dir);
  out << manifest.dump(1) << "\n";
}

SequenceDataset load_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + manifest_path);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw UsageError(manifest_path + ": invalid JSON (" + std::string(e.what()) + ")");
  }
  if (!manifest.is_object() || !manifest.contains("version") ||
      manifest["version"] != json("1"))
    throw UsageError(manifest_path + ": expected a manifest with version \"1\"");
  if (!manifest.contains("template_obj") || !manifest["template_obj"].is_string())
    throw UsageError(manifest_path + ": missing 'template_obj'");
  if (!manifest.contains("fps") || !manifest["fps"].is_number() ||
      manifest["fps"].get<double>() <= 0.0)
    throw UsageError(manifest_path + ": 'fps' must be a positive number");
  if (!manifest.contains("clips") || !manifest["clips"].is_array())
    throw UsageError(manifest_path + ": missing 'clips' array");

  fs::path base = fs::path(manifest_path).parent_path();
  SequenceDataset ds;
  ds.fps = manifest["fps"].get<double>();
  ds.template_mesh = load_obj((base / manifest["template_obj"].get<std::string>()).string());
  if (manifest.contains("body_rest_obj")) {
    if (!manifest["body_rest_obj"].is_string())
      throw UsageError(manifest_path + ": 'body_rest_obj' must be a path string");
    Mesh body = load_obj((base / manifest["body_rest_obj"].get<std::string>()).string());
    ds.body_rest_vertices = body.vertices;
  }
  int n_template = ds.template_mesh.n_vertices();
  for (const json& entry : manifest["clips"]) {
    std::string file, name;
    if (entry.is_string()) {
      file = entry.get<std::string>();
    } else if (entry.is_object() && entry.contains("file") && entry["file"].is_string()) {
      file = entry["file"].get<std::string>();
      if (entry.contains("name") && entry["name"].is_string())
        name = entry["name"].get<std::string>();
    } else {
      throw UsageError(manifest_path + ": clip entries need a 'file' path");
    }
    Clip clip = load_clip((base / file).string());
    if (!name.empty()) clip.name = name;
    for (size_t i = 0; i < clip.frames.size(); ++i) {
      const MotionFrame& f = clip.frames[i];
      if (f.has_gt() && static_cast<int>(f.gt.size()) != n_template)
        throw UsageError(file + ": frame " + std::to_string(i + 1) + " has " +
                         std::to_string(f.gt.size()) + " garment vertices, template has " +
                         std::to_string(n_template));
      if (f.has_body && !ds.body_rest_vertices.empty() &&
          f.body_vertices.size() != ds.body_rest_vertices.size())
        throw UsageError(file + ": frame " + std::to_string(i + 1) +
                         " body vertex count differs from the rest body");
    }
    ds.clips.push_back(std::move(clip));
  }
  if (ds.clips.empty()) throw UsageError(manifest_path + ": dataset has no clips");
  return ds;
}

std::pair<SequenceDataset, SequenceDataset> split_dataset(const SequenceDataset& ds,
                                                          int n_test, uint64_t seed) {
  int n = static_cast<int>(ds.clips.size());
  if (n_test < 0 || n_test > n)
    throw UsageError("split: test clip count must be between 0 and the clip count");
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng(seed).split(0x5917);
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
  std::vector<char> is_test(n, 0);
  for (int i = 0; i < n_test; ++i) is_test[order[i]] = 1;
  SequenceDataset train, test;
  train.template_mesh = test.template_mesh = ds.template_mesh;
  train.body_rest_vertices = test.body_rest_vertices = ds.body_rest_vertices;
  train.fps = test.fps = ds.fps;
  for (int i = 0; i < n; ++i) (is_test[i] ? test : train).clips.push_back(ds.clips[i]);
  return {std::move(train), std::move(test)};
}

// ---- simulator ----

void ClothSim::substep(double dt, const std::vector<Vec3>& pin_positions,
                       const CapsuleObstacle* obstacle) {
  if (dt <= 0.0) throw std::invalid_argument("substep: dt must be positive");
  if (pin_positions.size() != pins.size())
    throw std::invalid_argument("substep: pin position count mismatch");
  int n = static_cast<int>(pos.size());
  std::vector<Vec3> force(n);
  for (int i = 0; i < n; ++i)
    force[i] = gravity * particle_mass - vel[i] * (air_drag * particle_mass);
  for (const Spring& s : springs) {
    Vec3 d = pos[s.j] - pos[s.i];
    double len = norm(d);
    if (len < 1e-12) continue;  // coincident endpoints exert no force
    Vec3 dir = d / len;
    Vec3 f = dir * (s.k * (len - s.rest));
    // Damping acts along the spring on the relative velocity, so the pair
    // exchanges momentum without creating any.
    f += dir * (spring_damping * dot(vel[s.j] - vel[s.i], dir));
    force[s.i] += f;
    force[s.j] -= f;
  }
  std::vector<char> pinned(n, 0);
  for (int p : pins) pinned[p] = 1;
  for (int i = 0; i < n; ++i) {
    if (pinned[i]) continue;
    vel[i] += force[i] * (dt / particle_mass);
    pos[i] += vel[i] * dt;
  }
  for (size_t k = 0; k < pins.size(); ++k) {
    int i = pins[k];
    vel[i] = (pin_positions[k] - pos[i]) / dt;
    pos[i] = pin_positions[k];
  }
  if (obstacle != nullptr && obstacle->radius > 0.0) {
    Vec3 ab = obstacle->b - obstacle->a;
    double ab2 = std::max(norm2(ab), 1e-24);
    for (int i = 0; i < n; ++i) {
      if (pinned[i]) continue;
      double s = std::clamp(dot(pos[i] - obstacle->a, ab) / ab2, 0.0, 1.0);
      Vec3 closest = obstacle->a + ab * s;
      Vec3 u = pos[i] - closest;
      double len = norm(u);
      if (len >= obstacle->radius || len < 1e-12) continue;
      Vec3 out_dir = u / len;
      pos[i] = closest + out_dir * obstacle->radius;
      double vn = dot(vel[i], out_dir);
      if (vn < 0.0) vel[i] -= out_dir * vn;  // keep only the sliding component
    }
  }
  double max_sq = max_speed * max_speed;
  for (int i = 0; i < n; ++i)
    if (!(norm2(vel[i]) <= max_sq))
      throw std::runtime_error(
          "cloth simulation became unstable (particle speed exceeded the limit); lower the "
          "stiffness or increase substeps");
}

Vec3 ClothSim::momentum() const {
  Vec3 p;
  for (const Vec3& v : vel) p += v * particle_mass;
  return p;
}

// ---- synthesizer ----

namespace {

Mat3 axis_angle_rotation(const Vec3& w) {
  double angle = norm(w);
  if (angle < 1e-12) return Mat3::identity();
  Vec3 a = w / angle;
  double c = std::cos(angle), s = std::sin(angle);
  Mat3 r;
  r(0, 0) = c + a.x * a.x * (1 - c);
  r(0, 1) = a.x * a.y * (1 - c) - a.z * s;
  r(0, 2) = a.x * a.z * (1 - c) + a.y * s;
  r(1, 0) = a.y * a.x * (1 - c) + a.z * s;
  r(1, 1) = c + a.y * a.y * (1 - c);
  r(1, 2) = a.y * a.z * (1 - c) - a.x * s;
  r(2, 0) = a.z * a.x * (1 - c) - a.y * s;
  r(2, 1) = a.z * a.y * (1 - c) + a.x * s;
  r(2, 2) = c + a.z * a.z * (1 - c);
  return r;
}

// Scripted bar motion: a single-axis rotation and a sinusoidal translation,
// both zero at t = 0 so clips start from the settled rest state.
struct BarScript {
  Vec3 rot_axis;  // unit, or zero for no rotation
  double rot_amp = 0.0, rot_freq = 0.0;
  Vec3 trans_amp, trans_freq;

  Vec3 rotation_vector(double t) const {
    return rot_axis * (rot_amp * std::sin(2.0 * M_PI * rot_freq * t));
  }
  Vec3 rotation_rate(double t) const {
    return rot_axis * (rot_amp * 2.0 * M_PI * rot_freq * std::cos(2.0 * M_PI * rot_freq * t));
  }
  Vec3 translation(double t) const {
    return {trans_amp.x * std::sin(2.0 * M_PI * trans_freq.x * t),
            trans_amp.y * std::sin(2.0 * M_PI * trans_freq.y * t),
            trans_amp.z * std::sin(2.0 * M_PI * trans_freq.z * t)};
  }
};

BarScript make_script(int kind, Rng* rng) {
  BarScript s;
  switch (kind) {
    case 0:  // swing: rock around the bar axis
      s.rot_axis = {1, 0, 0};
      s.rot_amp = rng->uniform(0.35, 0.7);
      s.rot_freq = rng->uniform(0.3, 0.6);
      break;
    case 1:  // slide: translate the bar around
      s.trans_amp = {rng->uniform(0.06, 0.12), 0.0, rng->uniform(0.04, 0.1)};
      s.trans_freq = {rng->uniform(0.3, 0.6), 0.0, rng->uniform(0.4, 0.8)};
      break;
    case 2:  // spin: twist around the vertical through the bar center
      s.rot_axis = {0, 1, 0};
      s.rot_amp = rng->uniform(0.3, 0.6);
      s.rot_freq = rng->uniform(0.3, 0.6);
      break;
    default:  // mixed: swing and slide together
      s.rot_axis = {1, 0, 0};
      s.rot_amp = rng->uniform(0.25, 0.5);
      s.rot_freq = rng->uniform(0.3, 0.5);
      s.trans_amp = {rng->uniform(0.04, 0.08), 0.0, rng->uniform(0.03, 0.06)};
      s.trans_freq = {rng->uniform(0.3, 0.6), 0.0, rng->uniform(0.4, 0.7)};
      break;
  }
  return s;
}

const char* script_name(int kind) {
  switch (kind) {
    case 0: return "swing";
    case 1: return "slide";
    case 2: return "spin";
    default: return "mixed";
  }
}

// Capsule sample points with outward unit normals: a cylindrical tube plus
// two hemispherical caps around the segment a-b.
void capsule_points(const Vec3& a, const Vec3& b, double radius, std::vector<Vec3>* points,
                    std::vector<Vec3>* normals) {
  const int kSegments = 8, kAxial = 6, kCapRings = 2;
  Vec3 axis = normalized(b - a, {1, 0, 0});
  Vec3 side = std::abs(axis.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  Vec3 e1 = normalized(cross(axis, side));
  Vec3 e2 = cross(axis, e1);
  auto radial = [&](double phi) { return e1 * std::cos(phi) + e2 * std::sin(phi); };
  points->clear();
  normals->clear();
  for (int i = 0; i <= kAxial; ++i) {
    Vec3 center = a + (b - a) * (static_cast<double>(i) / kAxial);
    for (int j = 0; j < kSegments; ++j) {
      Vec3 n = radial(2.0 * M_PI * j / kSegments);
      points->push_back(center + n * radius);
      normals->push_back(n);
    }
  }
  for (int cap = 0; cap < 2; ++cap) {
    Vec3 center = cap == 0 ? a : b;
    Vec3 out = cap == 0 ? -axis : axis;
    for (int r = 1; r <= kCapRings; ++r) {
      double psi = 0.5 * M_PI * r / (kCapRings + 1);
      for (int j = 0; j < kSegments; ++j) {
        Vec3 n = radial(2.0 * M_PI * j / kSegments) * std::cos(psi) + out * std::sin(psi);
        points->push_back(center + n * radius);
        normals->push_back(n);
      }
    }
    points->push_back(center + out * radius);
    normals->push_back(out);
  }
}

}  // namespace

SequenceDataset synth_cloth(const SynthConfig& config) {
  if (config.grid < 8) throw UsageError("synth: grid must be at least 8");
  if (config.n_clips < 1 || config.frames_per_clip < 1)
    throw UsageError("synth: need at least one clip and one frame");
  if (config.substeps < 1 || config.fps <= 0.0) throw UsageError("synth: bad time stepping");
  int forced_kind = -1;
  if (config.script != "cycle") {
    for (int k = 0; k < 4; ++k)
      if (config.script == script_name(k)) forced_kind = k;
    if (forced_kind < 0)
      throw UsageError("synth: unknown script '" + config.script +
                       "' (expected cycle, swing, slide, spin or mixed)");
  }

  int nx = config.grid, ny = config.grid;
  double dx = config.width / (nx - 1), dz = config.height / (ny - 1);
  // The template sticks out horizontally: the pinned row (iy = ny-1) runs
  // along the bar at y = 0, z = 0 and the sheet extends toward +z. Face
  // normals point up (+y), so once the sheet drapes down they face +z, away
  // from the bar. Draping moves every free vertex far from the template,
  // which is exactly the deformation the model is supposed to learn.
  Mesh tmpl = grid_mesh(nx, ny, [&](int ix, int iy) {
    return Vec3{ix * dx, 0.0, ((ny - 1) - iy) * dz};
  });

  ClothSim sim;
  sim.pos = tmpl.vertices;
  sim.vel.assign(tmpl.n_vertices(), Vec3{});
  sim.particle_mass = config.mass_total / tmpl.n_vertices();
  sim.spring_damping = config.spring_damping;
  sim.max_speed = config.max_speed;
  auto idx = [nx](int ix, int iy) { return iy * nx + ix; };
  auto add_spring = [&](int i, int j, double k) {
    sim.springs.push_back({i, j, dist(tmpl.vertices[i], tmpl.vertices[j]), k});
  };
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      if (ix + 1 < nx) add_spring(idx(ix, iy), idx(ix + 1, iy), config.k_struct);
      if (iy + 1 < ny) add_spring(idx(ix, iy), idx(ix, iy + 1), config.k_struct);
      if (ix + 1 < nx && iy + 1 < ny) {
        add_spring(idx(ix, iy), idx(ix + 1, iy + 1), config.k_shear);
        add_spring(idx(ix + 1, iy), idx(ix, iy + 1), config.k_shear);
      }
      if (ix + 2 < nx) add_spring(idx(ix, iy), idx(ix + 2, iy), config.k_bend);
      if (iy + 2 < ny) add_spring(idx(ix, iy), idx(ix, iy + 2), config.k_bend);
    }
  for (int ix = 0; ix < nx; ++ix) sim.pins.push_back(idx(ix, ny - 1));

  // Bar behind the cloth plane, axis along x through the pin row.
  double bar_z = -(config.capsule_radius + config.pin_gap);
  Vec3 bar_a{-0.05, 0.0, bar_z}, bar_b{config.width + 0.05, 0.0, bar_z};
  Vec3 bar_center = (bar_a + bar_b) * 0.5;
  std::vector<Vec3> body_rest, body_rest_normals;
  capsule_points(bar_a, bar_b, config.capsule_radius, &body_rest, &body_rest_normals);

  std::vector<Vec3> pin_rest(sim.pins.size());
  for (size_t k = 0; k < sim.pins.size(); ++k) pin_rest[k] = tmpl.vertices[sim.pins[k]];

  double dt = 1.0 / (config.fps * config.substeps);
  ClothSim::CapsuleObstacle obstacle{bar_a, bar_b, config.capsule_radius};

  // Let the sheet sag into equilibrium with the bar at rest and extra drag.
  sim.air_drag = config.settle_drag;
  int settle_steps = static_cast<int>(std::ceil(config.settle_seconds / dt));
  for (int s = 0; s < settle_steps; ++s) sim.substep(dt, pin_rest, &obstacle);
  std::vector<Vec3> settled_pos = sim.pos;

  SequenceDataset ds;
  ds.template_mesh = tmpl;
  ds.body_rest_vertices = body_rest;
  ds.fps = config.fps;

  Rng root(config.seed);
  Rng script_rng = root.split(0xc11f);
  sim.air_drag = config.air_drag;
  for (int c = 0; c < config.n_clips; ++c) {
    int kind = forced_kind >= 0 ? forced_kind : c % 4;
    Rng clip_rng = script_rng.split(static_cast<uint64_t>(c) + 1);
    BarScript script = make_script(kind, &clip_rng);

    sim.pos = settled_pos;
    sim.vel.assign(sim.pos.size(), Vec3{});
    Clip clip;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%02d", script_name(kind), c);
    clip.name = buf;
    for (int fidx = 0; fidx < config.frames_per_clip; ++fidx) {
      double t_frame = fidx / config.fps;
      Vec3 w = script.rotation_vector(t_frame);
      Mat3 r = axis_angle_rotation(w);
      Vec3 center = bar_center + script.translation(t_frame);

      MotionFrame frame;
      Vec3 rate = script.rotation_rate(t_frame);
      frame.theta = {w.x, w.y, w.z, rate.x, rate.y, rate.z};
      frame.t = center - bar_center;
      frame.r_global = r;
      frame.j_root = center;
      frame.has_body = true;
      frame.has_body_transforms = true;
      RigidTransform bar_xform{r, center - r * bar_center};
      frame.body_vertices.resize(body_rest.size());
      frame.body_normals.resize(body_rest.size());
      frame.body_vertex_transforms.assign(body_rest.size(), bar_xform);
      for (size_t i = 0; i < body_rest.size(); ++i) {
        frame.body_vertices[i] = bar_xform.apply(body_rest[i]);
        frame.body_normals[i] = r * body_rest_normals[i];
      }
      frame.gt = sim.pos;
      clip.frames.push_back(std::move(frame));

      if (fidx + 1 == config.frames_per_clip) break;
      for (int s = 1; s <= config.substeps; ++s) {
        double t_sub = t_frame + s * dt;
        Vec3 w_sub = script.rotation_vector(t_sub);
        Mat3 r_sub = axis_angle_rotation(w_sub);
        Vec3 center_sub = bar_center + script.translation(t_sub);
        std::vector<Vec3> pin_target(pin_rest.size());
        for (size_t k = 0; k < pin_rest.size(); ++k)
          pin_target[k] = r_sub * (pin_rest[k] - bar_center) + center_sub;
        ClothSim::CapsuleObstacle posed{r_sub * (bar_a - bar_center) + center_sub,
                                        r_sub * (bar_b - bar_center) + center_sub,
                                        config.capsule_radius};
        sim.substep(dt, pin_target, &posed);
      }
    }
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

}  // namespace anchorcloth
