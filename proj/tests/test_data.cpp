#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "anchorcloth/data.hpp"
#include "test_util.hpp"

using namespace anchorcloth;

namespace {

bool same_bits(double a, double b) {
  uint64_t ua, ub;
  std::memcpy(&ua, &a, 8);
  std::memcpy(&ub, &b, 8);
  return ua == ub;
}

double point_segment_dist(const Vec3& p, const Vec3& a, const Vec3& b) {
  Vec3 ab = b - a;
  double s = std::clamp(dot(p - a, ab) / std::max(norm2(ab), 1e-24), 0.0, 1.0);
  return dist(p, a + ab * s);
}

// A tiny hand-built dataset exercising every optional field.
SequenceDataset tiny_dataset() {
  SequenceDataset ds;
  ds.template_mesh = testutil::flat_grid(3, 3, 0.1);
  ds.fps = 24.0;
  ds.body_rest_vertices = {{0, -0.5, 0}, {0.3, -0.5, 0}};
  Rng rng(41);
  for (int c = 0; c < 2; ++c) {
    Clip clip;
    clip.name = c == 0 ? "wiggle" : "drop";
    for (int f = 0; f < 3; ++f) {
      MotionFrame fr;
      fr.theta = {rng.uniform(-1, 1), rng.uniform(-1, 1), 0.25 * f, -1.0 / 3.0};
      fr.t = Vec3{0.01 * f, 0, rng.uniform(-1, 1)};
      fr.r_global = testutil::random_rotation(&rng);
      fr.j_root = Vec3{0, rng.uniform(-1, 1), 0.1};
      fr.has_body = true;
      fr.body_vertices = {{0, -0.5 + 0.01 * f, 0}, {0.3, -0.5, 0.02 * f}};
      fr.body_normals = {{0, 1, 0}, {0, 0, 1}};
      fr.has_body_transforms = true;
      RigidTransform xf;
      xf.r = testutil::random_rotation(&rng);
      xf.t = Vec3{0.1, -0.2, 0.05 * f};
      fr.body_vertex_transforms = {xf, xf};
      if (c == 0 || f > 0) {  // one motion-only frame in clip "drop"
        fr.gt = ds.template_mesh.vertices;
        for (Vec3& v : fr.gt) v += Vec3{rng.uniform(-0.1, 0.1), -0.05 * f, 0};
      }
      clip.frames.push_back(std::move(fr));
    }
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

void check_frames_equal(const MotionFrame& a, const MotionFrame& b) {
  REQUIRE(a.theta.size() == b.theta.size());
  for (size_t i = 0; i < a.theta.size(); ++i) CHECK(a.theta[i] == b.theta[i]);
  for (int i = 0; i < 3; ++i) {
    CHECK(same_bits(a.t[i], b.t[i]));
    CHECK(same_bits(a.j_root[i], b.j_root[i]));
  }
  for (int i = 0; i < 9; ++i) CHECK(a.r_global.m[i] == b.r_global.m[i]);
  CHECK(a.has_body == b.has_body);
  CHECK(a.has_body_transforms == b.has_body_transforms);
  CHECK(a.has_gt() == b.has_gt());
  REQUIRE(a.body_vertices.size() == b.body_vertices.size());
  for (size_t i = 0; i < a.body_vertices.size(); ++i) {
    CHECK(same_bits(a.body_vertices[i].x, b.body_vertices[i].x));
    CHECK(same_bits(a.body_normals[i].z, b.body_normals[i].z));
  }
  REQUIRE(a.body_vertex_transforms.size() == b.body_vertex_transforms.size());
  for (size_t i = 0; i < a.body_vertex_transforms.size(); ++i) {
    for (int k = 0; k < 9; ++k)
      CHECK(a.body_vertex_transforms[i].r.m[k] == b.body_vertex_transforms[i].r.m[k]);
    CHECK(same_bits(a.body_vertex_transforms[i].t.y, b.body_vertex_transforms[i].t.y));
  }
  REQUIRE(a.gt.size() == b.gt.size());
  for (size_t i = 0; i < a.gt.size(); ++i) {
    CHECK(same_bits(a.gt[i].x, b.gt[i].x));
    CHECK(same_bits(a.gt[i].y, b.gt[i].y));
    CHECK(same_bits(a.gt[i].z, b.gt[i].z));
  }
}

}  // namespace

TEST_CASE("base64 matches the reference vectors and round-trips doubles") {
  auto enc = [](const std::string& s) {
    return base64_encode(reinterpret_cast<const unsigned char*>(s.data()), s.size());
  };
  CHECK(enc("") == "");
  CHECK(enc("f") == "Zg==");
  CHECK(enc("fo") == "Zm8=");
  CHECK(enc("foo") == "Zm9v");
  CHECK(enc("foob") == "Zm9vYg==");
  CHECK(enc("fooba") == "Zm9vYmE=");
  CHECK(enc("foobar") == "Zm9vYmFy");

  std::vector<unsigned char> back = base64_decode("Zm9vYmFy");
  CHECK(std::string(back.begin(), back.end()) == "foobar");
  CHECK(base64_decode("").empty());

  std::vector<double> v = {0.0,   -0.0,        1.5,           -2.25e-300,
                           1e308, 3.5e-320,    -1.0 / 3.0,    std::nan("")};
  std::vector<double> w = doubles_base64(base64_doubles(v));
  REQUIRE(w.size() == v.size());
  for (size_t i = 0; i < v.size(); ++i) CHECK(same_bits(v[i], w[i]));
}

TEST_CASE("base64 rejects malformed input") {
  CHECK_THROWS_AS(base64_decode("abc"), UsageError);      // not a multiple of 4
  CHECK_THROWS_AS(base64_decode("ab!c"), UsageError);     // bad alphabet
  CHECK_THROWS_AS(base64_decode("=abc"), UsageError);     // padding up front
  CHECK_THROWS_AS(base64_decode("a==c"), UsageError);     // data after padding
  CHECK_THROWS_AS(base64_decode("Zg==Zg=="), UsageError); // second block after padding
  CHECK_THROWS_AS(doubles_base64("Zm9v"), UsageError);    // 3 bytes is not a double
}

TEST_CASE("dataset survives a save/load round trip") {
  SequenceDataset ds = tiny_dataset();
  testutil::TempDir dir("dataset");
  save_dataset(ds, dir.path().string());
  SequenceDataset back = load_dataset(dir.file("manifest.json"));

  CHECK(back.fps == ds.fps);
  REQUIRE(back.template_mesh.n_vertices() == ds.template_mesh.n_vertices());
  for (int i = 0; i < ds.template_mesh.n_vertices(); ++i)
    CHECK(dist(back.template_mesh.vertices[i], ds.template_mesh.vertices[i]) < 1e-6);
  CHECK(back.template_mesh.faces == ds.template_mesh.faces);
  REQUIRE(back.body_rest_vertices.size() == ds.body_rest_vertices.size());
  for (size_t i = 0; i < ds.body_rest_vertices.size(); ++i)
    CHECK(dist(back.body_rest_vertices[i], ds.body_rest_vertices[i]) < 1e-6);

  REQUIRE(back.clips.size() == ds.clips.size());
  CHECK(back.total_frames() == ds.total_frames());
  for (size_t c = 0; c < ds.clips.size(); ++c) {
    CHECK(back.clips[c].name == ds.clips[c].name);
    REQUIRE(back.clips[c].n_frames() == ds.clips[c].n_frames());
    for (int f = 0; f < ds.clips[c].n_frames(); ++f)
      check_frames_equal(back.clips[c].frames[f], ds.clips[c].frames[f]);
  }

  // saving the loaded dataset again reproduces every file byte for byte
  testutil::TempDir dir2("dataset-resave");
  save_dataset(back, dir2.path().string());
  for (const char* rel : {"manifest.json", "template.obj", "body_rest.obj",
                          "clips/wiggle.jsonl", "clips/drop.jsonl"})
    CHECK(testutil::read_file_bytes(dir2.file(rel)) == testutil::read_file_bytes(dir.file(rel)));
}

TEST_CASE("clip files round trip standalone") {
  SequenceDataset ds = tiny_dataset();
  testutil::TempDir dir("clip");
  save_clip(ds.clips[0], dir.file("wiggle.jsonl"));
  Clip back = load_clip(dir.file("wiggle.jsonl"));
  CHECK(back.name == "wiggle");  // stem of the file
  REQUIRE(back.n_frames() == 3);
  for (int f = 0; f < 3; ++f) check_frames_equal(back.frames[f], ds.clips[0].frames[f]);

  CHECK_THROWS_AS(load_clip(dir.file("missing.jsonl")), UsageError);
}

TEST_CASE("loader rejects malformed datasets") {
  SequenceDataset ds = tiny_dataset();
  testutil::TempDir dir("bad");
  save_dataset(ds, dir.path().string());

  SUBCASE("wrong manifest version") {
    nlohmann::json m;
    {
      std::ifstream in(dir.file("manifest.json"));
      in >> m;
    }
    m["version"] = "2";
    std::ofstream(dir.file("manifest.json")) << m.dump(1);
    CHECK_THROWS_AS(load_dataset(dir.file("manifest.json")), UsageError);
  }
  SUBCASE("clip entry without a file") {
    nlohmann::json m;
    {
      std::ifstream in(dir.file("manifest.json"));
      in >> m;
    }
    m["clips"].push_back(nlohmann::json{{"name", "fileless"}});
    std::ofstream(dir.file("manifest.json")) << m.dump(1);
    CHECK_THROWS_AS(load_dataset(dir.file("manifest.json")), UsageError);
  }
  SUBCASE("garbage line in a clip") {
    std::ofstream(dir.file("clips/wiggle.jsonl"), std::ios::app) << "not json\n";
    CHECK_THROWS_WITH_AS(load_dataset(dir.file("manifest.json")),
                         doctest::Contains("invalid JSON"), UsageError);
  }
  SUBCASE("theta length changes mid-clip") {
    SequenceDataset bad = tiny_dataset();
    bad.clips[0].frames[1].theta.push_back(0.5);
    save_dataset(bad, dir.path().string());
    CHECK_THROWS_WITH_AS(load_dataset(dir.file("manifest.json")),
                         doctest::Contains("theta"), UsageError);
  }
  SUBCASE("body vertex and normal counts disagree") {
    SequenceDataset bad = tiny_dataset();
    bad.clips[1].frames[0].body_normals.pop_back();
    save_dataset(bad, dir.path().string());
    CHECK_THROWS_AS(load_dataset(dir.file("manifest.json")), UsageError);
  }
  SUBCASE("body normals must be unit") {
    SequenceDataset bad = tiny_dataset();
    bad.clips[0].frames[2].body_normals[0] = Vec3{0, 2, 0};
    save_dataset(bad, dir.path().string());
    CHECK_THROWS_AS(load_dataset(dir.file("manifest.json")), UsageError);
  }
  SUBCASE("r_global must be a rotation") {
    SequenceDataset bad = tiny_dataset();
    bad.clips[0].frames[0].r_global = Mat3::identity() * 2.0;
    save_dataset(bad, dir.path().string());
    CHECK_THROWS_WITH_AS(load_dataset(dir.file("manifest.json")),
                         doctest::Contains("rotation"), UsageError);
  }
  SUBCASE("garment vertex count must match the template") {
    SequenceDataset bad = tiny_dataset();
    bad.clips[0].frames[1].gt.pop_back();
    save_dataset(bad, dir.path().string());
    CHECK_THROWS_WITH_AS(load_dataset(dir.file("manifest.json")),
                         doctest::Contains("garment"), UsageError);
  }
  SUBCASE("missing manifest") {
    CHECK_THROWS_AS(load_dataset(dir.file("nope/manifest.json")), UsageError);
  }
}

TEST_CASE("clip split is seeded, disjoint and order preserving") {
  SequenceDataset ds = tiny_dataset();
  ds.clips.clear();
  for (int i = 0; i < 7; ++i) {
    Clip c;
    c.name = "clip" + std::to_string(i);
    MotionFrame f;
    f.theta = {static_cast<double>(i)};
    c.frames.push_back(f);
    ds.clips.push_back(c);
  }

  auto [train, test] = split_dataset(ds, 3, 11);
  CHECK(train.clips.size() == 4);
  CHECK(test.clips.size() == 3);
  CHECK(train.fps == ds.fps);
  CHECK(test.body_rest_vertices.size() == ds.body_rest_vertices.size());
  CHECK(train.template_mesh.faces == ds.template_mesh.faces);

  auto index_of = [&](const std::string& name) {
    for (size_t i = 0; i < ds.clips.size(); ++i)
      if (ds.clips[i].name == name) return static_cast<int>(i);
    return -1;
  };
  std::vector<char> seen(ds.clips.size(), 0);
  for (const SequenceDataset* side : {&train, &test}) {
    int prev = -1;
    for (const Clip& c : side->clips) {
      int i = index_of(c.name);
      REQUIRE(i >= 0);
      CHECK(i > prev);  // original order kept within each side
      CHECK(!seen[i]);  // and the sides are disjoint
      seen[i] = 1;
      prev = i;
    }
  }
  for (char s : seen) CHECK(s == 1);

  // same seed, same split; n_test covers the edges
  auto [train2, test2] = split_dataset(ds, 3, 11);
  for (size_t i = 0; i < test.clips.size(); ++i) CHECK(test2.clips[i].name == test.clips[i].name);
  auto [all_train, none_test] = split_dataset(ds, 0, 5);
  CHECK(all_train.clips.size() == 7);
  CHECK(none_test.clips.empty());
  CHECK_THROWS_AS(split_dataset(ds, 8, 0), UsageError);
  CHECK_THROWS_AS(split_dataset(ds, -1, 0), UsageError);
}

TEST_CASE("free spring systems conserve momentum") {
  Rng rng(77);
  ClothSim sim;
  sim.pos = testutil::random_points(&rng, 5, 0.3);
  for (int i = 0; i < 5; ++i)
    sim.vel.push_back(Vec3{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) {
      double rest = dist(sim.pos[i], sim.pos[j]) * rng.uniform(0.9, 1.1);
      sim.springs.push_back({i, j, rest, 5.0});
    }
  sim.particle_mass = 0.01;
  sim.spring_damping = 0.2;  // internal damping exchanges momentum, never creates it
  sim.air_drag = 0.0;
  sim.gravity = Vec3{};
  Vec3 p0 = sim.momentum();
  CHECK(norm(p0) > 1e-3);  // the check is vacuous from rest
  double dt = 1.0 / 240.0;
  for (int s = 0; s < 500; ++s) {
    sim.substep(dt, {});
    CHECK(dist(sim.momentum(), p0) < 1e-9);
  }

  // with gravity back on, momentum grows by exactly M g dt per step
  sim.gravity = Vec3{0, -9.81, 0};
  Vec3 before = sim.momentum();
  for (int s = 0; s < 200; ++s) sim.substep(dt, {});
  Vec3 expected = before + sim.gravity * (5 * sim.particle_mass * 200 * dt);
  CHECK(dist(sim.momentum(), expected) < 1e-9);
}

TEST_CASE("hanging particle settles at the textbook extension") {
  ClothSim sim;
  sim.pos = {{0, 0, 0}, {0, -0.1, 0}};
  sim.vel = {{}, {}};
  sim.springs.push_back({0, 1, 0.1, 50.0});
  sim.particle_mass = 0.01;
  sim.spring_damping = 0.3;
  sim.air_drag = 8.0;
  sim.pins = {0};
  double dt = 1.0 / 240.0;
  for (int s = 0; s < 6000; ++s) sim.substep(dt, {{0, 0, 0}});

  double extension = -0.1 - sim.pos[1].y;
  CHECK(extension == doctest::Approx(0.01 * 9.81 / 50.0).epsilon(1e-4));
  CHECK(norm(sim.vel[1]) < 1e-6);
  CHECK(sim.pos[1].x == 0.0);
  CHECK(sim.pos[1].z == 0.0);
  CHECK(sim.pos[0].y == 0.0);  // the pin never moves

  CHECK_THROWS_AS(sim.substep(0.0, {{0, 0, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(sim.substep(dt, {}), std::invalid_argument);
}

TEST_CASE("capsule obstacle projects particles to its surface") {
  ClothSim::CapsuleObstacle cap{{0, 0, 0}, {1, 0, 0}, 0.1};
  ClothSim sim;
  sim.pos = {{0.5, 0.02, 0.0},   // inside the tube
             {1.05, 0.0, 0.0},   // inside the right cap
             {0.5, 0.5, 0.0},    // far away
             {0.5, 0.0, 0.0}};   // exactly on the axis: no direction, left alone
  sim.vel = {{0.3, -2.0, 0.0}, {}, {}, {}};
  sim.particle_mass = 0.01;
  sim.gravity = Vec3{};
  double dt = 1.0 / 240.0;
  sim.substep(dt, {}, &cap);

  CHECK(sim.pos[0].y == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(point_segment_dist(sim.pos[0], cap.a, cap.b) >= 0.1 - 1e-12);
  CHECK(sim.vel[0].x == doctest::Approx(0.3));
  CHECK(sim.vel[0].y == 0.0);  // inward normal velocity removed on contact
  CHECK(dist(sim.pos[1], Vec3{1.1, 0, 0}) < 1e-12);
  CHECK(dist(sim.pos[2], Vec3{0.5, 0.5, 0}) < 1e-12);
  CHECK(dist(sim.pos[3], Vec3{0.5, 0, 0}) < 1e-12);
}

TEST_CASE("unstable settings abort instead of producing garbage") {
  ClothSim sim;
  sim.pos = {{0, 0, 0}, {0.5, 0, 0}};
  sim.vel = {{}, {}};
  sim.springs.push_back({0, 1, 0.1, 1e9});
  sim.particle_mass = 1e-3;
  CHECK_THROWS_AS(
      [&] {
        for (int s = 0; s < 100; ++s) sim.substep(1.0 / 240.0, {});
      }(),
      std::runtime_error);

  SynthConfig cfg;
  cfg.grid = 8;
  cfg.k_struct = 1e7;
  cfg.n_clips = 1;
  cfg.frames_per_clip = 2;
  CHECK_THROWS_AS(synth_cloth(cfg), std::runtime_error);
}

TEST_CASE("synthesizer output drapes, stays off the bar and is deterministic") {
  SynthConfig cfg;
  cfg.grid = 8;
  cfg.n_clips = 4;
  cfg.frames_per_clip = 20;
  cfg.seed = 3;
  SequenceDataset ds = synth_cloth(cfg);

  REQUIRE(ds.clips.size() == 4);
  CHECK(ds.fps == cfg.fps);
  CHECK(ds.template_mesh.n_vertices() == 64);
  CHECK(!ds.body_rest_vertices.empty());
  CHECK(ds.clips[0].name.substr(0, 5) == "swing");
  CHECK(ds.clips[1].name.substr(0, 5) == "slide");
  CHECK(ds.clips[2].name.substr(0, 4) == "spin");
  CHECK(ds.clips[3].name.substr(0, 5) == "mixed");

  // reconstruct the rest capsule from its samples (axis along x by symmetry)
  Vec3 lo{1e18, 1e18, 1e18}, hi{-1e18, -1e18, -1e18};
  for (const Vec3& v : ds.body_rest_vertices)
    for (int i = 0; i < 3; ++i) {
      lo[i] = std::min(lo[i], v[i]);
      hi[i] = std::max(hi[i], v[i]);
    }
  double radius = 0.5 * (hi.z - lo.z);
  CHECK(radius == doctest::Approx(cfg.capsule_radius).epsilon(1e-9));
  Vec3 rest_a{lo.x + radius, 0.5 * (lo.y + hi.y), 0.5 * (lo.z + hi.z)};
  Vec3 rest_b{hi.x - radius, 0.5 * (lo.y + hi.y), 0.5 * (lo.z + hi.z)};

  const std::vector<Vec3>& settled = ds.clips[0].frames[0].gt;
  REQUIRE(static_cast<int>(settled.size()) == 64);

  // the free edge (iy = 0 in the template) hangs at least 80% of the way down
  double free_edge_y = 0.0;
  for (int ix = 0; ix < 8; ++ix) free_edge_y += settled[ix].y / 8.0;
  CHECK(free_edge_y < -0.8 * cfg.height);

  // draping moves the sheet far from the flat template on average
  double mean_disp = 0.0;
  for (int i = 0; i < 64; ++i) mean_disp += dist(settled[i], ds.template_mesh.vertices[i]) / 64.0;
  CHECK(mean_disp > 0.2);

  for (const Clip& clip : ds.clips) {
    REQUIRE(clip.n_frames() == 20);
    // every clip starts from the same settled state
    for (int i = 0; i < 64; ++i) {
      CHECK(same_bits(clip.frames[0].gt[i].x, settled[i].x));
      CHECK(same_bits(clip.frames[0].gt[i].y, settled[i].y));
      CHECK(same_bits(clip.frames[0].gt[i].z, settled[i].z));
    }
    CHECK(clip.frames[0].theta[0] == 0.0);  // scripts start from rest pose
    CHECK(norm(clip.frames[0].t) == 0.0);
    for (const MotionFrame& fr : clip.frames) {
      REQUIRE(fr.theta.size() == 6);
      REQUIRE(fr.has_body);
      REQUIRE(fr.has_body_transforms);
      REQUIRE(fr.has_gt());
      for (const Vec3& n : fr.body_normals) CHECK(norm(n) == doctest::Approx(1.0));
      // body samples move rigidly with the per-frame transform
      const RigidTransform& xf = fr.body_vertex_transforms[0];
      for (size_t i = 0; i < ds.body_rest_vertices.size(); i += 17)
        CHECK(dist(fr.body_vertices[i], xf.apply(ds.body_rest_vertices[i])) < 1e-12);
      CHECK(rotation_defect(fr.r_global) < 1e-9);
      // no garment vertex inside the posed capsule
      Vec3 pa = xf.apply(rest_a), pb = xf.apply(rest_b);
      for (const Vec3& v : fr.gt)
        CHECK(point_segment_dist(v, pa, pb) >= radius - 1e-9);
    }
  }

  // clip-to-clip motion is actually different
  CHECK(dist(ds.clips[0].frames[10].gt[3], ds.clips[2].frames[10].gt[3]) > 1e-6);

  // bit-identical rerun
  SequenceDataset again = synth_cloth(cfg);
  REQUIRE(again.clips.size() == ds.clips.size());
  for (size_t c = 0; c < ds.clips.size(); ++c) {
    CHECK(again.clips[c].name == ds.clips[c].name);
    for (int f = 0; f < ds.clips[c].n_frames(); ++f) {
      const MotionFrame& x = again.clips[c].frames[f];
      const MotionFrame& y = ds.clips[c].frames[f];
      for (int i = 0; i < 6; ++i) CHECK(same_bits(x.theta[i], y.theta[i]));
      for (int i = 0; i < 64; ++i) {
        CHECK(same_bits(x.gt[i].x, y.gt[i].x));
        CHECK(same_bits(x.gt[i].y, y.gt[i].y));
        CHECK(same_bits(x.gt[i].z, y.gt[i].z));
      }
    }
  }

  // a different seed gives different motion
  cfg.seed = 4;
  SequenceDataset other = synth_cloth(cfg);
  CHECK(dist(other.clips[0].frames[10].gt[3], ds.clips[0].frames[10].gt[3]) > 1e-9);
}

TEST_CASE("synthesizer validates its configuration") {
  SynthConfig cfg;
  cfg.grid = 7;
  CHECK_THROWS_AS(synth_cloth(cfg), UsageError);
  cfg.grid = 8;
  cfg.n_clips = 0;
  CHECK_THROWS_AS(synth_cloth(cfg), UsageError);
  cfg.n_clips = 1;
  cfg.script = "wobble";
  CHECK_THROWS_AS(synth_cloth(cfg), UsageError);
  cfg.script = "slide";
  cfg.substeps = 0;
  CHECK_THROWS_AS(synth_cloth(cfg), UsageError);
}
