#pragma once

// Motion/garment sequence data: in-memory model, on-disk format (manifest
// JSON + one JSONL file per clip with base64-packed double arrays), and a
// mass-spring cloth synthesizer that produces ground-truth sequences.
//
// Conventions: meters, seconds, Y up, gravity (0, -9.81, 0). A "body" here is
// any obstacle point cloud with outward unit normals and optional per-vertex
// rigid transforms; the synthesizer uses a capsule-shaped bar the cloth hangs
// from.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "anchorcloth/core.hpp"
#include "anchorcloth/geometry.hpp"
#include "anchorcloth/skinning.hpp"

namespace anchorcloth {

struct MotionFrame {
  std::vector<double> theta;         // pose vector (rotation vector + angular rate)
  Vec3 t;                            // root translation relative to rest
  Mat3 r_global = Mat3::identity();  // global rotation of the root
  Vec3 j_root;                       // root joint position this frame
  std::vector<Vec3> body_vertices;
  std::vector<Vec3> body_normals;    // unit, aligned with body_vertices
  std::vector<RigidTransform> body_vertex_transforms;  // rest -> posed, optional
  bool has_body = false;
  bool has_body_transforms = false;
  std::vector<Vec3> gt;              // garment vertex positions; empty for motion-only
  bool has_gt() const { return !gt.empty(); }
};

struct Clip {
  std::string name;
  std::vector<MotionFrame> frames;
  int n_frames() const { return static_cast<int>(frames.size()); }
};

struct SequenceDataset {
  Mesh template_mesh;
  std::vector<Vec3> body_rest_vertices;  // empty when the data has no body
  double fps = 30.0;
  std::vector<Clip> clips;
  int total_frames() const;
};

// Strict base64 (standard alphabet, padded). decode throws UsageError on
// malformed input.
std::string base64_encode(const unsigned char* data, size_t n);
std::vector<unsigned char> base64_decode(const std::string& s);
std::string base64_doubles(const std::vector<double>& v);       // little-endian
std::vector<double> doubles_base64(const std::string& s);

// Writes dir/manifest.json, dir/template.obj, dir/body_rest.obj (when a body
// exists) and dir/clips/<name>.jsonl. Existing files are overwritten.
void save_dataset(const SequenceDataset& ds, const std::string& dir);

// Loads a dataset from its manifest; all referenced paths resolve relative to
// the manifest's directory. Malformed or inconsistent data throws UsageError.
SequenceDataset load_dataset(const std::string& manifest_path);

// One clip in the same JSONL format (used for motion-only inference input).
Clip load_clip(const std::string& path);
void save_clip(const Clip& clip, const std::string& path);

// Seeded clip-level split; the second element holds n_test clips. Clips keep
// their original relative order within each side.
std::pair<SequenceDataset, SequenceDataset> split_dataset(const SequenceDataset& ds,
                                                          int n_test, uint64_t seed);

// ---- synthesizer ----

// Explicit mass-spring cloth stepped with semi-implicit Euler. Exposed so
// invariants (momentum conservation, static equilibrium) can be tested on
// small hand-built systems.
struct ClothSim {
  struct Spring {
    int i, j;
    double rest, k;
  };
  struct CapsuleObstacle {
    Vec3 a, b;      // segment endpoints
    double radius = 0.0;
  };

  std::vector<Vec3> pos, vel;
  std::vector<Spring> springs;
  double particle_mass = 1e-3;  // kg, uniform
  Vec3 gravity{0.0, -9.81, 0.0};
  double spring_damping = 0.5;  // N s/m along each spring, momentum conserving
  double air_drag = 0.0;        // 1/s, velocity-proportional
  double max_speed = 50.0;      // m/s; exceeding this aborts the simulation
  std::vector<int> pins;        // particle indices with prescribed motion

  // pin_positions aligns with pins and gives their location at the end of the
  // step. Passing an obstacle projects penetrating particles back to its
  // surface. Throws std::runtime_error when the integration blows up.
  void substep(double dt, const std::vector<Vec3>& pin_positions,
               const CapsuleObstacle* obstacle = nullptr);

  Vec3 momentum() const;
};

struct SynthConfig {
  int grid = 16;                // vertices per side of the square cloth (>= 8)
  double width = 0.4;           // meters, along the bar
  double height = 0.4;          // drape length away from the bar
  double mass_total = 0.25;     // kg, spread uniformly
  double k_struct = 25.0;       // N/m; defaults chosen stable at dt = 1/720
  double k_shear = 10.0;
  double k_bend = 4.0;
  double spring_damping = 0.1;  // N s/m; explicit integration caps this low
  double air_drag = 0.05;       // 1/s during recording
  double settle_drag = 2.0;     // 1/s while settling
  double capsule_radius = 0.03;
  double pin_gap = 0.005;       // pins sit this far off the capsule surface
  double fps = 30.0;
  int substeps = 24;            // per recorded frame; 24 at 30 Hz -> dt = 1/720.
                                // The largest default grid (16) has a worst spring
                                // mode near sqrt(2 * sum(k) / m) ~ 400 rad/s; explicit
                                // integration needs omega * dt well under 2.
  double settle_seconds = 3.0;
  int n_clips = 10;
  int frames_per_clip = 300;
  // "cycle" rotates through swing/slide/spin/mixed per clip; naming one of
  // those uses it for every clip.
  std::string script = "cycle";
  uint64_t seed = 0;
  double max_speed = 50.0;
};

// Builds a flat cloth sheet sticking out horizontally from a rigid capsule
// bar it is pinned to, lets it drape under gravity (the settled shape differs
// strongly from the template, which is what the model has to learn), then
// records clips of scripted bar motion. The bar is the dataset's body.
SequenceDataset synth_cloth(const SynthConfig& config);

}  // namespace anchorcloth
