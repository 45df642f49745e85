#pragma once

// Rigid anchor transforms and linear blend skinning, value level. The taped
// counterparts in autodiff.hpp share these conventions; the forward results
// agree to machine precision.

#include <vector>

#include "anchorcloth/anchors.hpp"
#include "anchorcloth/core.hpp"

namespace anchorcloth {

struct RigidTransform {
  Mat3 r = Mat3::identity();
  Vec3 t;

  Vec3 apply(const Vec3& p) const { return r * p + t; }
};

// Intrinsic XYZ composition: R = Rx(a.x) * Ry(a.y) * Rz(a.z).
Mat3 euler_to_rotation(const Vec3& angles);

// Inverse of euler_to_rotation for middle angles in (-pi/2, pi/2).
Vec3 rotation_to_euler(const Mat3& r);

// Carries a residual transform (r, t) along with a global rotation about the
// root joint: R = r_global * r, T = r_global * (t - r * j_root) + j_root.
RigidTransform compose_loose(const Mat3& r, const Vec3& t, const Mat3& r_global,
                             const Vec3& j_root);

// Attaches the residual to a body vertex transform:
// R = r_body * r, T = r_body * t + t_body.
RigidTransform compose_tight(const Mat3& r, const Vec3& t, const RigidTransform& body);

// Per-anchor handling mode, chosen once from the template's proximity to the
// rest-pose body: anchors closer than `threshold` to a body vertex follow
// that vertex's transform (tight), the rest follow root motion (loose).
struct AnchorStrategy {
  std::vector<char> tight;            // per anchor
  std::vector<int> tight_body_index;  // rest body vertex an anchor is bound to, or -1
  double threshold = 0.03;
};

AnchorStrategy classify_anchors(const std::vector<Vec3>& anchor_positions,
                                const std::vector<Vec3>& body_rest_vertices,
                                double threshold = 0.03);

// Body data for one frame, aligned by vertex index with the rest pose.
struct BodyFrame {
  std::vector<Vec3> rest_vertices;
  std::vector<Vec3> posed_vertices;
  std::vector<Vec3> posed_normals;
  std::vector<RigidTransform> vertex_transforms;
  bool has_transforms = false;
};

// Transform of the rest-pose body vertex nearest to `anchor_position`.
// Throws UsageError when the motion data carries no per-vertex transforms
// (run with every anchor loose in that case).
RigidTransform nearest_body_transform(const Vec3& anchor_position, const BodyFrame& body);

// v_m = sum_j w_mj (R_j (v_m + d_m) + T_j) over the anchors in
// anchors.vertex_anchor_indices[m], with w = row softmax of weight_logits.
// `displacements` may be empty (treated as zero).
std::vector<Vec3> lbs(const std::vector<Vec3>& template_vertices,
                      const std::vector<Vec3>& displacements,
                      const std::vector<RigidTransform>& anchor_transforms,
                      const AnchorSet& anchors);

}  // namespace anchorcloth
