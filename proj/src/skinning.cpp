#include "anchorcloth/skinning.hpp"

#include <cmath>
#include <limits>

namespace anchorcloth {

Mat3 euler_to_rotation(const Vec3& angles) {
  double cx = std::cos(angles.x), sx = std::sin(angles.x);
  double cy = std::cos(angles.y), sy = std::sin(angles.y);
  double cz = std::cos(angles.z), sz = std::sin(angles.z);
  Mat3 rx, ry, rz;
  rx.m = {1, 0, 0, 0, cx, -sx, 0, sx, cx};
  ry.m = {cy, 0, sy, 0, 1, 0, -sy, 0, cy};
  rz.m = {cz, -sz, 0, sz, cz, 0, 0, 0, 1};
  return rx * (ry * rz);
}

Vec3 rotation_to_euler(const Mat3& r) {
  // For R = Rx Ry Rz: R02 = sin(y), R12 = -sin(x)cos(y), R01 = -cos(y)sin(z).
  double sy = std::clamp(r(0, 2), -1.0, 1.0);
  return {std::atan2(-r(1, 2), r(2, 2)), std::asin(sy), std::atan2(-r(0, 1), r(0, 0))};
}

RigidTransform compose_loose(const Mat3& r, const Vec3& t, const Mat3& r_global,
                             const Vec3& j_root) {
  RigidTransform out;
  out.r = r_global * r;
  out.t = r_global * (t - r * j_root) + j_root;
  return out;
}

RigidTransform compose_tight(const Mat3& r, const Vec3& t, const RigidTransform& body) {
  RigidTransform out;
  out.r = body.r * r;
  out.t = body.r * t + body.t;
  return out;
}

AnchorStrategy classify_anchors(const std::vector<Vec3>& anchor_positions,
                                const std::vector<Vec3>& body_rest_vertices, double threshold) {
  AnchorStrategy strategy;
  strategy.threshold = threshold;
  strategy.tight.assign(anchor_positions.size(), 0);
  strategy.tight_body_index.assign(anchor_positions.size(), -1);
  if (body_rest_vertices.empty()) return strategy;  // everything loose
  for (size_t a = 0; a < anchor_positions.size(); ++a) {
    double best = std::numeric_limits<double>::max();
    int arg = -1;
    for (size_t b = 0; b < body_rest_vertices.size(); ++b) {
      double d = dist2(anchor_positions[a], body_rest_vertices[b]);
      if (d < best) {
        best = d;
        arg = static_cast<int>(b);
      }
    }
    if (std::sqrt(best) < threshold) {
      strategy.tight[a] = 1;
      strategy.tight_body_index[a] = arg;
    }
  }
  return strategy;
}

RigidTransform nearest_body_transform(const Vec3& anchor_position, const BodyFrame& body) {
  if (body.rest_vertices.empty())
    throw UsageError("nearest_body_transform: body frame has no rest vertices");
  if (!body.has_transforms)
    throw UsageError(
        "nearest_body_transform: motion data has no per-vertex body transforms; "
        "run with every anchor in loose mode");
  double best = std::numeric_limits<double>::max();
  int arg = 0;
  for (size_t b = 0; b < body.rest_vertices.size(); ++b) {
    double d = dist2(anchor_position, body.rest_vertices[b]);
    if (d < best) {
      best = d;
      arg = static_cast<int>(b);
    }
  }
  return body.vertex_transforms[arg];
}

std::vector<Vec3> lbs(const std::vector<Vec3>& template_vertices,
                      const std::vector<Vec3>& displacements,
                      const std::vector<RigidTransform>& anchor_transforms,
                      const AnchorSet& anchors) {
  const int m = static_cast<int>(template_vertices.size());
  if (anchors.n_vertices() != m)
    throw UsageError("lbs: anchor set binds " + std::to_string(anchors.n_vertices()) +
                     " vertices, got " + std::to_string(m));
  if (!displacements.empty() && static_cast<int>(displacements.size()) != m)
    throw UsageError("lbs: displacement count does not match vertices");
  if (static_cast<int>(anchor_transforms.size()) != anchors.n_anchors)
    throw UsageError("lbs: transform count does not match anchor count");

  std::vector<double> weights = vertex_blend_weights(anchors);
  const int p = anchors.n_influences;
  std::vector<Vec3> out(m);
  for (int i = 0; i < m; ++i) {
    Vec3 base = template_vertices[i];
    if (!displacements.empty()) base += displacements[i];
    Vec3 acc;
    for (int j = 0; j < p; ++j) {
      const RigidTransform& tr = anchor_transforms[anchors.vertex_anchor_indices[i][j]];
      acc += tr.apply(base) * weights[static_cast<size_t>(i) * p + j];
    }
    out[i] = acc;
  }
  return out;
}

}  // namespace anchorcloth
