#pragma once

// Quadric-error-metric edge-collapse simplification. Used to distill a mesh
// down to a salient subset of vertices that serves as supervision targets.

#include <array>
#include <vector>

#include "anchorcloth/geometry.hpp"

namespace anchorcloth {

// Symmetric 4x4 quadric vᵀQv for homogeneous v = (x, y, z, 1), stored as the
// 3x3 block A, vector b, and scalar c so that cost(p) = pᵀAp + 2bᵀp + c.
struct Quadric {
  Mat3 a;
  Vec3 b;
  double c = 0.0;

  static Quadric from_plane(const Vec3& n, double d);
  Quadric& operator+=(const Quadric& o);
  double eval(const Vec3& p) const;

  // Minimizer of eval, solving A p = -b. Returns false when A is singular or
  // its 1-norm condition estimate exceeds cond_threshold.
  bool optimal_point(Vec3* out, double cond_threshold) const;
};

struct QemOptions {
  double boundary_weight = 1000.0;  // scale on boundary constraint-plane quadrics
  double cond_threshold = 1e8;      // beyond this, fall back to the better endpoint
};

struct SimplifyResult {
  Mesh mesh;
  bool reached_target = false;
  // Quadric cost of each performed collapse, in execution order.
  std::vector<double> collapse_costs;
};

// Collapses minimum-cost edges until `target_vertices` remain or no legal
// collapse is left (reached_target reports which). Collapses that would flip
// a surviving face normal past 90 degrees or break the edge link condition
// are rejected. Ties are broken by lower (a, b) edge index. Requires
// 4 <= target_vertices <= vertex count and 2-manifold input.
SimplifyResult qem_simplify(const Mesh& mesh, int target_vertices,
                            const QemOptions& options = {});

// Vertex positions of the simplified mesh.
std::vector<Vec3> simplified_targets(const Mesh& mesh, int target_vertices,
                                     const QemOptions& options = {});

// Initial collapse cost of every unique edge, for inspecting which regions
// the simplifier considers salient.
std::vector<std::pair<double, std::array<int, 2>>> initial_edge_costs(
    const Mesh& mesh, const QemOptions& options = {});

}  // namespace anchorcloth
