#pragma once

// Learned anchor state: a set of proxy points expressed as soft attention
// over nearby template vertices, plus per-vertex blend logits tying every
// garment vertex to its closest anchors.

#include <cstdint>
#include <string>
#include <vector>

#include "anchorcloth/core.hpp"
#include "anchorcloth/geometry.hpp"

namespace anchorcloth {

struct AnchorSet {
  int n_anchors = 0;     // N
  int k_neighbors = 0;   // K template vertices per anchor
  int n_influences = 0;  // anchors blended per garment vertex

  // N x K template vertex indices per anchor.
  std::vector<std::vector<int>> neighbor_indices;
  // N x K attention logits, row-major; anchor position = softmax(row) . neighbors.
  std::vector<double> alpha;
  // M x n_influences anchor indices per garment vertex.
  std::vector<std::vector<int>> vertex_anchor_indices;
  // M x n_influences blend logits, row-major; weights = row softmax.
  std::vector<double> weight_logits;
  // Cached anchor positions consistent with alpha (see recompute_positions).
  std::vector<Vec3> positions;

  int n_vertices() const { return static_cast<int>(vertex_anchor_indices.size()); }
};

// k-means++ seeding followed by Lloyd iterations until the max center shift
// drops below 1e-6 or 100 iterations pass. A cluster that empties is
// re-seeded at the point farthest from its nearest center. Deterministic for
// a fixed seed.
std::vector<Vec3> kmeans_init(const std::vector<Vec3>& points, int n_clusters, uint64_t seed);

// Row softmax of a logits row.
std::vector<double> softmax(const std::vector<double>& logits);

// Position of one anchor: softmax(alpha_row) -weighted combination of its
// neighbor vertices.
Vec3 anchor_position(const std::vector<double>& alpha_row,
                     const std::vector<int>& neighbor_row,
                     const std::vector<Vec3>& vertices);

// All anchor positions; also refreshes set.positions.
std::vector<Vec3> recompute_positions(AnchorSet* set, const std::vector<Vec3>& vertices);

// M x n_influences blend weights (row softmax of weight_logits); every row is
// non-negative and sums to 1.
std::vector<double> vertex_blend_weights(const AnchorSet& set);

// Builds the full initial anchor state for a template mesh: k-means anchors,
// K-nearest neighbor lists, zero attention logits (position = neighbor mean),
// per-vertex nearest anchors, and distance-initialized blend logits
// (-d / tau, tau = mean nearest-anchor distance).
AnchorSet build_anchor_set(const Mesh& template_mesh, int n_anchors, int k_neighbors,
                           int n_influences, uint64_t seed);

// Recomputes neighbor lists and per-vertex anchor sets around the current
// anchor positions. Retained entries keep their logits; entries that enter a
// row are initialized to that row's minimum. A no-op when anchors have not
// moved since the last association.
void reassociate(AnchorSet* set, const Mesh& template_mesh);

void save_anchors_json(const AnchorSet& set, const std::string& path);
AnchorSet load_anchors_json(const std::string& path);

}  // namespace anchorcloth
