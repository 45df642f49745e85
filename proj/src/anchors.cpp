#include "anchorcloth/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace anchorcloth {

std::vector<Vec3> kmeans_init(const std::vector<Vec3>& points, int n_clusters, uint64_t seed) {
  const int n = static_cast<int>(points.size());
  if (n_clusters < 1 || n_clusters > n)
    throw UsageError("kmeans_init: n_clusters=" + std::to_string(n_clusters) + " outside [1, " +
                     std::to_string(n) + "]");
  Rng rng(seed);

  // k-means++ seeding: first center uniform, then D^2-weighted draws.
  std::vector<Vec3> centers;
  centers.reserve(n_clusters);
  centers.push_back(points[rng.uniform_int(n)]);
  std::vector<double> d2(n);
  while (static_cast<int>(centers.size()) < n_clusters) {
    double total = 0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (const Vec3& c : centers) best = std::min(best, dist2(points[i], c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0) {
      // All points coincide with existing centers; any pick is equivalent.
      centers.push_back(points[rng.uniform_int(n)]);
      continue;
    }
    double r = rng.uniform(0.0, total);
    double acc = 0;
    int pick = n - 1;
    for (int i = 0; i < n; ++i) {
      acc += d2[i];
      if (acc >= r) {
        pick = i;
        break;
      }
    }
    centers.push_back(points[pick]);
  }

  // Lloyd iterations.
  std::vector<int> assign(n);
  for (int iter = 0; iter < 100; ++iter) {
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      int arg = 0;
      for (int c = 0; c < n_clusters; ++c) {
        double d = dist2(points[i], centers[c]);
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      assign[i] = arg;
    }
    std::vector<Vec3> sums(n_clusters);
    std::vector<int> counts(n_clusters, 0);
    for (int i = 0; i < n; ++i) {
      sums[assign[i]] += points[i];
      ++counts[assign[i]];
    }
    double max_shift = 0;
    for (int c = 0; c < n_clusters; ++c) {
      Vec3 next;
      if (counts[c] == 0) {
        // Re-seed at the point farthest from its nearest center.
        double best = -1;
        int arg = 0;
        for (int i = 0; i < n; ++i) {
          double nearest = std::numeric_limits<double>::max();
          for (const Vec3& cc : centers) nearest = std::min(nearest, dist2(points[i], cc));
          if (nearest > best) {
            best = nearest;
            arg = i;
          }
        }
        next = points[arg];
      } else {
        next = sums[c] / static_cast<double>(counts[c]);
      }
      max_shift = std::max(max_shift, dist(next, centers[c]));
      centers[c] = next;
    }
    if (max_shift < 1e-6) break;
  }
  return centers;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  std::vector<double> w(logits.size());
  double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    w[i] = std::exp(logits[i] - mx);
    denom += w[i];
  }
  for (double& v : w) v /= denom;
  return w;
}

Vec3 anchor_position(const std::vector<double>& alpha_row, const std::vector<int>& neighbor_row,
                     const std::vector<Vec3>& vertices) {
  if (alpha_row.size() != neighbor_row.size())
    throw UsageError("anchor_position: alpha row and neighbor row sizes differ");
  std::vector<double> w = softmax(alpha_row);
  Vec3 p;
  for (size_t k = 0; k < w.size(); ++k) p += vertices[neighbor_row[k]] * w[k];
  return p;
}

std::vector<Vec3> recompute_positions(AnchorSet* set, const std::vector<Vec3>& vertices) {
  std::vector<Vec3> pos(set->n_anchors);
  for (int a = 0; a < set->n_anchors; ++a) {
    std::vector<double> row(set->alpha.begin() + static_cast<size_t>(a) * set->k_neighbors,
                            set->alpha.begin() + static_cast<size_t>(a + 1) * set->k_neighbors);
    pos[a] = anchor_position(row, set->neighbor_indices[a], vertices);
  }
  set->positions = pos;
  return pos;
}

std::vector<double> vertex_blend_weights(const AnchorSet& set) {
  const int m = set.n_vertices();
  const int p = set.n_influences;
  std::vector<double> weights(static_cast<size_t>(m) * p);
  for (int i = 0; i < m; ++i) {
    std::vector<double> row(set.weight_logits.begin() + static_cast<size_t>(i) * p,
                            set.weight_logits.begin() + static_cast<size_t>(i + 1) * p);
    std::vector<double> w = softmax(row);
    std::copy(w.begin(), w.end(), weights.begin() + static_cast<size_t>(i) * p);
  }
  return weights;
}

namespace {

// Per-vertex anchor sets around given anchor positions, plus the distances.
void associate_vertices(const std::vector<Vec3>& vertices, const std::vector<Vec3>& anchors,
                        int n_influences, std::vector<std::vector<int>>* out_idx,
                        std::vector<std::vector<double>>* out_dist) {
  out_idx->assign(vertices.size(), {});
  if (out_dist) out_dist->assign(vertices.size(), {});
  for (size_t i = 0; i < vertices.size(); ++i) {
    (*out_idx)[i] = knn(vertices[i], anchors, n_influences);
    if (out_dist) {
      auto& dlist = (*out_dist)[i];
      dlist.reserve(n_influences);
      for (int a : (*out_idx)[i]) dlist.push_back(dist(vertices[i], anchors[a]));
    }
  }
}

}  // namespace

AnchorSet build_anchor_set(const Mesh& template_mesh, int n_anchors, int k_neighbors,
                           int n_influences, uint64_t seed) {
  const auto& verts = template_mesh.vertices;
  const int m = static_cast<int>(verts.size());
  if (n_anchors < 1 || n_anchors > m)
    throw UsageError("build_anchor_set: anchor count " + std::to_string(n_anchors) +
                     " outside [1, " + std::to_string(m) + "]");
  if (k_neighbors < 1 || k_neighbors > m)
    throw UsageError("build_anchor_set: k_neighbors " + std::to_string(k_neighbors) +
                     " outside [1, " + std::to_string(m) + "]");
  if (n_influences < 1 || n_influences > n_anchors)
    throw UsageError("build_anchor_set: n_influences " + std::to_string(n_influences) +
                     " outside [1, " + std::to_string(n_anchors) + "]");

  AnchorSet set;
  set.n_anchors = n_anchors;
  set.k_neighbors = k_neighbors;
  set.n_influences = n_influences;

  std::vector<Vec3> centers = kmeans_init(verts, n_anchors, seed);
  set.neighbor_indices.resize(n_anchors);
  for (int a = 0; a < n_anchors; ++a) set.neighbor_indices[a] = knn(centers[a], verts, k_neighbors);
  // Zero logits put every anchor at its neighbor mean, which keeps positions
  // inside the neighbor hull from the start.
  set.alpha.assign(static_cast<size_t>(n_anchors) * k_neighbors, 0.0);
  recompute_positions(&set, verts);

  std::vector<std::vector<double>> dists;
  associate_vertices(verts, set.positions, n_influences, &set.vertex_anchor_indices, &dists);

  double tau = 0;
  for (int i = 0; i < m; ++i) tau += dists[i][0];
  tau = std::max(tau / m, 1e-12);
  set.weight_logits.resize(static_cast<size_t>(m) * n_influences);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n_influences; ++j)
      set.weight_logits[static_cast<size_t>(i) * n_influences + j] = -dists[i][j] / tau;
  return set;
}

void reassociate(AnchorSet* set, const Mesh& template_mesh) {
  const auto& verts = template_mesh.vertices;
  recompute_positions(set, verts);

  // Neighbor lists: keep alpha for retained template vertices, row minimum
  // for new entries.
  for (int a = 0; a < set->n_anchors; ++a) {
    std::vector<int> fresh = knn(set->positions[a], verts, set->k_neighbors);
    double* row = set->alpha.data() + static_cast<size_t>(a) * set->k_neighbors;
    double row_min = *std::min_element(row, row + set->k_neighbors);
    std::vector<double> next(set->k_neighbors, row_min);
    for (int k = 0; k < set->k_neighbors; ++k) {
      for (int old = 0; old < set->k_neighbors; ++old)
        if (set->neighbor_indices[a][old] == fresh[k]) {
          next[k] = row[old];
          break;
        }
    }
    std::copy(next.begin(), next.end(), row);
    set->neighbor_indices[a] = std::move(fresh);
  }

  // Per-vertex anchor sets: same retention rule for blend logits.
  std::vector<std::vector<int>> fresh_idx;
  associate_vertices(verts, set->positions, set->n_influences, &fresh_idx, nullptr);
  const int p = set->n_influences;
  for (int i = 0; i < set->n_vertices(); ++i) {
    double* row = set->weight_logits.data() + static_cast<size_t>(i) * p;
    double row_min = *std::min_element(row, row + p);
    std::vector<double> next(p, row_min);
    for (int j = 0; j < p; ++j) {
      for (int old = 0; old < p; ++old)
        if (set->vertex_anchor_indices[i][old] == fresh_idx[i][j]) {
          next[j] = row[old];
          break;
        }
    }
    std::copy(next.begin(), next.end(), row);
    set->vertex_anchor_indices[i] = std::move(fresh_idx[i]);
  }
}

void save_anchors_json(const AnchorSet& set, const std::string& path) {
  nlohmann::json j;
  nlohmann::json pos = nlohmann::json::array();
  for (const Vec3& p : set.positions) pos.push_back({p.x, p.y, p.z});
  j["positions"] = std::move(pos);
  j["neighbor_indices"] = set.neighbor_indices;
  j["alpha"] = set.alpha;
  j["vertex_anchor_indices"] = set.vertex_anchor_indices;
  j["weight_logits"] = set.weight_logits;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write anchors file: " + path);
  out << j.dump(1) << "\n";
  if (!out) throw std::runtime_error("failed to write anchors file: " + path);
}

AnchorSet load_anchors_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open anchors file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("malformed anchors file " + path + ": " + e.what());
  }
  for (const char* key :
       {"positions", "neighbor_indices", "alpha", "vertex_anchor_indices", "weight_logits"})
    if (!j.contains(key)) throw UsageError("anchors file " + path + " missing field: " + key);

  AnchorSet set;
  set.neighbor_indices = j["neighbor_indices"].get<std::vector<std::vector<int>>>();
  set.alpha = j["alpha"].get<std::vector<double>>();
  set.vertex_anchor_indices = j["vertex_anchor_indices"].get<std::vector<std::vector<int>>>();
  set.weight_logits = j["weight_logits"].get<std::vector<double>>();
  set.n_anchors = static_cast<int>(set.neighbor_indices.size());
  set.k_neighbors = set.n_anchors > 0 ? static_cast<int>(set.neighbor_indices[0].size()) : 0;
  set.n_influences = set.vertex_anchor_indices.empty()
                         ? 0
                         : static_cast<int>(set.vertex_anchor_indices[0].size());
  for (const auto& row : j["positions"]) {
    if (!row.is_array() || row.size() != 3)
      throw UsageError("anchors file " + path + ": positions entries must be 3-vectors");
    set.positions.push_back({row[0].get<double>(), row[1].get<double>(), row[2].get<double>()});
  }
  if (static_cast<int>(set.positions.size()) != set.n_anchors ||
      set.alpha.size() != static_cast<size_t>(set.n_anchors) * set.k_neighbors)
    throw UsageError("anchors file " + path + ": inconsistent array sizes");
  if (set.weight_logits.size() !=
      set.vertex_anchor_indices.size() * static_cast<size_t>(set.n_influences))
    throw UsageError("anchors file " + path + ": inconsistent blend logit size");
  for (const auto& row : set.neighbor_indices)
    if (static_cast<int>(row.size()) != set.k_neighbors)
      throw UsageError("anchors file " + path + ": ragged neighbor_indices");
  for (const auto& row : set.vertex_anchor_indices)
    if (static_cast<int>(row.size()) != set.n_influences)
      throw UsageError("anchors file " + path + ": ragged vertex_anchor_indices");
  return set;
}

}  // namespace anchorcloth
