#pragma once

// Triangle mesh container, Wavefront OBJ subset I/O, and the handful of mesh
// queries the rest of the library is built on.

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "anchorcloth/core.hpp"

namespace anchorcloth {

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;  // 0-based vertex indices

  int n_vertices() const { return static_cast<int>(vertices.size()); }
  int n_faces() const { return static_cast<int>(faces.size()); }
};

// Throws UsageError if a face index is out of range or a face repeats a vertex.
void validate_mesh(const Mesh& mesh);

struct ObjReadStats {
  int ignored_records = 0;  // lines whose record type is outside the v/f subset
};

// Reads the `v x y z` / `f i j k` subset. `#` comments and blank lines are
// skipped; other record types (vn, vt, g, ...) are counted in `stats` and
// ignored. Malformed v/f records throw UsageError naming the line number.
Mesh load_obj(const std::string& path, ObjReadStats* stats = nullptr);

// Writes vertices then faces, coordinates with 6 fractional digits, 1-based
// face indices. Byte-stable for identical input.
void save_obj(const Mesh& mesh, const std::string& path);

// Unique undirected edges as (lo, hi) pairs, sorted lexicographically.
std::vector<std::array<int, 2>> unique_edges(const Mesh& mesh);

// adjacency[i] = sorted unique neighbor indices of vertex i.
using VertexAdjacency = std::vector<std::vector<int>>;
VertexAdjacency vertex_adjacency(const Mesh& mesh);

// Area-weighted vertex normals (sum of incident face cross products,
// normalized). Vertices with no incident faces or a degenerate normal sum get
// (0,0,1); `fallback_count` reports how many, if non-null.
std::vector<Vec3> vertex_normals_at(const Mesh& mesh, const std::vector<Vec3>& positions,
                                    int* fallback_count = nullptr);
std::vector<Vec3> vertex_normals(const Mesh& mesh, int* fallback_count = nullptr);

// Uniform (umbrella) Laplacian: mean of one-ring neighbors minus the vertex.
// Isolated vertices map to zero.
std::vector<Vec3> graph_laplacian(const VertexAdjacency& adjacency,
                                  const std::vector<Vec3>& positions);
std::vector<Vec3> graph_laplacian(const Mesh& mesh);

// Indices of the k nearest points to `query`, ascending by distance, ties
// broken by lower index. Exact brute force. Requires 1 <= k <= points.size().
std::vector<int> knn(const Vec3& query, const std::vector<Vec3>& points, int k);

// Regular (nx x ny)-vertex grid, positions supplied per lattice coordinate,
// each quad split into two triangles. Vertex index = iy * nx + ix. Faces are
// wound counter-clockwise when `pos` maps (ix, iy) to a plane seen from +z.
Mesh grid_mesh(int nx, int ny, const std::function<Vec3(int, int)>& pos);

}  // namespace anchorcloth
