#include "anchorcloth/geometry.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace anchorcloth {

void validate_mesh(const Mesh& mesh) {
  const int n = mesh.n_vertices();
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& face = mesh.faces[f];
    for (int c = 0; c < 3; ++c) {
      if (face[c] < 0 || face[c] >= n)
        throw UsageError("mesh face " + std::to_string(f) + " references vertex " +
                         std::to_string(face[c]) + " outside [0, " + std::to_string(n) + ")");
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
      throw UsageError("mesh face " + std::to_string(f) + " is degenerate (repeated vertex)");
  }
}

Mesh load_obj(const std::string& path, ObjReadStats* stats) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open OBJ file: " + path);

  Mesh mesh;
  ObjReadStats local;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw UsageError(path + ":" + std::to_string(line_no) + ": " + why);
  };

  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string head;
    if (!(ss >> head)) continue;       // blank
    if (head[0] == '#') continue;      // comment
    if (head == "v") {
      Vec3 v;
      if (!(ss >> v.x >> v.y >> v.z)) fail("malformed vertex record (need 3 coordinates)");
      std::string extra;
      if (ss >> extra) fail("vertex record has trailing fields");
      mesh.vertices.push_back(v);
    } else if (head == "f") {
      std::array<int, 3> face{};
      for (int c = 0; c < 3; ++c) {
        std::string tok;
        if (!(ss >> tok)) fail("face record needs exactly 3 vertex indices");
        if (tok.find('/') != std::string::npos)
          fail("face record uses unsupported index syntax: " + tok);
        size_t used = 0;
        int idx = 0;
        try {
          idx = std::stoi(tok, &used);
        } catch (const std::exception&) {
          fail("face index is not an integer: " + tok);
        }
        if (used != tok.size()) fail("face index is not an integer: " + tok);
        if (idx < 1) fail("face index must be positive (1-based): " + tok);
        face[c] = idx - 1;
      }
      std::string extra;
      if (ss >> extra) fail("only triangular faces are supported");
      mesh.faces.push_back(face);
    } else {
      ++local.ignored_records;
    }
  }
  if (mesh.vertices.empty() && mesh.faces.empty())
    throw UsageError(path + ": no geometry records found");
  validate_mesh(mesh);
  if (stats) *stats = local;
  return mesh;
}

void save_obj(const Mesh& mesh, const std::string& path) {
  std::FILE* out = std::fopen(path.c_str(), "wb");
  if (!out) throw std::runtime_error("cannot write OBJ file: " + path);
  for (const Vec3& v : mesh.vertices)
    std::fprintf(out, "v %.6f %.6f %.6f\n", v.x, v.y, v.z);
  for (const auto& f : mesh.faces)
    std::fprintf(out, "f %d %d %d\n", f[0] + 1, f[1] + 1, f[2] + 1);
  if (std::fclose(out) != 0) throw std::runtime_error("failed to flush OBJ file: " + path);
}

std::vector<std::array<int, 2>> unique_edges(const Mesh& mesh) {
  std::vector<std::array<int, 2>> edges;
  edges.reserve(mesh.faces.size() * 3);
  for (const auto& f : mesh.faces)
    for (int c = 0; c < 3; ++c) {
      int a = f[c], b = f[(c + 1) % 3];
      edges.push_back({std::min(a, b), std::max(a, b)});
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

VertexAdjacency vertex_adjacency(const Mesh& mesh) {
  VertexAdjacency adj(mesh.n_vertices());
  for (const auto& e : unique_edges(mesh)) {
    adj[e[0]].push_back(e[1]);
    adj[e[1]].push_back(e[0]);
  }
  for (auto& nbrs : adj) std::sort(nbrs.begin(), nbrs.end());
  return adj;
}

std::vector<Vec3> vertex_normals_at(const Mesh& mesh, const std::vector<Vec3>& positions,
                                    int* fallback_count) {
  if (positions.size() != mesh.vertices.size())
    throw UsageError("vertex_normals_at: position count does not match mesh");
  std::vector<Vec3> acc(positions.size());
  for (const auto& f : mesh.faces) {
    Vec3 c = cross(positions[f[1]] - positions[f[0]], positions[f[2]] - positions[f[0]]);
    acc[f[0]] += c;
    acc[f[1]] += c;
    acc[f[2]] += c;
  }
  int fallbacks = 0;
  std::vector<Vec3> normals(positions.size());
  for (size_t i = 0; i < acc.size(); ++i) {
    double n = norm(acc[i]);
    if (n < 1e-12) {
      normals[i] = {0.0, 0.0, 1.0};
      ++fallbacks;
    } else {
      normals[i] = acc[i] / n;
    }
  }
  if (fallback_count) *fallback_count = fallbacks;
  return normals;
}

std::vector<Vec3> vertex_normals(const Mesh& mesh, int* fallback_count) {
  return vertex_normals_at(mesh, mesh.vertices, fallback_count);
}

std::vector<Vec3> graph_laplacian(const VertexAdjacency& adjacency,
                                  const std::vector<Vec3>& positions) {
  if (adjacency.size() != positions.size())
    throw UsageError("graph_laplacian: adjacency size does not match positions");
  std::vector<Vec3> lap(positions.size());
  for (size_t i = 0; i < positions.size(); ++i) {
    const auto& nbrs = adjacency[i];
    if (nbrs.empty()) continue;
    Vec3 mean;
    for (int j : nbrs) mean += positions[j];
    lap[i] = mean / static_cast<double>(nbrs.size()) - positions[i];
  }
  return lap;
}

std::vector<Vec3> graph_laplacian(const Mesh& mesh) {
  return graph_laplacian(vertex_adjacency(mesh), mesh.vertices);
}

std::vector<int> knn(const Vec3& query, const std::vector<Vec3>& points, int k) {
  const int n = static_cast<int>(points.size());
  if (k < 1 || k > n)
    throw UsageError("knn: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto closer = [&](int a, int b) {
    double da = dist2(query, points[a]), db = dist2(query, points[b]);
    if (da != db) return da < db;
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + k, order.end(), closer);
  order.resize(k);
  return order;
}

Mesh grid_mesh(int nx, int ny, const std::function<Vec3(int, int)>& pos) {
  if (nx < 2 || ny < 2) throw UsageError("grid_mesh: need at least 2 vertices per side");
  Mesh mesh;
  mesh.vertices.reserve(static_cast<size_t>(nx) * ny);
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) mesh.vertices.push_back(pos(ix, iy));
  auto id = [nx](int ix, int iy) { return iy * nx + ix; };
  for (int iy = 0; iy + 1 < ny; ++iy)
    for (int ix = 0; ix + 1 < nx; ++ix) {
      int a = id(ix, iy), b = id(ix + 1, iy), c = id(ix + 1, iy + 1), d = id(ix, iy + 1);
      mesh.faces.push_back({a, b, c});
      mesh.faces.push_back({a, c, d});
    }
  return mesh;
}

}  // namespace anchorcloth
