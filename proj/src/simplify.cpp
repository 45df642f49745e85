#include "anchorcloth/simplify.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <set>

namespace anchorcloth {

Quadric Quadric::from_plane(const Vec3& n, double d) {
  Quadric q;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) q.a(i, j) = n[i] * n[j];
  q.b = n * d;
  q.c = d * d;
  return q;
}

Quadric& Quadric::operator+=(const Quadric& o) {
  a = a + o.a;
  b += o.b;
  c += o.c;
  return *this;
}

double Quadric::eval(const Vec3& p) const { return dot(p, a * p) + 2.0 * dot(b, p) + c; }

static Mat3 adjugate(const Mat3& m) {
  Mat3 r;
  r(0, 0) = m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1);
  r(0, 1) = m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2);
  r(0, 2) = m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1);
  r(1, 0) = m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2);
  r(1, 1) = m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0);
  r(1, 2) = m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2);
  r(2, 0) = m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0);
  r(2, 1) = m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1);
  r(2, 2) = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  return r;
}

static double norm1(const Mat3& m) {
  double best = 0;
  for (int j = 0; j < 3; ++j) {
    double s = std::abs(m(0, j)) + std::abs(m(1, j)) + std::abs(m(2, j));
    best = std::max(best, s);
  }
  return best;
}

bool Quadric::optimal_point(Vec3* out, double cond_threshold) const {
  double det = a.det();
  double scale = norm1(a);
  if (std::abs(det) <= 1e-12 * std::max(1.0, scale * scale * scale)) return false;
  Mat3 inv = adjugate(a) * (1.0 / det);
  if (norm1(a) * norm1(inv) > cond_threshold) return false;
  *out = inv * (-b);
  return true;
}

namespace {

struct Candidate {
  double cost;
  int a, b;            // a < b
  uint32_t va, vb;     // vertex versions at push time
  Vec3 pos;
};

struct CandidateOrder {
  // std::priority_queue is a max-heap; invert to pop lowest cost first,
  // ties by lower (a, b).
  bool operator()(const Candidate& l, const Candidate& r) const {
    if (l.cost != r.cost) return l.cost > r.cost;
    if (l.a != r.a) return l.a > r.a;
    return l.b > r.b;
  }
};

struct Collapser {
  const QemOptions& opt;
  std::vector<Vec3> pos;
  std::vector<Quadric> quadric;
  std::vector<uint32_t> version;
  std::vector<char> vert_alive;
  std::vector<std::array<int, 3>> face;
  std::vector<char> face_alive;
  std::vector<std::vector<int>> faces_of;  // may hold dead face ids
  std::priority_queue<Candidate, std::vector<Candidate>, CandidateOrder> queue;
  int alive_verts = 0;

  explicit Collapser(const Mesh& mesh, const QemOptions& options) : opt(options) {
    pos = mesh.vertices;
    face = mesh.faces;
    const int nv = mesh.n_vertices();
    quadric.assign(nv, Quadric{});
    version.assign(nv, 0);
    vert_alive.assign(nv, 1);
    face_alive.assign(face.size(), 1);
    faces_of.assign(nv, {});
    alive_verts = nv;
    for (size_t f = 0; f < face.size(); ++f)
      for (int c = 0; c < 3; ++c) faces_of[face[f][c]].push_back(static_cast<int>(f));

    build_quadrics(mesh);
  }

  void build_quadrics(const Mesh& mesh) {
    // Plane quadric per face, accumulated to its corners.
    std::vector<Vec3> face_n(face.size());
    for (size_t f = 0; f < face.size(); ++f) {
      const auto& t = face[f];
      Vec3 c = cross(pos[t[1]] - pos[t[0]], pos[t[2]] - pos[t[0]]);
      double len = norm(c);
      if (len < 1e-14) continue;  // zero-area face contributes nothing
      Vec3 n = c / len;
      face_n[f] = n;
      Quadric q = Quadric::from_plane(n, -dot(n, pos[t[0]]));
      for (int cix = 0; cix < 3; ++cix) quadric[t[cix]] += q;
    }
    // Boundary edges (exactly one incident face) get a constraint plane
    // perpendicular to that face through the edge, heavily weighted.
    std::map<std::array<int, 2>, std::vector<int>> edge_faces;
    for (size_t f = 0; f < face.size(); ++f)
      for (int c = 0; c < 3; ++c) {
        int a = face[f][c], b = face[f][(c + 1) % 3];
        edge_faces[{std::min(a, b), std::max(a, b)}].push_back(static_cast<int>(f));
      }
    for (const auto& [e, fl] : edge_faces) {
      if (fl.size() > 2)
        throw UsageError("qem_simplify: non-manifold edge (" + std::to_string(e[0]) + ", " +
                         std::to_string(e[1]) + ") with " + std::to_string(fl.size()) +
                         " incident faces");
      if (fl.size() != 1) continue;
      Vec3 edge_dir = pos[e[1]] - pos[e[0]];
      Vec3 n = cross(edge_dir, face_n[fl[0]]);
      double len = norm(n);
      if (len < 1e-14) continue;
      n = n / len;
      Quadric q = Quadric::from_plane(n, -dot(n, pos[e[0]]));
      q.a = q.a * opt.boundary_weight;
      q.b *= opt.boundary_weight;
      q.c *= opt.boundary_weight;
      quadric[e[0]] += q;
      quadric[e[1]] += q;
    }
  }

  Candidate make_candidate(int a, int b) const {
    Quadric q = quadric[a];
    q += quadric[b];
    Vec3 target;
    if (!q.optimal_point(&target, opt.cond_threshold)) {
      double ca = q.eval(pos[a]), cb = q.eval(pos[b]);
      target = (ca <= cb) ? pos[a] : pos[b];
    }
    double cost = std::max(0.0, q.eval(target));
    return {cost, a, b, version[a], version[b], target};
  }

  std::vector<int> alive_faces_of(int v) const {
    std::vector<int> out;
    for (int f : faces_of[v])
      if (face_alive[f]) out.push_back(f);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  std::set<int> neighbors(int v) const {
    std::set<int> nbrs;
    for (int f : alive_faces_of(v))
      for (int c : face[f])
        if (c != v) nbrs.insert(c);
    return nbrs;
  }

  void push_edges_of(int v) {
    for (int w : neighbors(v)) queue.push(make_candidate(std::min(v, w), std::max(v, w)));
  }

  bool collapse_legal(int a, int b, const Vec3& target) const {
    // Link condition: every common neighbor must be the apex of a face shared
    // by the edge, otherwise the collapse pinches the surface.
    std::set<int> shared_apexes;
    int shared_faces = 0;
    for (int f : alive_faces_of(a)) {
      const auto& t = face[f];
      bool has_b = (t[0] == b || t[1] == b || t[2] == b);
      if (!has_b) continue;
      ++shared_faces;
      for (int c : t)
        if (c != a && c != b) shared_apexes.insert(c);
    }
    if (shared_faces == 0 || shared_faces > 2) return false;
    std::set<int> na = neighbors(a), nb = neighbors(b);
    std::vector<int> common;
    std::set_intersection(na.begin(), na.end(), nb.begin(), nb.end(), std::back_inserter(common));
    for (int v : common)
      if (!shared_apexes.count(v)) return false;

    // Normal flip: surviving faces touching either endpoint must not reverse.
    for (int endpoint : {a, b}) {
      for (int f : alive_faces_of(endpoint)) {
        const auto& t = face[f];
        bool has_a = (t[0] == a || t[1] == a || t[2] == a);
        bool has_b = (t[0] == b || t[1] == b || t[2] == b);
        if (has_a && has_b) continue;  // face dies with the collapse
        Vec3 p[3], q[3];
        for (int c = 0; c < 3; ++c) {
          p[c] = pos[t[c]];
          q[c] = (t[c] == endpoint) ? target : pos[t[c]];
        }
        Vec3 n_before = cross(p[1] - p[0], p[2] - p[0]);
        Vec3 n_after = cross(q[1] - q[0], q[2] - q[0]);
        if (dot(n_before, n_after) <= 0) return false;
      }
    }
    return true;
  }

  void collapse(const Candidate& cand) {
    int a = cand.a, b = cand.b;
    pos[a] = cand.pos;
    quadric[a] += quadric[b];
    vert_alive[b] = 0;
    --alive_verts;
    ++version[a];
    ++version[b];
    for (int f : faces_of[b]) {
      if (!face_alive[f]) continue;
      auto& t = face[f];
      bool has_a = (t[0] == a || t[1] == a || t[2] == a);
      if (has_a) {
        face_alive[f] = 0;
        continue;
      }
      for (int c = 0; c < 3; ++c)
        if (t[c] == b) t[c] = a;
      faces_of[a].push_back(f);
    }
    faces_of[b].clear();
    push_edges_of(a);
  }

  SimplifyResult run(int target_vertices) {
    for (int v = 0; v < static_cast<int>(pos.size()); ++v)
      if (vert_alive[v])
        for (int w : neighbors(v))
          if (v < w) queue.push(make_candidate(v, w));

    SimplifyResult result;
    while (alive_verts > target_vertices && !queue.empty()) {
      Candidate cand = queue.top();
      queue.pop();
      if (!vert_alive[cand.a] || !vert_alive[cand.b]) continue;
      if (cand.va != version[cand.a] || cand.vb != version[cand.b]) continue;  // stale
      if (!collapse_legal(cand.a, cand.b, cand.pos)) continue;
      collapse(cand);
      result.collapse_costs.push_back(cand.cost);
    }
    result.reached_target = (alive_verts <= target_vertices);

    std::vector<int> remap(pos.size(), -1);
    for (size_t v = 0; v < pos.size(); ++v) {
      if (!vert_alive[v]) continue;
      remap[v] = result.mesh.n_vertices();
      result.mesh.vertices.push_back(pos[v]);
    }
    for (size_t f = 0; f < face.size(); ++f) {
      if (!face_alive[f]) continue;
      result.mesh.faces.push_back({remap[face[f][0]], remap[face[f][1]], remap[face[f][2]]});
    }
    return result;
  }
};

}  // namespace

SimplifyResult qem_simplify(const Mesh& mesh, int target_vertices, const QemOptions& options) {
  validate_mesh(mesh);
  if (target_vertices < 4 || target_vertices > mesh.n_vertices())
    throw UsageError("qem_simplify: target_vertices=" + std::to_string(target_vertices) +
                     " outside [4, " + std::to_string(mesh.n_vertices()) + "]");
  Collapser c(mesh, options);
  return c.run(target_vertices);
}

std::vector<Vec3> simplified_targets(const Mesh& mesh, int target_vertices,
                                     const QemOptions& options) {
  return qem_simplify(mesh, target_vertices, options).mesh.vertices;
}

std::vector<std::pair<double, std::array<int, 2>>> initial_edge_costs(const Mesh& mesh,
                                                                      const QemOptions& options) {
  validate_mesh(mesh);
  Collapser c(mesh, options);
  std::vector<std::pair<double, std::array<int, 2>>> out;
  for (const auto& e : unique_edges(mesh)) {
    Candidate cand = c.make_candidate(e[0], e[1]);
    out.push_back({cand.cost, {e[0], e[1]}});
  }
  return out;
}

}  // namespace anchorcloth
