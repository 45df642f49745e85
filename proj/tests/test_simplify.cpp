#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "anchorcloth/simplify.hpp"
#include "test_util.hpp"

using namespace anchorcloth;

TEST_CASE("plane quadric measures squared distance") {
  Vec3 n = normalized(Vec3{1, 2, -2});
  double d = 0.7;  // plane n.p + d = 0
  Quadric q = Quadric::from_plane(n, d);
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    Vec3 p{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    double signed_dist = dot(n, p) + d;
    CHECK(q.eval(p) == doctest::Approx(signed_dist * signed_dist).epsilon(1e-10));
  }
}

TEST_CASE("quadric sum and optimal point") {
  // Three non-parallel planes meet in exactly one point; the summed quadric
  // is minimized there with cost 0.
  Vec3 meet{0.3, -0.5, 1.1};
  Vec3 n1 = normalized(Vec3{1, 0.2, 0}), n2 = normalized(Vec3{0, 1, -0.3}),
       n3 = normalized(Vec3{0.1, 0, 1});
  Quadric q = Quadric::from_plane(n1, -dot(n1, meet));
  q += Quadric::from_plane(n2, -dot(n2, meet));
  q += Quadric::from_plane(n3, -dot(n3, meet));
  Vec3 opt;
  REQUIRE(q.optimal_point(&opt, 1e8));
  CHECK(dist(opt, meet) < 1e-9);
  CHECK(q.eval(opt) < 1e-12);

  // A single plane's quadric is rank deficient: no unique minimizer.
  Quadric flat = Quadric::from_plane(Vec3{0, 1, 0}, 0.0);
  Vec3 unused;
  CHECK_FALSE(flat.optimal_point(&unused, 1e8));
}

TEST_CASE("simplify preserves a flat plane") {
  Mesh grid = testutil::flat_grid(9, 9, 0.1);
  SimplifyResult res = qem_simplify(grid, 20);
  CHECK(res.reached_target);
  CHECK(res.mesh.n_vertices() == 20);
  CHECK(res.collapse_costs.size() == static_cast<size_t>(81 - 20));
  validate_mesh(res.mesh);
  for (const Vec3& v : res.mesh.vertices) CHECK(std::abs(v.y) < 1e-9);
  // the 0.1-spaced 9x9 footprint must survive: corners stay put
  double max_x = 0, max_z = 0;
  for (const Vec3& v : res.mesh.vertices) {
    max_x = std::max(max_x, v.x);
    max_z = std::max(max_z, v.z);
  }
  CHECK(max_x == doctest::Approx(0.8));
  CHECK(max_z == doctest::Approx(0.8));
}

TEST_CASE("simplify keeps a closed surface closed") {
  Mesh sphere = testutil::icosphere(2);  // 162 vertices
  REQUIRE(sphere.n_vertices() == 162);
  SimplifyResult res = qem_simplify(sphere, 40);
  CHECK(res.reached_target);
  CHECK(res.mesh.n_vertices() == 40);
  validate_mesh(res.mesh);

  // Euler characteristic of a sphere: V - E + F = 2, every edge on 2 faces.
  auto edges = unique_edges(res.mesh);
  CHECK(res.mesh.n_vertices() - static_cast<int>(edges.size()) + res.mesh.n_faces() == 2);
  std::map<std::pair<int, int>, int> edge_faces;
  for (const auto& f : res.mesh.faces)
    for (int e = 0; e < 3; ++e) {
      auto key = std::minmax(f[e], f[(e + 1) % 3]);
      edge_faces[key]++;
    }
  for (const auto& [e, count] : edge_faces) CHECK(count == 2);

  // shape roughly preserved: all vertices near the unit sphere
  for (const Vec3& v : res.mesh.vertices) CHECK(norm(v) == doctest::Approx(1.0).epsilon(0.15));

  // collapse costs are reported in execution order and stay small on a sphere
  CHECK(res.collapse_costs.size() == static_cast<size_t>(162 - 40));
}

TEST_CASE("simplify input validation") {
  Mesh grid = testutil::flat_grid(4, 4, 1.0);
  CHECK_THROWS_AS(qem_simplify(grid, 3), UsageError);
  CHECK_THROWS_AS(qem_simplify(grid, 17), UsageError);

  Mesh nonmanifold = grid;
  nonmanifold.vertices.push_back(Vec3{1.5, 1.0, 1.0});
  nonmanifold.faces.push_back({5, 6, 16});  // interior edge (5,6) now borders 3 faces
  CHECK_THROWS_AS(qem_simplify(nonmanifold, 4), UsageError);
}

TEST_CASE("initial edge costs reflect curvature") {
  // Developable surfaces are free to collapse: every merged vertex can land
  // somewhere all accumulated planes agree, so all initial costs vanish.
  Mesh flat = testutil::flat_grid(6, 6, 0.2);
  auto flat_costs = initial_edge_costs(flat);
  CHECK(flat_costs.size() == unique_edges(flat).size());
  for (const auto& [cost, e] : flat_costs) {
    CHECK(cost < 1e-12);
    CHECK(e[0] < e[1]);
  }
  for (const auto& [cost, e] : initial_edge_costs(testutil::ridge_grid(9, 5, 0.1, 0.3)))
    CHECK(cost < 1e-12);

  // A curved surface has no such point: every collapse costs something.
  auto round_costs = initial_edge_costs(testutil::icosphere(1));
  double min_cost = 1e9;
  for (const auto& [cost, e] : round_costs) min_cost = std::min(min_cost, cost);
  CHECK(min_cost > 1e-8);
}

TEST_CASE("surviving vertices hug ridge and boundary") {
  // Simplify a sheet whose curvature is confined to a ridge band and require
  // survivors to sit within one lattice step of the ridge or the border.
  int nx = 31, ny = 13;
  double spacing = 0.05;
  Mesh ridge = testutil::bump_grid(nx, ny, spacing, 0.3, 2.0);
  int mid = nx / 2;

  // The feature set must be a minority of the lattice, otherwise indiscriminate
  // survival would pass on head count alone.
  int feature_count = 0;
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix)
      if (ix <= 1 || ix >= nx - 2 || iy <= 1 || iy >= ny - 2 || std::abs(ix - mid) <= 3)
        ++feature_count;
  CHECK(static_cast<double>(feature_count) / (nx * ny) < 0.6);

  SimplifyResult res = qem_simplify(ridge, 60);
  CHECK(res.reached_target);
  int near_feature = 0;
  for (const Vec3& v : res.mesh.vertices) {
    double ix = v.x / spacing, iy = v.z / spacing;
    bool boundary = ix < 1.5 || ix > nx - 2.5 || iy < 1.5 || iy > ny - 2.5;
    bool crease = std::abs(ix - mid) < 3.5;
    if (boundary || crease) ++near_feature;
  }
  double frac = static_cast<double>(near_feature) / res.mesh.n_vertices();
  CHECK(frac >= 0.7);
}

TEST_CASE("simplified_targets matches qem_simplify positions") {
  Mesh sphere = testutil::icosphere(1);
  std::vector<Vec3> targets = simplified_targets(sphere, 12);
  SimplifyResult res = qem_simplify(sphere, 12);
  REQUIRE(targets.size() == res.mesh.vertices.size());
  for (size_t i = 0; i < targets.size(); ++i)
    CHECK(dist(targets[i], res.mesh.vertices[i]) == 0.0);
}
