#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "anchorcloth/geometry.hpp"
#include "test_util.hpp"

using namespace anchorcloth;

TEST_CASE("vec3 and mat3 basics") {
  Vec3 a{1, 2, 3}, b{-2, 0.5, 4};
  CHECK(dot(a, b) == doctest::Approx(11.0));
  Vec3 c = cross(Vec3{1, 0, 0}, Vec3{0, 1, 0});
  CHECK(c.x == 0);
  CHECK(c.y == 0);
  CHECK(c.z == 1);
  CHECK(norm(Vec3{3, 4, 0}) == doctest::Approx(5.0));
  CHECK(dist(a, a) == 0.0);

  Mat3 i = Mat3::identity();
  CHECK(rotation_defect(i) == doctest::Approx(0.0));
  Vec3 r = i * a;
  CHECK(dist(r, a) == 0.0);
  Mat3 m = i * 2.0;
  CHECK((m * a).x == doctest::Approx(2.0));
  CHECK(m.det() == doctest::Approx(8.0));
  CHECK(dist(m.transposed() * a, m * a) == doctest::Approx(0.0));

  CHECK(dist(normalized(Vec3{0, 0, 0}), Vec3{0, 0, 1}) == 0.0);
  CHECK(norm(normalized(Vec3{5, -2, 1})) == doctest::Approx(1.0));
}

TEST_CASE("rng determinism and splitting") {
  Rng a(42), b(42), c(43);
  CHECK(a.next_u64() == b.next_u64());
  CHECK(a.next_u64() == b.next_u64());
  Rng a1 = a.split(1), b1 = b.split(1);
  CHECK(a1.next_u64() == b1.next_u64());
  Rng a2 = a.split(2);
  CHECK(a1.next_u64() != a2.next_u64());
  (void)c;
  double u = a.uniform(2.0, 3.0);
  CHECK(u >= 2.0);
  CHECK(u < 3.0);
  for (int i = 0; i < 100; ++i) {
    int v = a.uniform_int(7);
    CHECK(v >= 0);
    CHECK(v < 7);
  }
}

TEST_CASE("grid mesh structure") {
  Mesh g = testutil::flat_grid(4, 3, 0.5);
  CHECK(g.n_vertices() == 12);
  CHECK(g.n_faces() == 2 * 3 * 2);
  // vertex index = iy * nx + ix
  CHECK(dist(g.vertices[1 * 4 + 2], Vec3{1.0, 0.0, 0.5}) == doctest::Approx(0.0));
  validate_mesh(g);

  // counter-clockwise seen from +z when the grid maps to the xy-plane
  Mesh plane = grid_mesh(3, 3, [](int ix, int iy) {
    return Vec3{static_cast<double>(ix), static_cast<double>(iy), 0.0};
  });
  for (const auto& f : plane.faces) {
    Vec3 n = cross(plane.vertices[f[1]] - plane.vertices[f[0]],
                   plane.vertices[f[2]] - plane.vertices[f[0]]);
    CHECK(n.z > 0.0);
  }
}

TEST_CASE("validate_mesh rejects bad faces") {
  Mesh m = testutil::flat_grid(2, 2, 1.0);
  Mesh bad = m;
  bad.faces.push_back({0, 1, 4});
  CHECK_THROWS_AS(validate_mesh(bad), UsageError);
  bad = m;
  bad.faces.push_back({1, 1, 2});
  CHECK_THROWS_AS(validate_mesh(bad), UsageError);
}

TEST_CASE("obj io round trip") {
  testutil::TempDir tmp("obj");
  Mesh m = testutil::icosphere(1);
  std::string path = tmp.file("sphere.obj");
  save_obj(m, path);
  Mesh back = load_obj(path);
  REQUIRE(back.n_vertices() == m.n_vertices());
  REQUIRE(back.faces == m.faces);
  for (int i = 0; i < m.n_vertices(); ++i)
    CHECK(dist(back.vertices[i], m.vertices[i]) < 1e-6);  // 6 fractional digits

  // byte-stable save
  std::string path2 = tmp.file("sphere2.obj");
  save_obj(back, path2);
  CHECK(testutil::read_file_bytes(path2) == testutil::read_file_bytes(path));
}

TEST_CASE("obj reader subset handling") {
  testutil::TempDir tmp("objr");
  std::string path = tmp.file("mixed.obj");
  {
    std::ofstream out(path);
    out << "# comment\n\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\ng group\n"
        << "f 1 2 3\n";
  }
  ObjReadStats stats;
  Mesh m = load_obj(path, &stats);
  CHECK(m.n_vertices() == 3);
  CHECK(m.n_faces() == 1);
  CHECK(m.faces[0] == std::array<int, 3>{0, 1, 2});
  CHECK(stats.ignored_records == 3);

  std::string bad = tmp.file("bad.obj");
  {
    std::ofstream out(bad);
    out << "v 0 0 0\nv 1 oops 0\n";
  }
  CHECK_THROWS_WITH_AS(load_obj(bad), doctest::Contains("2"), UsageError);
  CHECK_THROWS_AS(load_obj(tmp.file("missing.obj")), UsageError);
}

TEST_CASE("unique edges of a grid") {
  int nx = 5, ny = 4;
  Mesh g = testutil::flat_grid(nx, ny, 1.0);
  auto edges = unique_edges(g);
  // horizontals + verticals + one diagonal per quad
  int expected = (nx - 1) * ny + (ny - 1) * nx + (nx - 1) * (ny - 1);
  CHECK(static_cast<int>(edges.size()) == expected);
  for (size_t i = 0; i < edges.size(); ++i) {
    CHECK(edges[i][0] < edges[i][1]);
    if (i > 0) CHECK(edges[i - 1] < edges[i]);
  }
}

TEST_CASE("vertex adjacency is symmetric and sorted") {
  Mesh g = testutil::flat_grid(4, 4, 1.0);
  VertexAdjacency adj = vertex_adjacency(g);
  REQUIRE(adj.size() == static_cast<size_t>(g.n_vertices()));
  for (int i = 0; i < g.n_vertices(); ++i) {
    CHECK(std::is_sorted(adj[i].begin(), adj[i].end()));
    for (int j : adj[i]) {
      CHECK(j != i);
      CHECK(std::binary_search(adj[j].begin(), adj[j].end(), i));
    }
  }
  // interior vertex of the grid touches 4 axis neighbors + 2 diagonal ones
  CHECK(adj[1 * 4 + 1].size() == 6);
}

TEST_CASE("vertex normals") {
  Mesh plane = grid_mesh(4, 4, [](int ix, int iy) {
    return Vec3{static_cast<double>(ix), static_cast<double>(iy), 0.0};
  });
  std::vector<Vec3> n = vertex_normals(plane);
  for (const Vec3& v : n) {
    CHECK(v.z == doctest::Approx(1.0));
    CHECK(norm(v) == doctest::Approx(1.0));
  }

  Mesh sphere = testutil::icosphere(2);
  std::vector<Vec3> sn = vertex_normals(sphere);
  for (int i = 0; i < sphere.n_vertices(); ++i) {
    // outward radial within a few degrees on a subdivided icosphere
    CHECK(dot(sn[i], normalized(sphere.vertices[i])) > 0.99);
    CHECK(norm(sn[i]) == doctest::Approx(1.0));
  }

  Mesh lonely = plane;
  lonely.vertices.push_back(Vec3{9, 9, 9});
  int fallbacks = 0;
  std::vector<Vec3> ln = vertex_normals(lonely, &fallbacks);
  CHECK(fallbacks == 1);
  CHECK(dist(ln.back(), Vec3{0, 0, 1}) == 0.0);
}

TEST_CASE("graph laplacian") {
  Mesh g = testutil::flat_grid(5, 5, 0.3);
  std::vector<Vec3> lap = graph_laplacian(g);
  // interior vertices of a uniform grid: neighbor mean equals the vertex
  for (int iy = 1; iy < 4; ++iy)
    for (int ix = 1; ix < 4; ++ix) CHECK(norm(lap[iy * 5 + ix]) < 1e-12);

  // hand-checked path graph
  VertexAdjacency adj = {{1}, {0, 2}, {1}};
  std::vector<Vec3> pos = {{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
  std::vector<Vec3> l = graph_laplacian(adj, pos);
  CHECK(l[0].x == doctest::Approx(1.0));
  CHECK(l[1].x == doctest::Approx(0.5));  // (0 + 3)/2 - 1
  CHECK(l[2].x == doctest::Approx(-2.0));

  VertexAdjacency iso = {{}};
  std::vector<Vec3> ipos = {{5, 5, 5}};
  CHECK(norm(graph_laplacian(iso, ipos)[0]) == 0.0);
}

TEST_CASE("knn matches an independent sort") {
  Rng rng(7);
  std::vector<Vec3> pts = testutil::random_points(&rng, 60);
  Vec3 q{0.1, -0.2, 0.05};
  for (int k : {1, 5, 60}) {
    std::vector<int> got = knn(q, pts, k);
    std::vector<std::pair<double, int>> order;
    for (int i = 0; i < 60; ++i) order.push_back({dist2(q, pts[i]), i});
    std::sort(order.begin(), order.end());
    REQUIRE(static_cast<int>(got.size()) == k);
    for (int i = 0; i < k; ++i) CHECK(got[i] == order[i].second);
  }
  CHECK_THROWS_AS(knn(q, pts, 0), UsageError);
  CHECK_THROWS_AS(knn(q, pts, 61), UsageError);
}
