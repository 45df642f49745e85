#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "anchorcloth/losses.hpp"
#include "test_util.hpp"

using namespace anchorcloth;
using namespace anchorcloth::ad;

TEST_CASE("reconstruction loss is the per-vertex mean squared distance") {
  Tape tape;
  Tensor pred = tape.points({{1, 0, 0}, {0, 2, 0}});
  Tensor gt = tape.points({{0, 0, 0}, {0, 0, 0}});
  // (1 + 4) / 2 vertices
  CHECK(tape.scalar_val(loss_rec(pred, gt)) == doctest::Approx(2.5));

  Tape t2;
  Tensor same = t2.points({{0.3, -0.7, 2.0}});
  CHECK(t2.scalar_val(loss_rec(same, t2.points({{0.3, -0.7, 2.0}}))) == 0.0);
}

TEST_CASE("laplacian loss compares smoothness against the reference") {
  Mesh mesh = testutil::flat_grid(4, 4, 0.25);
  auto adj = std::make_shared<const VertexAdjacency>(vertex_adjacency(mesh));
  std::vector<Vec3> gt_lap = graph_laplacian(*adj, mesh.vertices);

  // prediction equal to the reference: zero loss
  Tape tape;
  Tensor pred = tape.points(mesh.vertices);
  CHECK(tape.scalar_val(loss_lap(pred, adj, gt_lap)) == doctest::Approx(0.0));

  // perturbed prediction: matches the explicit formula
  Rng rng(3);
  std::vector<Vec3> noisy = mesh.vertices;
  for (Vec3& v : noisy)
    v += Vec3{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
  std::vector<Vec3> noisy_lap = graph_laplacian(*adj, noisy);
  double expect = 0.0;
  for (int i = 0; i < mesh.n_vertices(); ++i) expect += dist2(noisy_lap[i], gt_lap[i]);
  expect /= mesh.n_vertices();
  Tape t2;
  Tensor p2 = t2.points(noisy);
  CHECK(t2.scalar_val(loss_lap(p2, adj, gt_lap)) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("collision loss hinges on margin minus depth") {
  // flat body at z = 0 with +z normals; garment vertices at hand-picked depths
  std::vector<Vec3> body, normals;
  for (int x = -2; x <= 2; ++x)
    for (int y = -2; y <= 2; ++y) {
      body.push_back(Vec3{static_cast<double>(x), static_cast<double>(y), 0.0});
      normals.push_back(Vec3{0, 0, 1});
    }
  double margin = 0.1;
  std::vector<double> depths = {-0.2, 0.02, 0.3, -0.05};
  std::vector<Vec3> garment;
  for (double d : depths) garment.push_back(Vec3{0.1, 0.1, d});

  Tape tape;
  Tensor pred = tape.points(garment);
  double got = tape.scalar_val(loss_collision(pred, body, normals, margin));
  double expect = 0.0;
  for (double d : depths) {
    double h = std::max(0.0, margin - d);
    expect += h * h;
  }
  expect /= depths.size();
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));

  CHECK_THROWS(loss_collision(pred, {}, {}, margin));
}

TEST_CASE("collision gradient pushes penetrating vertices out") {
  std::vector<Vec3> body = {{0, 0, 0}};
  std::vector<Vec3> normals = {{0, 0, 1}};
  Tape tape;
  Tensor pred = tape.points({{0, 0, -0.2}, {0, 0, 0.5}});
  tape.backward(loss_collision(pred, body, normals, 0.1));
  std::vector<double> g = tape.grad(pred);
  CHECK(g[2] < 0.0);   // moving +z reduces the loss, so d(loss)/dz < 0
  CHECK(g[5] == 0.0);  // outside the margin: inactive hinge
  CHECK(g[0] == 0.0);  // tangential coordinates unaffected by a +z normal
  CHECK(g[3] == 0.0);
}

TEST_CASE("consistency loss blends position and normal terms") {
  std::vector<Vec3> p_tgt = {{1, 0, 0}, {0, 1, 0}};
  std::vector<Vec3> n_tgt = {{0, 0, 1}, {1, 0, 0}};
  Tape tape;
  Tensor p_g = tape.points({{1.2, 0, 0}, {0, 0.7, 0}});
  Tensor n_g = tape.points({{0, 0.1, 1.0}, {1, 0, 0}});
  double gamma = 0.1;
  double pos = (0.2 * 0.2 + 0.3 * 0.3) / 2.0;
  double nrm = (0.1 * 0.1 + 0.0) / 2.0;
  double got = tape.scalar_val(loss_consis(p_g, n_g, p_tgt, n_tgt, gamma));
  CHECK(got == doctest::Approx(pos + gamma * nrm).epsilon(1e-12));

  CHECK_THROWS(loss_consis(p_g, n_g, {{0, 0, 0}}, n_tgt, gamma));
}

TEST_CASE("direction penalty measures misalignment with the target normal") {
  std::vector<Vec3> p_tgt = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}, {5, 5, 5}};
  std::vector<Vec3> n_tgt = {{0, 0, 1}, {0, 0, 1}, {0, 0, 1}, {0, 0, 1}};
  Tape tape;
  // offsets: along the normal (cos 1), orthogonal (cos 0), against (cos -1),
  // and exactly on target (treated as aligned)
  Tensor p_g = tape.points({{0, 0, 0.4}, {0.4, 0, 0}, {0, 0, -0.4}, {5, 5, 5}});
  double got = tape.scalar_val(loss_dir(p_g, p_tgt, n_tgt));
  CHECK(got == doctest::Approx((0.0 + 1.0 + 2.0 + 0.0) / 4.0).epsilon(1e-12));

  // gradient exists for the misaligned anchor and vanishes on target
  tape.backward(loss_dir(p_g, p_tgt, n_tgt));
  std::vector<double> g = tape.grad(p_g);
  CHECK(std::abs(g[3 * 1 + 2]) > 0.0);  // orthogonal offset: pulled toward +z
  CHECK(g[3 * 3 + 0] == 0.0);
  CHECK(g[3 * 3 + 1] == 0.0);
  CHECK(g[3 * 3 + 2] == 0.0);
}

TEST_CASE("anchor chamfer equals the brute-force symmetric sum") {
  Rng rng(9);
  std::vector<Vec3> anchors_v = testutil::random_points(&rng, 6, 0.8);
  std::vector<Vec3> targets = testutil::random_points(&rng, 9, 0.8);
  double expect = 0.0;
  for (const Vec3& a : anchors_v) {
    double best = 1e18;
    for (const Vec3& t : targets) best = std::min(best, dist2(a, t));
    expect += best;
  }
  for (const Vec3& t : targets) {
    double best = 1e18;
    for (const Vec3& a : anchors_v) best = std::min(best, dist2(a, t));
    expect += best;
  }
  Tape tape;
  Tensor a = tape.points(anchors_v);
  double got = tape.scalar_val(
      loss_anchor_chamfer(a, std::make_shared<const std::vector<Vec3>>(targets)));
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("total loss applies stage gating and weights") {
  LossWeights w;
  w.beta1 = 0.2;
  w.beta2 = 1.0;
  w.gamma = 0.1;
  w.lambda1 = 1.0;
  w.lambda2 = 0.01;
  w.lambda3 = 100.0;

  auto build = [&](Stage stage, double* out_val, std::vector<double>* out_grads) {
    Tape tape;
    LossComponents c;
    c.rec = tape.scalar(2.0);
    c.lap = tape.scalar(3.0);
    c.collision = tape.scalar(5.0);
    c.consis = tape.scalar(7.0);
    c.dir = tape.scalar(11.0);
    c.anch = tape.scalar(13.0);
    Tensor total = total_loss(c, w, stage);
    *out_val = tape.scalar_val(total);
    tape.backward(total);
    *out_grads = {tape.grad(c.rec)[0],    tape.grad(c.lap)[0], tape.grad(c.collision)[0],
                  tape.grad(c.consis)[0], tape.grad(c.dir)[0], tape.grad(c.anch)[0]};
  };

  double early_val, late_val;
  std::vector<double> early_g, late_g;
  build(Stage::early, &early_val, &early_g);
  build(Stage::late, &late_val, &late_g);

  CHECK(early_val == doctest::Approx(2.0 + 0.2 * 3.0 + 1.0 * 7.0 + 100.0 * 13.0));
  CHECK(late_val == doctest::Approx(early_val + 1.0 * 5.0 + 0.01 * 11.0));

  CHECK(early_g[0] == doctest::Approx(1.0));
  CHECK(early_g[1] == doctest::Approx(0.2));
  CHECK(early_g[2] == 0.0);  // collision sees no gradient before the late stage
  CHECK(early_g[3] == doctest::Approx(1.0));
  CHECK(early_g[4] == 0.0);  // direction penalty likewise
  CHECK(early_g[5] == doctest::Approx(100.0));
  CHECK(late_g[2] == doctest::Approx(1.0));
  CHECK(late_g[4] == doctest::Approx(0.01));

  // missing components are skipped
  Tape tape;
  LossComponents only_rec;
  only_rec.rec = tape.scalar(4.0);
  CHECK(tape.scalar_val(total_loss(only_rec, w, Stage::early)) == doctest::Approx(4.0));
  LossComponents none;
  CHECK_THROWS(total_loss(none, w, Stage::early));
}

TEST_CASE("transformed anchors assemble the consistency ingredients") {
  Mesh mesh = testutil::bump_grid(5, 5, 0.1, 0.12, 1.0);
  AnchorSet set = build_anchor_set(mesh, 3, 6, 2, 17);
  Rng rng(18);
  for (double& a : set.alpha) a = rng.uniform(-0.4, 0.4);
  recompute_positions(&set, mesh.vertices);

  std::vector<Vec3> pred = mesh.vertices, gt = mesh.vertices;
  for (Vec3& v : pred) v += Vec3{0.01, -0.02, 0.03};
  for (Vec3& v : gt) v += Vec3{-0.03, 0.05, 0.01};
  std::vector<RigidTransform> xf(3);
  xf[1].t = Vec3{0, 0.5, 0};

  AnchorFramePoints out = transformed_anchors(set, xf, mesh, mesh.vertices, pred, gt);
  std::vector<Vec3> pred_n = vertex_normals_at(mesh, pred);
  std::vector<Vec3> gt_n = vertex_normals_at(mesh, gt);
  for (int i = 0; i < 3; ++i) {
    std::vector<double> row(set.alpha.begin() + i * set.k_neighbors,
                            set.alpha.begin() + (i + 1) * set.k_neighbors);
    std::vector<double> w = softmax(row);
    Vec3 p{}, tgt{}, ng{}, ntgt{};
    for (int k = 0; k < set.k_neighbors; ++k) {
      int v = set.neighbor_indices[i][k];
      p += w[k] * mesh.vertices[v];
      tgt += w[k] * gt[v];
      ng += w[k] * pred_n[v];
      ntgt += w[k] * gt_n[v];
    }
    CHECK(dist(out.p[i], p) < 1e-12);
    CHECK(dist(out.p_g[i], xf[i].apply(p)) < 1e-12);
    CHECK(dist(out.p_tgt[i], tgt) < 1e-12);
    CHECK(dist(out.n_g[i], normalized(ng)) < 1e-12);
    CHECK(dist(out.n_tgt[i], normalized(ntgt)) < 1e-12);
    CHECK(norm(out.n_g[i]) == doctest::Approx(1.0));
  }
  CHECK(dist(out.p_g[1] - out.p[1], Vec3{0, 0.5, 0}) < 1e-12);
}

TEST_CASE("rmse metric in millimeters") {
  std::vector<std::vector<Vec3>> pred = {{{0.003, 0, 0}, {0, 0.004, 0}}};
  std::vector<std::vector<Vec3>> gt = {{{0, 0, 0}, {0, 0, 0}}};
  // acc = 9e-6 + 16e-6 over 6 coordinates
  CHECK(metric_rmse(pred, gt) == doctest::Approx(std::sqrt(25e-6 / 6.0) * 1000.0));
  CHECK(metric_rmse(gt, gt) == 0.0);
  CHECK_THROWS(metric_rmse(pred, {}));
  CHECK_THROWS(metric_rmse(pred, {{{0, 0, 0}}}));
}

TEST_CASE("hausdorff metric") {
  std::vector<Vec3> a = {{0, 0, 0}, {1, 0, 0}};
  std::vector<Vec3> b = {{0, 0, 0}, {4, 0, 0}};
  // a->b worst: vertex (1,0,0) to nearest (0,0,0) = 1; b->a worst: (4,0,0) to (1,0,0) = 3
  CHECK(hausdorff_set(a, b) == doctest::Approx(3.0));
  CHECK(hausdorff_set(b, a) == doctest::Approx(3.0));
  CHECK_THROWS(hausdorff_set(a, {}));

  std::vector<std::vector<Vec3>> pa = {a, a}, pb = {b, a};
  CHECK(metric_hausdorff(pa, pb) == doctest::Approx((3.0 + 0.0) / 2.0 * 1000.0));
}

TEST_CASE("sted metric catches stretched and flickering edges") {
  Mesh mesh = testutil::flat_grid(3, 3, 0.2);
  std::vector<std::vector<Vec3>> gt = {mesh.vertices, mesh.vertices, mesh.vertices};

  CHECK(metric_sted(gt, gt, mesh) == doctest::Approx(0.0));

  // uniform 5% stretch in every frame: spatial term only
  std::vector<std::vector<Vec3>> stretched;
  for (int f = 0; f < 3; ++f) {
    std::vector<Vec3> frame = mesh.vertices;
    for (Vec3& v : frame) v *= 1.05;
    stretched.push_back(frame);
  }
  CHECK(metric_sted(stretched, gt, mesh) == doctest::Approx(0.05).epsilon(1e-9));

  // alternating stretch: relative deviation flips between 0.05 and -0.05,
  // temporal mean-square of the 0.1 jumps joins the constant spatial term
  std::vector<std::vector<Vec3>> flicker;
  for (int f = 0; f < 3; ++f) {
    std::vector<Vec3> frame = mesh.vertices;
    double s = f % 2 == 0 ? 1.05 : 0.95;
    for (Vec3& v : frame) v *= s;
    flicker.push_back(frame);
  }
  double spatial = 0.05 * 0.05;
  double temporal = 0.1 * 0.1;
  CHECK(metric_sted(flicker, gt, mesh) == doctest::Approx(std::sqrt(spatial + temporal)).epsilon(1e-9));

  CHECK_THROWS(metric_sted({mesh.vertices}, {mesh.vertices}, mesh));
}

TEST_CASE("penetration counter") {
  std::vector<Vec3> body = {{0, 0, 0}, {1, 0, 0}};
  std::vector<Vec3> normals = {{0, 0, 1}, {0, 0, 1}};
  std::vector<Vec3> garment = {{0, 0, -0.1}, {1, 0, 0.2}, {0.9, 0, 0.0}, {0, 0, -1e-9}};
  CHECK(count_penetrations(garment, body, normals, 0.0) == 2);
  CHECK(count_penetrations(garment, body, normals, 0.05) == 3);
  CHECK(count_penetrations({}, body, normals) == 0);
  CHECK_THROWS(count_penetrations(garment, {}, {}));
}
