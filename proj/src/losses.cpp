#include "anchorcloth/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace anchorcloth {

namespace {

int nearest_index(const Vec3& p, const std::vector<Vec3>& pts) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
    double d = dist2(p, pts[i]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace

ad::Tensor loss_rec(ad::Tensor pred, ad::Tensor gt) {
  ad::Tape& tape = *pred.tape;
  int m = tape.rows(pred);
  return ad::scale(ad::norm_sq(ad::sub(pred, gt)), 1.0 / m);
}

ad::Tensor loss_lap(ad::Tensor pred, std::shared_ptr<const VertexAdjacency> adjacency,
                    const std::vector<Vec3>& gt_laplacian) {
  ad::Tape& tape = *pred.tape;
  int m = tape.rows(pred);
  if (static_cast<int>(gt_laplacian.size()) != m)
    throw std::invalid_argument("loss_lap: ground-truth Laplacian size mismatch");
  ad::Tensor lap = ad::graph_laplacian_op(pred, adjacency);
  ad::Tensor target = tape.points(gt_laplacian);
  return ad::scale(ad::norm_sq(ad::sub(lap, target)), 1.0 / m);
}

ad::Tensor loss_collision(ad::Tensor pred, const std::vector<Vec3>& body_vertices,
                          const std::vector<Vec3>& body_normals, double margin) {
  ad::Tape& tape = *pred.tape;
  if (body_vertices.empty() || body_vertices.size() != body_normals.size())
    throw std::invalid_argument("loss_collision: body vertices/normals mismatch");
  std::vector<Vec3> pts = tape.val_points(pred);
  int m = static_cast<int>(pts.size());
  // The body association is decided here, on current values, and stays fixed
  // through the backward pass.
  std::vector<Vec3> nearest(m), normals(m);
  for (int i = 0; i < m; ++i) {
    int j = nearest_index(pts[i], body_vertices);
    nearest[i] = body_vertices[j];
    normals[i] = body_normals[j];
  }
  ad::Tensor b = tape.points(nearest);
  ad::Tensor n = tape.points(normals);
  ad::Tensor depth = ad::row_dot(ad::sub(pred, b), n);          // (m,1)
  ad::Tensor hinge = ad::relu(ad::add_scalar(ad::neg(depth), margin));
  return ad::mean(ad::square(hinge));
}

ad::Tensor loss_consis(ad::Tensor p_g, ad::Tensor n_g, const std::vector<Vec3>& p_tgt,
                       const std::vector<Vec3>& n_tgt, double gamma) {
  ad::Tape& tape = *p_g.tape;
  int n = tape.rows(p_g);
  if (static_cast<int>(p_tgt.size()) != n || static_cast<int>(n_tgt.size()) != n)
    throw std::invalid_argument("loss_consis: target size mismatch");
  ad::Tensor pos = ad::scale(ad::norm_sq(ad::sub(p_g, tape.points(p_tgt))), 1.0 / n);
  ad::Tensor nrm = ad::scale(ad::norm_sq(ad::sub(n_g, tape.points(n_tgt))), gamma / n);
  return ad::add(pos, nrm);
}

ad::Tensor loss_dir(ad::Tensor p_g, const std::vector<Vec3>& p_tgt,
                    const std::vector<Vec3>& n_tgt) {
  ad::Tape& tape = *p_g.tape;
  int n = tape.rows(p_g);
  if (static_cast<int>(p_tgt.size()) != n || static_cast<int>(n_tgt.size()) != n)
    throw std::invalid_argument("loss_dir: target size mismatch");
  ad::Tensor offset = ad::sub(p_g, tape.points(p_tgt));
  // cosine_similarity returns 1 (zero grad) for near-zero offsets, so anchors
  // sitting on their target contribute nothing.
  ad::Tensor cos = ad::cosine_similarity(offset, tape.points(n_tgt));
  return ad::mean(ad::add_scalar(ad::neg(cos), 1.0));
}

ad::Tensor loss_anchor_chamfer(ad::Tensor anchor_positions,
                               std::shared_ptr<const std::vector<Vec3>> targets) {
  return ad::chamfer(anchor_positions, std::move(targets));
}

ad::Tensor total_loss(const LossComponents& c, const LossWeights& w, Stage stage) {
  ad::Tensor total;
  auto accumulate = [&total](ad::Tensor term, double weight) {
    if (!term.valid() || weight == 0.0) return;
    ad::Tensor scaled = ad::scale(term, weight);
    total = total.valid() ? ad::add(total, scaled) : scaled;
  };
  accumulate(c.rec, 1.0);
  accumulate(c.lap, w.beta1);
  accumulate(c.consis, w.lambda1);
  accumulate(c.anch, w.lambda3);
  if (stage == Stage::late) {
    accumulate(c.collision, w.beta2);
    accumulate(c.dir, w.lambda2);
  }
  if (!total.valid()) throw std::invalid_argument("total_loss: no components");
  return total;
}

AnchorFramePoints transformed_anchors(const AnchorSet& anchors,
                                      const std::vector<RigidTransform>& transforms,
                                      const Mesh& mesh, const std::vector<Vec3>& template_pos,
                                      const std::vector<Vec3>& pred_pos,
                                      const std::vector<Vec3>& gt_pos) {
  int n = anchors.n_anchors;
  if (static_cast<int>(transforms.size()) != n)
    throw std::invalid_argument("transformed_anchors: transform count mismatch");
  AnchorFramePoints out;
  out.p.resize(n);
  out.p_g.resize(n);
  out.p_tgt.resize(n);
  out.n_g.resize(n);
  out.n_tgt.resize(n);
  std::vector<Vec3> pred_normals = vertex_normals_at(mesh, pred_pos);
  std::vector<Vec3> gt_normals = vertex_normals_at(mesh, gt_pos);
  std::vector<double> row(anchors.k_neighbors);
  for (int i = 0; i < n; ++i) {
    const std::vector<int>& nbr = anchors.neighbor_indices[i];
    for (int k = 0; k < anchors.k_neighbors; ++k)
      row[k] = anchors.alpha[i * anchors.k_neighbors + k];
    std::vector<double> w = softmax(row);
    Vec3 p, tgt, ng, ntgt;
    for (int k = 0; k < anchors.k_neighbors; ++k) {
      p += w[k] * template_pos[nbr[k]];
      tgt += w[k] * gt_pos[nbr[k]];
      ng += w[k] * pred_normals[nbr[k]];
      ntgt += w[k] * gt_normals[nbr[k]];
    }
    out.p[i] = p;
    out.p_g[i] = transforms[i].apply(p);
    out.p_tgt[i] = tgt;
    out.n_g[i] = normalized(ng);
    out.n_tgt[i] = normalized(ntgt);
  }
  return out;
}

double metric_rmse(const std::vector<std::vector<Vec3>>& pred,
                   const std::vector<std::vector<Vec3>>& gt) {
  if (pred.size() != gt.size() || pred.empty())
    throw std::invalid_argument("metric_rmse: frame count mismatch");
  double acc = 0.0;
  long count = 0;
  for (size_t f = 0; f < pred.size(); ++f) {
    if (pred[f].size() != gt[f].size())
      throw std::invalid_argument("metric_rmse: vertex count mismatch");
    for (size_t i = 0; i < pred[f].size(); ++i) {
      Vec3 d = pred[f][i] - gt[f][i];
      acc += d.x * d.x + d.y * d.y + d.z * d.z;
      count += 3;
    }
  }
  return std::sqrt(acc / count) * 1000.0;
}

double hausdorff_set(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("hausdorff_set: empty set");
  auto directed = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double worst = 0.0;
    for (const Vec3& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : to) best = std::min(best, dist2(p, q));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::sqrt(std::max(directed(a, b), directed(b, a)));
}

double metric_hausdorff(const std::vector<std::vector<Vec3>>& pred,
                        const std::vector<std::vector<Vec3>>& gt) {
  if (pred.size() != gt.size() || pred.empty())
    throw std::invalid_argument("metric_hausdorff: frame count mismatch");
  double acc = 0.0;
  for (size_t f = 0; f < pred.size(); ++f) acc += hausdorff_set(pred[f], gt[f]);
  return acc / pred.size() * 1000.0;
}

double metric_sted(const std::vector<std::vector<Vec3>>& pred,
                   const std::vector<std::vector<Vec3>>& gt, const Mesh& mesh) {
  if (pred.size() != gt.size() || pred.size() < 2)
    throw std::invalid_argument("metric_sted: needs matching sequences of >= 2 frames");
  std::vector<std::array<int, 2>> edges = unique_edges(mesh);
  if (edges.empty()) throw std::invalid_argument("metric_sted: mesh has no edges");
  size_t frames = pred.size();
  // r[f][e]: relative deviation of edge e's length in frame f.
  std::vector<std::vector<double>> r(frames, std::vector<double>(edges.size()));
  for (size_t f = 0; f < frames; ++f) {
    for (size_t e = 0; e < edges.size(); ++e) {
      auto [i, j] = edges[e];
      double lg = dist(gt[f][i], gt[f][j]);
      if (lg < 1e-12) throw std::invalid_argument("metric_sted: degenerate reference edge");
      double lp = dist(pred[f][i], pred[f][j]);
      r[f][e] = (lp - lg) / lg;
    }
  }
  double spatial = 0.0, temporal = 0.0;
  for (size_t f = 0; f < frames; ++f)
    for (double v : r[f]) spatial += v * v;
  spatial /= static_cast<double>(frames * edges.size());
  for (size_t f = 1; f < frames; ++f)
    for (size_t e = 0; e < edges.size(); ++e) {
      double d = r[f][e] - r[f - 1][e];
      temporal += d * d;
    }
  temporal /= static_cast<double>((frames - 1) * edges.size());
  return std::sqrt(spatial + temporal);
}

int count_penetrations(const std::vector<Vec3>& garment, const std::vector<Vec3>& body_vertices,
                       const std::vector<Vec3>& body_normals, double eps) {
  if (body_vertices.empty() || body_vertices.size() != body_normals.size())
    throw std::invalid_argument("count_penetrations: body vertices/normals mismatch");
  int count = 0;
  for (const Vec3& v : garment) {
    int j = nearest_index(v, body_vertices);
    if (dot(v - body_vertices[j], body_normals[j]) < eps) ++count;
  }
  return count;
}

}  // namespace anchorcloth
