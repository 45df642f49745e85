#pragma once

// Training losses (taped, differentiable) and evaluation metrics (values).
// Positions are in meters; RMSE and Hausdorff metrics report millimeters.

#include <memory>
#include <vector>

#include "anchorcloth/anchors.hpp"
#include "anchorcloth/autodiff.hpp"
#include "anchorcloth/geometry.hpp"
#include "anchorcloth/skinning.hpp"

namespace anchorcloth {

struct LossWeights {
  double beta1 = 0.2;    // Laplacian term inside the vertex loss
  double beta2 = 1.0;    // collision term inside the vertex loss (late stage)
  double gamma = 0.1;    // normal part of the consistency loss
  double lambda1 = 1.0;  // consistency loss
  double lambda2 = 0.01; // direction penalty (late stage)
  double lambda3 = 100.0;       // anchor Chamfer loss
  double collision_margin = 0.002;  // meters
};

enum class Stage { early, late };

// Mean over vertices of squared Euclidean distance.
ad::Tensor loss_rec(ad::Tensor pred, ad::Tensor gt);

// Mean over vertices of squared difference between uniform Laplacians; the
// ground-truth Laplacian is passed as a constant.
ad::Tensor loss_lap(ad::Tensor pred, std::shared_ptr<const VertexAdjacency> adjacency,
                    const std::vector<Vec3>& gt_laplacian);

// Mean over vertices of max(0, margin - (v - b) . n_b)^2, where b is the
// body vertex nearest to v (chosen at forward time) and n_b its normal.
ad::Tensor loss_collision(ad::Tensor pred, const std::vector<Vec3>& body_vertices,
                          const std::vector<Vec3>& body_normals, double margin);

// Mean over anchors of |p_g - p_tgt|^2 + gamma |n_g - n_tgt|^2 with constant
// targets.
ad::Tensor loss_consis(ad::Tensor p_g, ad::Tensor n_g, const std::vector<Vec3>& p_tgt,
                       const std::vector<Vec3>& n_tgt, double gamma);

// Mean over anchors of 1 - cos(p_g - p_tgt, n_tgt); anchors already on target
// (offset below 1e-9) contribute 0.
ad::Tensor loss_dir(ad::Tensor p_g, const std::vector<Vec3>& p_tgt,
                    const std::vector<Vec3>& n_tgt);

// Symmetric summed Chamfer between anchor positions and a fixed target set.
ad::Tensor loss_anchor_chamfer(ad::Tensor anchor_positions,
                               std::shared_ptr<const std::vector<Vec3>> targets);

// Any component may be left invalid ({}): it is skipped. The collision and
// direction components only enter in the late stage; in the early stage they
// receive no gradient at all.
struct LossComponents {
  ad::Tensor rec, lap, collision, consis, dir, anch;
};

ad::Tensor total_loss(const LossComponents& c, const LossWeights& w, Stage stage);

// ---- anchor targets (value level) ----

struct AnchorFramePoints {
  std::vector<Vec3> p;      // canonical anchor positions from alpha
  std::vector<Vec3> p_g;    // anchors pushed through their transforms
  std::vector<Vec3> p_tgt;  // same attention applied to the deformed mesh
  std::vector<Vec3> n_g;    // attention-blended predicted-mesh normals, unit
  std::vector<Vec3> n_tgt;  // attention-blended ground-truth normals, unit
};

AnchorFramePoints transformed_anchors(const AnchorSet& anchors,
                                      const std::vector<RigidTransform>& transforms,
                                      const Mesh& mesh, const std::vector<Vec3>& template_pos,
                                      const std::vector<Vec3>& pred_pos,
                                      const std::vector<Vec3>& gt_pos);

// ---- metrics (value level) ----

// sqrt of the mean squared per-coordinate error over frames/vertices, in mm.
double metric_rmse(const std::vector<std::vector<Vec3>>& pred,
                   const std::vector<std::vector<Vec3>>& gt);

// Symmetric Hausdorff distance between two vertex sets, meters.
double hausdorff_set(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

// Frame-averaged symmetric Hausdorff, in mm.
double metric_hausdorff(const std::vector<std::vector<Vec3>>& pred,
                        const std::vector<std::vector<Vec3>>& gt);

// Edge-length based error: relative edge-length deviations r_e per frame,
// spatial RMS of r, temporal RMS of frame-to-frame differences of r, combined
// as sqrt(spatial^2 + temporal^2). Unitless. Needs at least 2 frames.
double metric_sted(const std::vector<std::vector<Vec3>>& pred,
                   const std::vector<std::vector<Vec3>>& gt, const Mesh& mesh);

// Number of garment vertices with (v - b) . n_b < eps for their nearest body
// vertex b; eps = 0 counts strict penetrations.
int count_penetrations(const std::vector<Vec3>& garment, const std::vector<Vec3>& body_vertices,
                       const std::vector<Vec3>& body_normals, double eps = 0.0);

}  // namespace anchorcloth
