#pragma once

// Training loop (staged objective, lr schedule, anchor re-association,
// checkpointing), inference, reference baselines, and the shared forward
// graph builder used by both training and the end-to-end gradient check.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "anchorcloth/anchors.hpp"
#include "anchorcloth/autodiff.hpp"
#include "anchorcloth/data.hpp"
#include "anchorcloth/losses.hpp"
#include "anchorcloth/model.hpp"
#include "anchorcloth/skinning.hpp"

namespace anchorcloth {

struct TrainConfig {
  int epochs = 50;
  double lr = 1e-3;
  double lr_late = 1e-4;
  int lr_drop_epoch = 0;     // first 1-based epoch at lr_late; 0 = 60% of epochs + 1
  int late_stage_start = 0;  // first 1-based epoch with collision/direction terms;
                             // 0 = 80% of epochs + 1
  int batch_size = 8;
  int sequence_length = 30;
  uint64_t seed = 0;
  int n_anchors = 160;
  int k_neighbors = 128;
  int n_influences = 8;
  int simplify_target = 0;   // 0 = min(2 * n_anchors, template vertex count)
  int hidden_size = 32;
  int gru_layers = 2;
  int mlp_hidden = 32;
  double init_state_std = 0.1;
  double tight_threshold = 0.03;
  double grad_clip = 10.0;   // global gradient norm cap
  int threads = 1;
  LossWeights weights;

  int resolved_lr_drop() const;
  int resolved_late_start() const;
  void validate() const;  // throws UsageError
};

// Overlays fields present in a JSON config file onto *config; unknown keys
// are rejected.
void apply_config_json(TrainConfig* config, const std::string& path);

struct Checkpoint {
  ModelParams model;
  AnchorSet anchors;
  AnchorStrategy strategy;
  ad::AdamState optim;
  TrainConfig config;
};

// Directory layout: anchors.json, model.manifest.json, model.bin, optim.bin.
// Writes are atomic (temp file + rename).
void save_checkpoint(const Checkpoint& ckpt, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

struct EpochStats {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  bool late = false;
  double loss = 0.0, rec = 0.0, lap = 0.0, collision = 0.0, consis = 0.0, dir = 0.0,
         anch = 0.0;
  double grad_norm = 0.0;  // mean pre-clip global norm over the epoch's steps
  int steps = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochStats> epochs;
};

// Runs the full staged loop. When out_dir is non-empty, a checkpoint is
// written after every epoch together with train_log.jsonl and loss-curve
// CSV/SVG files. initial_anchors (when given) replaces the built-in anchor
// initialization and must match the template.
TrainResult train(const SequenceDataset& dataset, const TrainConfig& config,
                  const std::string& out_dir, const AnchorSet* initial_anchors = nullptr);

// Per-frame vertex positions for a motion clip, zero initial hidden state.
// Tight anchors require per-vertex body transforms on every frame.
std::vector<std::vector<Vec3>> infer_clip(const Checkpoint& ckpt, const Mesh& template_mesh,
                                          const Clip& motion);

// Reference predictions the trained model is compared against.
// (a) the template carried by the loose base transform (identity residual);
std::vector<std::vector<Vec3>> baseline_root_motion(const Mesh& template_mesh,
                                                    const Clip& motion);
// (b) every vertex rides its nearest rest-pose body vertex's transform.
std::vector<std::vector<Vec3>> baseline_body_follow(const Mesh& template_mesh,
                                                    const std::vector<Vec3>& body_rest,
                                                    const Clip& motion);

// ---- forward graph shared by train() and the end-to-end gradcheck ----

// Index structures and constant targets reused across items; rebuilt when the
// anchor set is re-associated.
struct ForwardShared {
  std::shared_ptr<const std::vector<std::vector<int>>> anchor_neighbors;  // N x K
  std::shared_ptr<const std::vector<std::vector<int>>> vertex_anchors;    // M x P
  std::shared_ptr<const std::vector<std::array<int, 3>>> faces;
  std::shared_ptr<const VertexAdjacency> adjacency;
  std::shared_ptr<const std::vector<Vec3>> template_simplified;
};

ForwardShared make_forward_shared(const Mesh& template_mesh, const AnchorSet& anchors,
                                  const std::vector<Vec3>& template_simplified);

// Per-frame values derived from ground truth, cacheable across epochs.
struct FrameDerived {
  std::vector<Vec3> gt_laplacian;
  std::vector<Vec3> gt_normals;
};
FrameDerived derive_frame(const Mesh& template_mesh, const VertexAdjacency& adjacency,
                          const MotionFrame& frame);

struct WindowForward {
  ad::Tensor loss;
  LossComponents components;
  std::vector<ad::Tensor> leaves;  // model params in param_refs order, alpha, logits
};

// Anchor positions and normals read off the deformed ground truth under the
// current attention. These are the consistency/direction targets; they are
// constants of the loss graph (no gradient flows into the attention through
// them), which is why they are computed outside the forward build.
struct WindowTargets {
  std::vector<std::vector<Vec3>> p_tgt, n_tgt;  // [frame][anchor]
};
WindowTargets compute_window_targets(const AnchorSet& anchors,
                                     const std::vector<const MotionFrame*>& frames,
                                     const std::vector<const FrameDerived*>& derived);

// Builds the loss graph for one window of frames on `tape`. anchor_frame /
// anchor_frame_simplified carry the batch-sampled ground-truth mesh for the
// dataset-side anchor Chamfer term (either both present or both null).
// hidden_rng selects the sampled initial state; null means zeros.
WindowForward build_window_forward(ad::Tape* tape, const ModelParams& model,
                                   const AnchorSet& anchors, const AnchorStrategy& strategy,
                                   const Mesh& template_mesh,
                                   const std::vector<const MotionFrame*>& frames,
                                   const std::vector<const FrameDerived*>& derived,
                                   const WindowTargets& targets, Stage stage,
                                   const LossWeights& weights, const ForwardShared& shared,
                                   const MotionFrame* anchor_frame,
                                   const std::vector<Vec3>* anchor_frame_simplified,
                                   Rng* hidden_rng);

}  // namespace anchorcloth
