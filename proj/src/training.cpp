#include "anchorcloth/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <memory>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "anchorcloth/simplify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace anchorcloth {

// ---- config ----

int TrainConfig::resolved_lr_drop() const {
  if (lr_drop_epoch > 0) return lr_drop_epoch;
  // 1e-3 for the first 60% of epochs, 1e-4 after.
  return static_cast<int>(std::llround(0.6 * epochs)) + 1;
}

int TrainConfig::resolved_late_start() const {
  if (late_stage_start > 0) return late_stage_start;
  // Collision and direction terms join for the last 20% of epochs.
  return static_cast<int>(std::llround(0.8 * epochs)) + 1;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw UsageError("config: epochs must be >= 0");
  if (lr <= 0.0 || lr_late <= 0.0) throw UsageError("config: learning rates must be positive");
  if (batch_size < 1) throw UsageError("config: batch_size must be >= 1");
  if (sequence_length < 1) throw UsageError("config: sequence_length must be >= 1");
  if (n_anchors < 1) throw UsageError("config: n_anchors must be >= 1");
  if (k_neighbors < 1) throw UsageError("config: k_neighbors must be >= 1");
  if (n_influences < 1) throw UsageError("config: n_influences must be >= 1");
  if (simplify_target < 0) throw UsageError("config: simplify_target must be >= 0");
  if (hidden_size < 1 || gru_layers < 1 || mlp_hidden < 1)
    throw UsageError("config: model sizes must be >= 1");
  if (init_state_std < 0.0) throw UsageError("config: init_state_std must be >= 0");
  if (tight_threshold < 0.0) throw UsageError("config: tight_threshold must be >= 0");
  if (grad_clip <= 0.0) throw UsageError("config: grad_clip must be positive");
  if (threads < 1) throw UsageError("config: threads must be >= 1");
  if (epochs > 0 && late_stage_start > epochs)
    throw UsageError("config: late_stage_start must be <= epochs");
  if (weights.collision_margin < 0.0)
    throw UsageError("config: collision margin must be >= 0");
}

namespace {

json weights_to_json(const LossWeights& w) {
  return json{{"beta1", w.beta1},   {"beta2", w.beta2},   {"gamma", w.gamma},
              {"lambda1", w.lambda1}, {"lambda2", w.lambda2}, {"lambda3", w.lambda3},
              {"collision_margin", w.collision_margin}};
}

json config_to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"lr", c.lr},
              {"lr_late", c.lr_late},
              {"lr_drop_epoch", c.lr_drop_epoch},
              {"late_stage_start", c.late_stage_start},
              {"batch_size", c.batch_size},
              {"sequence_length", c.sequence_length},
              {"seed", c.seed},
              {"n_anchors", c.n_anchors},
              {"k_neighbors", c.k_neighbors},
              {"n_influences", c.n_influences},
              {"simplify_target", c.simplify_target},
              {"hidden_size", c.hidden_size},
              {"gru_layers", c.gru_layers},
              {"mlp_hidden", c.mlp_hidden},
              {"init_state_std", c.init_state_std},
              {"tight_threshold", c.tight_threshold},
              {"grad_clip", c.grad_clip},
              {"threads", c.threads},
              {"weights", weights_to_json(c.weights)}};
}

double want_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw UsageError("config: '" + key + "' must be a number");
  return v.get<double>();
}

int want_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw UsageError("config: '" + key + "' must be an integer");
  return v.get<int>();
}

void overlay_config(TrainConfig* c, const json& j, const std::string& origin) {
  if (!j.is_object()) throw UsageError(origin + ": config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs") c->epochs = want_int(value, key);
    else if (key == "lr") c->lr = want_number(value, key);
    else if (key == "lr_late") c->lr_late = want_number(value, key);
    else if (key == "lr_drop_epoch") c->lr_drop_epoch = want_int(value, key);
    else if (key == "late_stage_start") c->late_stage_start = want_int(value, key);
    else if (key == "batch_size") c->batch_size = want_int(value, key);
    else if (key == "sequence_length") c->sequence_length = want_int(value, key);
    else if (key == "seed") {
      if (!value.is_number_unsigned() && !value.is_number_integer())
        throw UsageError("config: 'seed' must be an integer");
      c->seed = value.get<uint64_t>();
    } else if (key == "n_anchors") c->n_anchors = want_int(value, key);
    else if (key == "k_neighbors") c->k_neighbors = want_int(value, key);
    else if (key == "n_influences") c->n_influences = want_int(value, key);
    else if (key == "simplify_target") c->simplify_target = want_int(value, key);
    else if (key == "hidden_size") c->hidden_size = want_int(value, key);
    else if (key == "gru_layers") c->gru_layers = want_int(value, key);
    else if (key == "mlp_hidden") c->mlp_hidden = want_int(value, key);
    else if (key == "init_state_std") c->init_state_std = want_number(value, key);
    else if (key == "tight_threshold") c->tight_threshold = want_number(value, key);
    else if (key == "grad_clip") c->grad_clip = want_number(value, key);
    else if (key == "threads") c->threads = want_int(value, key);
    else if (key == "weights") {
      if (!value.is_object()) throw UsageError("config: 'weights' must be an object");
      for (const auto& [wk, wv] : value.items()) {
        if (wk == "beta1") c->weights.beta1 = want_number(wv, wk);
        else if (wk == "beta2") c->weights.beta2 = want_number(wv, wk);
        else if (wk == "gamma") c->weights.gamma = want_number(wv, wk);
        else if (wk == "lambda1") c->weights.lambda1 = want_number(wv, wk);
        else if (wk == "lambda2") c->weights.lambda2 = want_number(wv, wk);
        else if (wk == "lambda3") c->weights.lambda3 = want_number(wv, wk);
        else if (wk == "collision_margin") c->weights.collision_margin = want_number(wv, wk);
        else throw UsageError("config: unknown weights key '" + wk + "'");
      }
    } else {
      throw UsageError(origin + ": unknown config key '" + key + "'");
    }
  }
}

// Atomic file replacement: write next to the target, then rename over it.
void write_file_atomic(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed while writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void apply_config_json(TrainConfig* config, const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw UsageError(path + ": invalid JSON (" + std::string(e.what()) + ")");
  }
  overlay_config(config, j, path);
}

// ---- checkpoint io ----

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir) {
  fs::create_directories(dir);
  {
    // anchors.json via the anchors module, atomically.
    fs::path tmp = fs::path(dir) / "anchors.json.tmp";
    save_anchors_json(ckpt.anchors, tmp.string());
    fs::rename(tmp, fs::path(dir) / "anchors.json");
  }
  {
    fs::path tmp = fs::path(dir) / "model.bin.tmp";
    save_model_bin(ckpt.model, tmp.string());
    fs::rename(tmp, fs::path(dir) / "model.bin");
  }

  json manifest;
  manifest["format"] = "anchorcloth-checkpoint-1";
  const ModelConfig& mc = ckpt.model.config;
  manifest["model_config"] = json{{"pose_dim", mc.pose_dim},
                                  {"hidden_size", mc.hidden_size},
                                  {"gru_layers", mc.gru_layers},
                                  {"mlp_hidden", mc.mlp_hidden},
                                  {"n_anchors", mc.n_anchors},
                                  {"n_vertices", mc.n_vertices},
                                  {"init_state_std", mc.init_state_std}};
  json tensors = json::array();
  size_t offset = 0;
  for (const ParamRef& r : ckpt.model.param_refs()) {
    tensors.push_back(json{{"name", r.name}, {"rows", r.rows}, {"cols", r.cols},
                           {"offset", offset}});
    offset += r.values->size();
  }
  manifest["tensors"] = tensors;
  json strategy;
  strategy["threshold"] = ckpt.strategy.threshold;
  strategy["tight"] = json::array();
  strategy["tight_body_index"] = json::array();
  for (size_t i = 0; i < ckpt.strategy.tight.size(); ++i) {
    strategy["tight"].push_back(static_cast<int>(ckpt.strategy.tight[i]));
    strategy["tight_body_index"].push_back(ckpt.strategy.tight_body_index[i]);
  }
  manifest["strategy"] = strategy;
  manifest["optim"] = json{{"step", ckpt.optim.step}};
  manifest["train_config"] = config_to_json(ckpt.config);
  write_file_atomic(fs::path(dir) / "model.manifest.json", manifest.dump(1) + "\n");

  // optim.bin: for every parameter in optimizer order, first moments then
  // second moments, raw doubles.
  std::string optim_bytes;
  for (const std::vector<double>& m : ckpt.optim.m)
    optim_bytes.append(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(double));
  for (const std::vector<double>& v : ckpt.optim.v)
    optim_bytes.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  write_file_atomic(fs::path(dir) / "optim.bin", optim_bytes);
}

Checkpoint load_checkpoint(const std::string& dir) {
  fs::path base(dir);
  json manifest;
  try {
    manifest = json::parse(read_file(base / "model.manifest.json"));
  } catch (const json::exception& e) {
    throw UsageError(dir + ": invalid checkpoint manifest (" + std::string(e.what()) + ")");
  }
  if (!manifest.is_object() || manifest.value("format", "") != "anchorcloth-checkpoint-1")
    throw UsageError(dir + ": not a checkpoint directory (bad manifest format)");

  Checkpoint ckpt;
  const json& mcj = manifest.at("model_config");
  ModelConfig mc;
  mc.pose_dim = mcj.at("pose_dim").get<int>();
  mc.hidden_size = mcj.at("hidden_size").get<int>();
  mc.gru_layers = mcj.at("gru_layers").get<int>();
  mc.mlp_hidden = mcj.at("mlp_hidden").get<int>();
  mc.n_anchors = mcj.at("n_anchors").get<int>();
  mc.n_vertices = mcj.at("n_vertices").get<int>();
  mc.init_state_std = mcj.at("init_state_std").get<double>();
  ckpt.model = ModelParams::init(mc, 0);
  load_model_bin(&ckpt.model, (base / "model.bin").string());
  {
    // Cross-check the manifest's tensor table against the actual layout.
    std::vector<ParamRef> refs = ckpt.model.param_refs();
    const json& tensors = manifest.at("tensors");
    if (!tensors.is_array() || tensors.size() != refs.size())
      throw UsageError(dir + ": manifest tensor table size mismatch");
    for (size_t i = 0; i < refs.size(); ++i) {
      const json& t = tensors[i];
      if (t.at("name").get<std::string>() != refs[i].name ||
          t.at("rows").get<int>() != refs[i].rows || t.at("cols").get<int>() != refs[i].cols)
        throw UsageError(dir + ": manifest tensor '" + refs[i].name +
                         "' does not match the model layout");
    }
  }

  ckpt.anchors = load_anchors_json((base / "anchors.json").string());
  if (ckpt.anchors.n_anchors != mc.n_anchors || ckpt.anchors.n_vertices() != mc.n_vertices)
    throw UsageError(dir + ": anchors.json shape disagrees with the model manifest");

  const json& sj = manifest.at("strategy");
  ckpt.strategy.threshold = sj.at("threshold").get<double>();
  for (const json& v : sj.at("tight"))
    ckpt.strategy.tight.push_back(static_cast<char>(v.get<int>() != 0));
  for (const json& v : sj.at("tight_body_index"))
    ckpt.strategy.tight_body_index.push_back(v.get<int>());
  if (static_cast<int>(ckpt.strategy.tight.size()) != mc.n_anchors ||
      ckpt.strategy.tight_body_index.size() != ckpt.strategy.tight.size())
    throw UsageError(dir + ": strategy arrays have the wrong length");

  ckpt.config = TrainConfig{};
  overlay_config(&ckpt.config, manifest.at("train_config"), dir);

  // Optimizer state, laid out as all m blocks then all v blocks.
  ckpt.optim.step = manifest.at("optim").at("step").get<int>();
  std::string bytes = read_file(base / "optim.bin");
  std::vector<size_t> sizes;
  for (const ParamRef& r : ckpt.model.param_refs()) sizes.push_back(r.values->size());
  sizes.push_back(ckpt.anchors.alpha.size());
  sizes.push_back(ckpt.anchors.weight_logits.size());
  size_t total = 0;
  for (size_t s : sizes) total += s;
  if (bytes.size() != total * 2 * sizeof(double))
    throw UsageError(dir + ": optim.bin has the wrong size");
  const double* ptr = reinterpret_cast<const double*>(bytes.data());
  for (size_t s : sizes) {
    ckpt.optim.m.emplace_back(ptr, ptr + s);
    ptr += s;
  }
  for (size_t s : sizes) {
    ckpt.optim.v.emplace_back(ptr, ptr + s);
    ptr += s;
  }
  return ckpt;
}

// ---- shared forward ----

ForwardShared make_forward_shared(const Mesh& template_mesh, const AnchorSet& anchors,
                                  const std::vector<Vec3>& template_simplified) {
  ForwardShared s;
  s.anchor_neighbors =
      std::make_shared<const std::vector<std::vector<int>>>(anchors.neighbor_indices);
  s.vertex_anchors =
      std::make_shared<const std::vector<std::vector<int>>>(anchors.vertex_anchor_indices);
  s.faces = std::make_shared<const std::vector<std::array<int, 3>>>(template_mesh.faces);
  s.adjacency = std::make_shared<const VertexAdjacency>(vertex_adjacency(template_mesh));
  s.template_simplified = std::make_shared<const std::vector<Vec3>>(template_simplified);
  return s;
}

FrameDerived derive_frame(const Mesh& template_mesh, const VertexAdjacency& adjacency,
                          const MotionFrame& frame) {
  FrameDerived d;
  d.gt_laplacian = graph_laplacian(adjacency, frame.gt);
  d.gt_normals = vertex_normals_at(template_mesh, frame.gt);
  return d;
}

namespace {

struct ComposeConstants {
  std::shared_ptr<const std::vector<Mat3>> a;
  std::shared_ptr<const std::vector<Vec3>> u, c;
};

// Per-anchor constants for composing the predicted residual with the frame's
// base motion. Loose anchors rotate about the current root; tight anchors
// ride their bound body vertex.
ComposeConstants compose_constants(const AnchorStrategy& strategy, const MotionFrame& frame) {
  int n = static_cast<int>(strategy.tight.size());
  auto a = std::make_shared<std::vector<Mat3>>(n);
  auto u = std::make_shared<std::vector<Vec3>>(n);
  auto c = std::make_shared<std::vector<Vec3>>(n);
  for (int i = 0; i < n; ++i) {
    if (strategy.tight[i]) {
      if (!frame.has_body_transforms)
        throw UsageError(
            "motion frame carries no per-vertex body transforms but the checkpoint has tight "
            "anchors; provide body transforms or train with tight_threshold 0 so every anchor "
            "runs in loose mode");
      int bi = strategy.tight_body_index[i];
      if (bi < 0 || bi >= static_cast<int>(frame.body_vertex_transforms.size()))
        throw UsageError("tight anchor is bound to a body vertex the frame does not have");
      const RigidTransform& x = frame.body_vertex_transforms[bi];
      (*a)[i] = x.r;
      (*u)[i] = Vec3{};
      (*c)[i] = x.t;
    } else {
      (*a)[i] = frame.r_global;
      (*u)[i] = -frame.j_root;
      (*c)[i] = frame.j_root;
    }
  }
  return {std::move(a), std::move(u), std::move(c)};
}

ad::Tensor accumulate(ad::Tensor sum, ad::Tensor term) {
  return sum.valid() ? ad::add(sum, term) : term;
}

}  // namespace

WindowTargets compute_window_targets(const AnchorSet& anchors,
                                     const std::vector<const MotionFrame*>& frames,
                                     const std::vector<const FrameDerived*>& derived) {
  int n = anchors.n_anchors, k = anchors.k_neighbors;
  WindowTargets out;
  out.p_tgt.resize(frames.size());
  out.n_tgt.resize(frames.size());
  std::vector<double> row(k);
  for (size_t fi = 0; fi < frames.size(); ++fi) {
    const std::vector<Vec3>& gt = frames[fi]->gt;
    const std::vector<Vec3>& gt_normals = derived[fi]->gt_normals;
    out.p_tgt[fi].assign(n, Vec3{});
    out.n_tgt[fi].assign(n, Vec3{});
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j) row[j] = anchors.alpha[i * k + j];
      std::vector<double> w = softmax(row);
      Vec3 pt, nt;
      for (int j = 0; j < k; ++j) {
        int v = anchors.neighbor_indices[i][j];
        pt += w[j] * gt[v];
        nt += w[j] * gt_normals[v];
      }
      out.p_tgt[fi][i] = pt;
      out.n_tgt[fi][i] = normalized(nt);
    }
  }
  return out;
}

WindowForward build_window_forward(ad::Tape* tape, const ModelParams& model,
                                   const AnchorSet& anchors, const AnchorStrategy& strategy,
                                   const Mesh& template_mesh,
                                   const std::vector<const MotionFrame*>& frames,
                                   const std::vector<const FrameDerived*>& derived,
                                   const WindowTargets& targets, Stage stage,
                                   const LossWeights& weights, const ForwardShared& shared,
                                   const MotionFrame* anchor_frame,
                                   const std::vector<Vec3>* anchor_frame_simplified,
                                   Rng* hidden_rng) {
  const ModelConfig& mc = model.config;
  if (frames.empty()) throw std::invalid_argument("forward: empty frame window");
  if (derived.size() != frames.size())
    throw std::invalid_argument("forward: derived data misaligned with frames");
  if (targets.p_tgt.size() != frames.size() || targets.n_tgt.size() != frames.size())
    throw std::invalid_argument("forward: targets misaligned with frames");
  if ((anchor_frame == nullptr) != (anchor_frame_simplified == nullptr))
    throw std::invalid_argument("forward: sampled anchor frame needs its simplified targets");
  int m = template_mesh.n_vertices();
  if (mc.n_vertices != m || anchors.n_vertices() != m)
    throw UsageError("forward: template has " + std::to_string(m) +
                     " vertices, model expects " + std::to_string(mc.n_vertices));
  for (const MotionFrame* f : frames) {
    if (static_cast<int>(f->theta.size()) != mc.pose_dim)
      throw UsageError("forward: pose vector has " + std::to_string(f->theta.size()) +
                       " entries, model expects " + std::to_string(mc.pose_dim));
    if (static_cast<int>(f->gt.size()) != m)
      throw UsageError("forward: ground-truth frame does not match the template size");
  }

  WindowForward out;
  TapedModel staged = stage_params(tape, model);
  ad::Tensor alpha = tape->input(anchors.n_anchors, anchors.k_neighbors, anchors.alpha);
  ad::Tensor logits = tape->input(m, anchors.n_influences, anchors.weight_logits);
  ad::Tensor tmpl_leaf = tape->points(template_mesh.vertices);
  ad::Tensor blend = ad::softmax_rows(logits);
  ad::Tensor p = ad::attention_gather(alpha, tmpl_leaf, shared.anchor_neighbors);

  // Anchor Chamfer supervision: always against the simplified template, plus
  // the batch-sampled deformed frame when provided (the anchors' positions on
  // that frame are the same attention applied to its vertices).
  ad::Tensor anch = ad::chamfer(p, shared.template_simplified);
  if (anchor_frame != nullptr) {
    if (static_cast<int>(anchor_frame->gt.size()) != m)
      throw UsageError("forward: sampled anchor frame does not match the template size");
    ad::Tensor frame_leaf = tape->points(anchor_frame->gt);
    ad::Tensor p_frame = ad::attention_gather(alpha, frame_leaf, shared.anchor_neighbors);
    anch = ad::add(anch, ad::chamfer(p_frame, std::make_shared<const std::vector<Vec3>>(
                                                  *anchor_frame_simplified)));
  }

  std::vector<ad::Tensor> hidden;
  for (int l = 0; l < mc.gru_layers; ++l) {
    std::vector<double> h0(mc.hidden_size, 0.0);
    if (hidden_rng != nullptr)
      for (double& v : h0) v = hidden_rng->normal(0.0, mc.init_state_std);
    hidden.push_back(tape->input(mc.hidden_size, 1, h0));
  }

  std::vector<ad::Tensor> inputs;
  inputs.reserve(frames.size());
  for (const MotionFrame* f : frames) {
    std::vector<double> x = f->theta;
    x.push_back(f->t.x);
    x.push_back(f->t.y);
    x.push_back(f->t.z);
    inputs.push_back(tape->input(mc.input_dim(), 1, x));
  }
  std::vector<ad::Tensor> features = encode_sequence(inputs, staged, &hidden);

  ad::Tensor rec_sum, lap_sum, coll_sum, consis_sum, dir_sum;
  int coll_frames = 0;
  for (size_t fi = 0; fi < frames.size(); ++fi) {
    const MotionFrame& frame = *frames[fi];
    const FrameDerived& der = *derived[fi];
    HeadsOut heads = apply_heads(features[fi], staged, mc);
    ad::Tensor rot = ad::euler_rotmats(heads.euler);
    ComposeConstants cc = compose_constants(strategy, frame);
    ad::Tensor rot_g = ad::compose_rot(rot, cc.a);
    ad::Tensor trans_g = ad::compose_trans(rot, heads.translations, cc.a, cc.u, cc.c);
    ad::Tensor base = ad::add(tmpl_leaf, heads.displacements);
    ad::Tensor pred = ad::lbs_op(rot_g, trans_g, base, blend, shared.vertex_anchors);

    ad::Tensor gt_leaf = tape->points(frame.gt);
    rec_sum = accumulate(rec_sum, loss_rec(pred, gt_leaf));
    lap_sum = accumulate(lap_sum, loss_lap(pred, shared.adjacency, der.gt_laplacian));

    // Anchor consistency: transformed anchors against constant targets taken
    // from the deformed ground truth under the current attention.
    const std::vector<Vec3>& p_tgt = targets.p_tgt[fi];
    const std::vector<Vec3>& n_tgt = targets.n_tgt[fi];
    ad::Tensor p_g = ad::transform_points(rot_g, trans_g, p);
    ad::Tensor n_g = ad::rows_normalize(
        ad::attention_gather(alpha, ad::vertex_normals_op(pred, shared.faces),
                             shared.anchor_neighbors));
    consis_sum = accumulate(consis_sum, loss_consis(p_g, n_g, p_tgt, n_tgt, weights.gamma));

    if (stage == Stage::late) {
      if (frame.has_body) {
        coll_sum = accumulate(coll_sum, loss_collision(pred, frame.body_vertices,
                                                       frame.body_normals,
                                                       weights.collision_margin));
        ++coll_frames;
      }
      dir_sum = accumulate(dir_sum, loss_dir(p_g, p_tgt, n_tgt));
    }
  }

  double inv_f = 1.0 / static_cast<double>(frames.size());
  out.components.rec = ad::scale(rec_sum, inv_f);
  out.components.lap = ad::scale(lap_sum, inv_f);
  out.components.consis = ad::scale(consis_sum, inv_f);
  out.components.anch = anch;
  if (coll_sum.valid()) out.components.collision = ad::scale(coll_sum, 1.0 / coll_frames);
  if (dir_sum.valid()) out.components.dir = ad::scale(dir_sum, inv_f);
  out.loss = total_loss(out.components, weights, stage);
  out.leaves = staged.leaves;
  out.leaves.push_back(alpha);
  out.leaves.push_back(logits);
  return out;
}

// ---- training loop ----

namespace {

uint64_t hash_frame(const std::vector<Vec3>& gt, int target) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const Vec3& p : gt) {
    mix(&p.x, sizeof(double));
    mix(&p.y, sizeof(double));
    mix(&p.z, sizeof(double));
  }
  int64_t t = target;
  mix(&t, sizeof(t));
  return h;
}

// Lazily simplified ground-truth frames, memoized in memory and (when a run
// directory exists) on disk. QEM is deterministic, so cache entries are
// interchangeable with recomputation.
class SimplifyCache {
 public:
  SimplifyCache(const Mesh& template_mesh, int target, const std::string& dir)
      : template_mesh_(template_mesh), target_(target), dir_(dir) {
    if (!dir_.empty()) fs::create_directories(dir_);
  }

  std::shared_ptr<const std::vector<Vec3>> get(const std::vector<Vec3>& gt) {
    uint64_t key = hash_frame(gt, target_);
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
    std::shared_ptr<const std::vector<Vec3>> result;
    fs::path file;
    if (!dir_.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "%016llx.bin", static_cast<unsigned long long>(key));
      file = fs::path(dir_) / name;
      if (fs::exists(file)) result = load(file);
    }
    if (!result) {
      Mesh posed;
      posed.faces = template_mesh_.faces;
      posed.vertices = gt;
      auto pts = std::make_shared<std::vector<Vec3>>(simplified_targets(posed, target_));
      result = pts;
      if (!file.empty()) store(file, *pts);
    }
    memo_[key] = result;
    return result;
  }

 private:
  static std::shared_ptr<const std::vector<Vec3>> load(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    auto pts = std::make_shared<std::vector<Vec3>>(count);
    in.read(reinterpret_cast<char*>(pts->data()),
            static_cast<std::streamsize>(count * sizeof(Vec3)));
    if (!in) throw std::runtime_error("corrupt simplify cache file: " + file.string());
    return pts;
  }
  static void store(const fs::path& file, const std::vector<Vec3>& pts) {
    std::string bytes;
    uint64_t count = pts.size();
    bytes.append(reinterpret_cast<const char*>(&count), sizeof(count));
    bytes.append(reinterpret_cast<const char*>(pts.data()), count * sizeof(Vec3));
    write_file_atomic(file, bytes);
  }

  const Mesh& template_mesh_;
  int target_;
  std::string dir_;
  std::unordered_map<uint64_t, std::shared_ptr<const std::vector<Vec3>>> memo_;
};

struct ItemOutcome {
  double loss = 0.0;
  double comps[6] = {0, 0, 0, 0, 0, 0};  // rec, lap, collision, consis, dir, anch
  std::vector<std::vector<double>> grads;
};

void write_loss_curves(const std::string& dir, const std::vector<EpochStats>& epochs) {
  std::string csv = "epoch,lr,late,loss,rec,lap,collision,consis,dir,anch,grad_norm\n";
  char line[512];
  for (const EpochStats& e : epochs) {
    std::snprintf(line, sizeof(line),
                  "%d,%.17g,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.epoch,
                  e.lr, e.late ? 1 : 0, e.loss, e.rec, e.lap, e.collision, e.consis, e.dir,
                  e.anch, e.grad_norm);
    csv += line;
  }
  write_file_atomic(fs::path(dir) / "loss_curves.csv", csv);

  // Minimal SVG line chart: total loss and reconstruction term over epochs.
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const EpochStats& e : epochs) {
    lo = std::min({lo, e.loss, e.rec});
    hi = std::max({hi, e.loss, e.rec});
  }
  if (epochs.empty() || !(hi > 0.0)) {
    write_file_atomic(fs::path(dir) / "loss_curves.svg",
                      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" "
                      "height=\"360\"></svg>\n");
    return;
  }
  lo = std::max(lo, hi * 1e-9);
  lo = std::min(lo, hi * 0.999);
  const double w = 640, h = 360, ml = 60, mr = 15, mt = 15, mb = 40;
  auto sx = [&](double epoch) {
    double span = std::max<double>(1, epochs.size() - 1);
    return ml + (epoch - 1) / span * (w - ml - mr);
  };
  // log scale: losses span orders of magnitude over a run
  auto sy = [&](double v) {
    double lv = std::log10(std::max(v, lo * 1e-3));
    double llo = std::log10(lo), lhi = std::log10(hi);
    if (lhi - llo < 1e-12) lhi = llo + 1.0;
    return h - mb - (lv - llo) / (lhi - llo) * (h - mt - mb);
  };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
      << h - mb << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
      << "\" stroke=\"black\"/>\n";
  auto polyline = [&](const char* color, auto read) {
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const EpochStats& e : epochs) svg << sx(e.epoch) << "," << sy(read(e)) << " ";
    svg << "\"/>\n";
  };
  polyline("#c0392b", [](const EpochStats& e) { return e.loss; });
  polyline("#2980b9", [](const EpochStats& e) { return e.rec; });
  svg << "<text x=\"" << w / 2 << "\" y=\"" << h - 10
      << "\" text-anchor=\"middle\" font-size=\"12\">epoch</text>\n"
      << "<text x=\"" << w - mr - 5 << "\" y=\"" << mt + 12
      << "\" text-anchor=\"end\" font-size=\"12\" fill=\"#c0392b\">total</text>\n"
      << "<text x=\"" << w - mr - 5 << "\" y=\"" << mt + 26
      << "\" text-anchor=\"end\" font-size=\"12\" fill=\"#2980b9\">rec</text>\n"
      << "<text x=\"15\" y=\"" << mt + 12 << "\" font-size=\"12\">loss (log)</text>\n</svg>\n";
  write_file_atomic(fs::path(dir) / "loss_curves.svg", svg.str());
}

}  // namespace

TrainResult train(const SequenceDataset& dataset, const TrainConfig& config_in,
                  const std::string& out_dir, const AnchorSet* initial_anchors) {
  TrainConfig config = config_in;
  config.validate();
  if (dataset.clips.empty()) throw UsageError("train: dataset has no clips");
  const Mesh& tmpl = dataset.template_mesh;
  int m = tmpl.n_vertices();
  int pose_dim = -1;
  for (const Clip& clip : dataset.clips) {
    if (clip.n_frames() < config.sequence_length)
      throw UsageError("train: clip '" + clip.name + "' is shorter than the training window");
    for (const MotionFrame& f : clip.frames) {
      if (!f.has_gt())
        throw UsageError("train: clip '" + clip.name + "' has frames without ground truth");
      if (static_cast<int>(f.gt.size()) != m)
        throw UsageError("train: clip '" + clip.name + "' ground truth has " +
                         std::to_string(f.gt.size()) + " vertices, template has " +
                         std::to_string(m));
      if (pose_dim < 0) pose_dim = static_cast<int>(f.theta.size());
      if (static_cast<int>(f.theta.size()) != pose_dim)
        throw UsageError("train: pose vector length varies across the dataset");
    }
  }

  Rng root(config.seed);
  Rng anchor_rng = root.split(1);
  Rng model_rng = root.split(2);
  Rng window_rng = root.split(3);
  Rng hidden_stream = root.split(4);
  Rng sample_rng = root.split(5);

  // Anchor state: k-means + neighbor association, or the caller's file.
  AnchorSet anchors;
  if (initial_anchors != nullptr) {
    anchors = *initial_anchors;
    if (anchors.n_vertices() != m)
      throw UsageError("train: provided anchors were built for " +
                       std::to_string(anchors.n_vertices()) + " vertices, template has " +
                       std::to_string(m));
    config.n_anchors = anchors.n_anchors;
    config.k_neighbors = anchors.k_neighbors;
    config.n_influences = anchors.n_influences;
  } else {
    if (config.n_anchors > m)
      throw UsageError("train: more anchors than template vertices");
    anchors = build_anchor_set(tmpl, config.n_anchors, std::min(config.k_neighbors, m),
                               std::min(config.n_influences, config.n_anchors),
                               anchor_rng.next_u64());
    config.k_neighbors = anchors.k_neighbors;
    config.n_influences = anchors.n_influences;
  }
  recompute_positions(&anchors, tmpl.vertices);
  AnchorStrategy strategy =
      classify_anchors(anchors.positions, dataset.body_rest_vertices, config.tight_threshold);

  int simplify_target = config.simplify_target > 0
                            ? config.simplify_target
                            : std::min(2 * anchors.n_anchors, m);
  simplify_target = std::max(4, std::min(simplify_target, m));
  std::vector<Vec3> template_simplified = simplified_targets(tmpl, simplify_target);
  ForwardShared shared = make_forward_shared(tmpl, anchors, template_simplified);

  ModelConfig mc;
  mc.pose_dim = pose_dim;
  mc.hidden_size = config.hidden_size;
  mc.gru_layers = config.gru_layers;
  mc.mlp_hidden = config.mlp_hidden;
  mc.n_anchors = anchors.n_anchors;
  mc.n_vertices = m;
  mc.init_state_std = config.init_state_std;
  ModelParams model = ModelParams::init(mc, model_rng.next_u64());

  // Optimizer runs over the network weights plus the anchor attention and
  // blend logits, all at one learning rate.
  ad::AdamState adam;
  auto optimizer_params = [&]() {
    std::vector<std::vector<double>*> ps;
    for (const ParamRef& r : model.param_refs()) ps.push_back(r.values);
    ps.push_back(&anchors.alpha);
    ps.push_back(&anchors.weight_logits);
    return ps;
  };

  VertexAdjacency adjacency = vertex_adjacency(tmpl);
  std::vector<std::vector<std::unique_ptr<FrameDerived>>> derived_cache(dataset.clips.size());
  for (size_t c = 0; c < dataset.clips.size(); ++c)
    derived_cache[c].resize(dataset.clips[c].frames.size());
  auto derived_for = [&](int clip, int frame) -> const FrameDerived* {
    auto& slot = derived_cache[clip][frame];
    if (!slot)
      slot = std::make_unique<FrameDerived>(
          derive_frame(tmpl, adjacency, dataset.clips[clip].frames[frame]));
    return slot.get();
  };

  SimplifyCache simplify_cache(
      tmpl, simplify_target,
      out_dir.empty() ? std::string() : (fs::path(out_dir) / "simplify_cache").string());

  std::ofstream log_stream;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    log_stream.open(fs::path(out_dir) / "train_log.jsonl", std::ios::binary | std::ios::trunc);
    if (!log_stream) throw std::runtime_error("cannot write train_log.jsonl in " + out_dir);
  }

  int total_frames = dataset.total_frames();
  int windows_per_epoch = std::max(1, total_frames / config.sequence_length);
  int lr_drop = config.resolved_lr_drop();
  int late_start = config.resolved_late_start();
  double first_loss = std::numeric_limits<double>::quiet_NaN();
  uint64_t item_serial = 0;

  TrainResult result;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (epoch == late_start) {
      // Stage switch: anchors have drifted, so refresh their neighborhoods
      // and every per-vertex association before the new terms kick in.
      reassociate(&anchors, tmpl);
      shared = make_forward_shared(tmpl, anchors, template_simplified);
    }
    Stage stage = epoch >= late_start ? Stage::late : Stage::early;
    double lr = epoch >= lr_drop ? config.lr_late : config.lr;

    struct Window {
      int clip, start;
    };
    std::vector<Window> windows(windows_per_epoch);
    for (Window& w : windows) {
      w.clip = window_rng.uniform_int(static_cast<int>(dataset.clips.size()));
      int span = dataset.clips[w.clip].n_frames() - config.sequence_length;
      w.start = span > 0 ? window_rng.uniform_int(span + 1) : 0;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.late = stage == Stage::late;
    for (int begin = 0; begin < windows_per_epoch; begin += config.batch_size) {
      int items_n = std::min(config.batch_size, windows_per_epoch - begin);

      // One ground-truth frame per batch feeds the dataset-side Chamfer term.
      int sc = sample_rng.uniform_int(static_cast<int>(dataset.clips.size()));
      int sf = sample_rng.uniform_int(dataset.clips[sc].n_frames());
      const MotionFrame* anchor_frame = &dataset.clips[sc].frames[sf];
      std::shared_ptr<const std::vector<Vec3>> anchor_simplified =
          simplify_cache.get(anchor_frame->gt);

      std::vector<std::vector<const MotionFrame*>> item_frames(items_n);
      std::vector<std::vector<const FrameDerived*>> item_derived(items_n);
      std::vector<Rng> item_rngs;
      for (int i = 0; i < items_n; ++i) {
        const Window& w = windows[begin + i];
        for (int f = 0; f < config.sequence_length; ++f) {
          item_frames[i].push_back(&dataset.clips[w.clip].frames[w.start + f]);
          item_derived[i].push_back(derived_for(w.clip, w.start + f));
        }
        item_rngs.push_back(hidden_stream.split(item_serial++));
      }

      std::vector<ItemOutcome> outcomes(items_n);
      std::vector<std::exception_ptr> errors(items_n);
      auto run_item = [&](int i) {
        try {
          ad::Tape tape;
          WindowTargets targets =
              compute_window_targets(anchors, item_frames[i], item_derived[i]);
          WindowForward fwd = build_window_forward(
              &tape, model, anchors, strategy, tmpl, item_frames[i], item_derived[i],
              targets, stage, config.weights, shared, anchor_frame, anchor_simplified.get(),
              &item_rngs[i]);
          ItemOutcome& o = outcomes[i];
          o.loss = tape.scalar_val(fwd.loss);
          const ad::Tensor comps[6] = {fwd.components.rec,    fwd.components.lap,
                                       fwd.components.collision, fwd.components.consis,
                                       fwd.components.dir,    fwd.components.anch};
          for (int k = 0; k < 6; ++k)
            if (comps[k].valid()) o.comps[k] = tape.scalar_val(comps[k]);
          tape.backward(fwd.loss);
          o.grads.reserve(fwd.leaves.size());
          for (ad::Tensor leaf : fwd.leaves) o.grads.push_back(tape.grad(leaf));
        } catch (...) {
          errors[i] = std::current_exception();
        }
      };
      if (config.threads > 1 && items_n > 1) {
        std::vector<std::thread> pool;
        int workers = std::min(config.threads, items_n);
        std::atomic<int> next{0};
        for (int t = 0; t < workers; ++t)
          pool.emplace_back([&]() {
            for (int i = next.fetch_add(1); i < items_n; i = next.fetch_add(1)) run_item(i);
          });
        for (std::thread& t : pool) t.join();
      } else {
        for (int i = 0; i < items_n; ++i) run_item(i);
      }
      for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);

      // Fixed-order reduction over items keeps results thread-count
      // independent.
      std::vector<std::vector<double>> grads = std::move(outcomes[0].grads);
      double batch_loss = outcomes[0].loss;
      double batch_comps[6];
      std::copy(std::begin(outcomes[0].comps), std::end(outcomes[0].comps), batch_comps);
      for (int i = 1; i < items_n; ++i) {
        for (size_t g = 0; g < grads.size(); ++g)
          for (size_t e = 0; e < grads[g].size(); ++e) grads[g][e] += outcomes[i].grads[g][e];
        batch_loss += outcomes[i].loss;
        for (int k = 0; k < 6; ++k) batch_comps[k] += outcomes[i].comps[k];
      }
      double inv_items = 1.0 / items_n;
      batch_loss *= inv_items;
      for (int k = 0; k < 6; ++k) batch_comps[k] *= inv_items;
      for (std::vector<double>& g : grads)
        for (double& v : g) v *= inv_items;

      if (!std::isfinite(batch_loss))
        throw std::runtime_error("training aborted: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", step " +
                                 std::to_string(stats.steps + 1));
      if (std::isnan(first_loss)) first_loss = batch_loss;
      if (batch_loss > 100.0 * first_loss)
        throw std::runtime_error("training aborted: loss diverged past 100x its initial value "
                                 "at epoch " +
                                 std::to_string(epoch) + ", step " +
                                 std::to_string(stats.steps + 1));

      double norm_sq = 0.0;
      for (const std::vector<double>& g : grads)
        for (double v : g) norm_sq += v * v;
      double grad_norm = std::sqrt(norm_sq);
      if (grad_norm > config.grad_clip) {
        double scale = config.grad_clip / grad_norm;
        for (std::vector<double>& g : grads)
          for (double& v : g) v *= scale;
      }

      std::vector<const std::vector<double>*> grad_ptrs;
      for (const std::vector<double>& g : grads) grad_ptrs.push_back(&g);
      ad::adam_step(optimizer_params(), grad_ptrs, &adam, lr);
      recompute_positions(&anchors, tmpl.vertices);

      stats.loss += batch_loss;
      stats.rec += batch_comps[0];
      stats.lap += batch_comps[1];
      stats.collision += batch_comps[2];
      stats.consis += batch_comps[3];
      stats.dir += batch_comps[4];
      stats.anch += batch_comps[5];
      stats.grad_norm += grad_norm;
      ++stats.steps;
    }
    double inv_steps = 1.0 / std::max(1, stats.steps);
    stats.loss *= inv_steps;
    stats.rec *= inv_steps;
    stats.lap *= inv_steps;
    stats.collision *= inv_steps;
    stats.consis *= inv_steps;
    stats.dir *= inv_steps;
    stats.anch *= inv_steps;
    stats.grad_norm *= inv_steps;
    result.epochs.push_back(stats);

    if (!out_dir.empty()) {
      json line{{"epoch", stats.epoch},   {"lr", stats.lr},       {"late", stats.late},
                {"loss", stats.loss},     {"rec", stats.rec},     {"lap", stats.lap},
                {"collision", stats.collision}, {"consis", stats.consis}, {"dir", stats.dir},
                {"anch", stats.anch},     {"grad_norm", stats.grad_norm},
                {"steps", stats.steps}};
      log_stream << line.dump() << "\n";
      log_stream.flush();
      save_checkpoint(Checkpoint{model, anchors, strategy, adam, config}, out_dir);
    }
  }

  result.checkpoint = Checkpoint{std::move(model), std::move(anchors), std::move(strategy),
                                 std::move(adam), config};
  if (!out_dir.empty()) {
    save_checkpoint(result.checkpoint, out_dir);
    write_loss_curves(out_dir, result.epochs);
  }
  return result;
}

// ---- inference and baselines ----

std::vector<std::vector<Vec3>> infer_clip(const Checkpoint& ckpt, const Mesh& template_mesh,
                                          const Clip& motion) {
  const ModelConfig& mc = ckpt.model.config;
  int m = template_mesh.n_vertices();
  if (m != mc.n_vertices)
    throw UsageError("infer: template has " + std::to_string(m) +
                     " vertices, checkpoint expects " + std::to_string(mc.n_vertices));
  if (ckpt.anchors.n_vertices() != m)
    throw UsageError("infer: checkpoint anchors do not match the template");
  if (motion.frames.empty()) throw UsageError("infer: motion clip has no frames");
  for (const MotionFrame& f : motion.frames)
    if (static_cast<int>(f.theta.size()) != mc.pose_dim)
      throw UsageError("infer: pose vector has " + std::to_string(f.theta.size()) +
                       " entries, checkpoint expects " + std::to_string(mc.pose_dim));

  auto vertex_anchors =
      std::make_shared<const std::vector<std::vector<int>>>(ckpt.anchors.vertex_anchor_indices);
  ad::Tape tape;
  TapedModel staged = stage_params(&tape, ckpt.model);
  ad::Tensor logits =
      tape.input(m, ckpt.anchors.n_influences, ckpt.anchors.weight_logits);
  ad::Tensor blend = ad::softmax_rows(logits);
  ad::Tensor tmpl_leaf = tape.points(template_mesh.vertices);

  std::vector<ad::Tensor> hidden;
  for (int l = 0; l < mc.gru_layers; ++l)
    hidden.push_back(tape.input(mc.hidden_size, 1, std::vector<double>(mc.hidden_size, 0.0)));

  std::vector<ad::Tensor> inputs;
  for (const MotionFrame& f : motion.frames) {
    std::vector<double> x = f.theta;
    x.push_back(f.t.x);
    x.push_back(f.t.y);
    x.push_back(f.t.z);
    inputs.push_back(tape.input(mc.input_dim(), 1, x));
  }
  std::vector<ad::Tensor> features = encode_sequence(inputs, staged, &hidden);

  std::vector<std::vector<Vec3>> out;
  out.reserve(motion.frames.size());
  for (size_t fi = 0; fi < motion.frames.size(); ++fi) {
    HeadsOut heads = apply_heads(features[fi], staged, mc);
    ad::Tensor rot = ad::euler_rotmats(heads.euler);
    ComposeConstants cc = compose_constants(ckpt.strategy, motion.frames[fi]);
    ad::Tensor rot_g = ad::compose_rot(rot, cc.a);
    ad::Tensor trans_g = ad::compose_trans(rot, heads.translations, cc.a, cc.u, cc.c);
    ad::Tensor base = ad::add(tmpl_leaf, heads.displacements);
    ad::Tensor pred = ad::lbs_op(rot_g, trans_g, base, blend, vertex_anchors);
    out.push_back(tape.val_points(pred));
  }
  return out;
}

std::vector<std::vector<Vec3>> baseline_root_motion(const Mesh& template_mesh,
                                                    const Clip& motion) {
  std::vector<std::vector<Vec3>> out;
  out.reserve(motion.frames.size());
  for (const MotionFrame& f : motion.frames) {
    RigidTransform base = compose_loose(Mat3::identity(), Vec3{}, f.r_global, f.j_root);
    std::vector<Vec3> frame(template_mesh.n_vertices());
    for (int i = 0; i < template_mesh.n_vertices(); ++i)
      frame[i] = base.apply(template_mesh.vertices[i]);
    out.push_back(std::move(frame));
  }
  return out;
}

std::vector<std::vector<Vec3>> baseline_body_follow(const Mesh& template_mesh,
                                                    const std::vector<Vec3>& body_rest,
                                                    const Clip& motion) {
  if (body_rest.empty())
    throw UsageError("body-follow baseline needs rest-pose body vertices");
  int m = template_mesh.n_vertices();
  std::vector<int> nearest(m);
  for (int i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t b = 0; b < body_rest.size(); ++b) {
      double d = dist2(template_mesh.vertices[i], body_rest[b]);
      if (d < best) {
        best = d;
        nearest[i] = static_cast<int>(b);
      }
    }
  }
  std::vector<std::vector<Vec3>> out;
  out.reserve(motion.frames.size());
  for (const MotionFrame& f : motion.frames) {
    if (!f.has_body_transforms)
      throw UsageError("body-follow baseline needs per-vertex body transforms on every frame");
    if (f.body_vertex_transforms.size() != body_rest.size())
      throw UsageError("body-follow baseline: frame body size differs from the rest body");
    std::vector<Vec3> frame(m);
    for (int i = 0; i < m; ++i)
      frame[i] = f.body_vertex_transforms[nearest[i]].apply(template_mesh.vertices[i]);
    out.push_back(std::move(frame));
  }
  return out;
}

}  // namespace anchorcloth
