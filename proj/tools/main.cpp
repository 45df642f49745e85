#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include "anchorcloth/anchors.hpp"
#include "anchorcloth/data.hpp"
#include "anchorcloth/geometry.hpp"
#include "anchorcloth/gradcheck.hpp"
#include "anchorcloth/losses.hpp"
#include "anchorcloth/simplify.hpp"
#include "anchorcloth/training.hpp"

namespace fs = std::filesystem;
using namespace anchorcloth;

namespace {

std::string resolve_manifest(const std::string& path) {
  if (fs::is_directory(path)) return (fs::path(path) / "manifest.json").string();
  return path;
}

void apply_synth_json(SynthConfig* cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path + ": invalid JSON (" + std::string(e.what()) + ")");
  }
  if (!j.is_object()) throw UsageError(path + ": config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto num = [&]() -> double {
      if (!value.is_number()) throw UsageError(path + ": '" + key + "' must be a number");
      return value.get<double>();
    };
    auto integer = [&]() -> int {
      if (!value.is_number_integer())
        throw UsageError(path + ": '" + key + "' must be an integer");
      return value.get<int>();
    };
    if (key == "grid") cfg->grid = integer();
    else if (key == "width") cfg->width = num();
    else if (key == "height") cfg->height = num();
    else if (key == "mass_total") cfg->mass_total = num();
    else if (key == "k_struct") cfg->k_struct = num();
    else if (key == "k_shear") cfg->k_shear = num();
    else if (key == "k_bend") cfg->k_bend = num();
    else if (key == "spring_damping") cfg->spring_damping = num();
    else if (key == "air_drag") cfg->air_drag = num();
    else if (key == "settle_drag") cfg->settle_drag = num();
    else if (key == "capsule_radius") cfg->capsule_radius = num();
    else if (key == "pin_gap") cfg->pin_gap = num();
    else if (key == "fps") cfg->fps = num();
    else if (key == "substeps") cfg->substeps = integer();
    else if (key == "settle_seconds") cfg->settle_seconds = num();
    else if (key == "n_clips") cfg->n_clips = integer();
    else if (key == "frames_per_clip") cfg->frames_per_clip = integer();
    else if (key == "script") {
      if (!value.is_string()) throw UsageError(path + ": 'script' must be a string");
      cfg->script = value.get<std::string>();
    } else if (key == "seed") {
      if (!value.is_number_integer() && !value.is_number_unsigned())
        throw UsageError(path + ": 'seed' must be an integer");
      cfg->seed = value.get<uint64_t>();
    } else if (key == "max_speed") cfg->max_speed = num();
    else throw UsageError(path + ": unknown config key '" + key + "'");
  }
}

std::vector<fs::path> frame_objs(const std::string& dir) {
  if (!fs::is_directory(dir)) throw UsageError(dir + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    if (name.rfind("frame_", 0) == 0 && name.size() > 4 &&
        name.substr(name.size() - 4) == ".obj")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError(dir + " contains no frame_*.obj files");
  return files;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"garment deformation from anchor transformations"};
  app.require_subcommand(1);
  int rc = 0;

  // ---- prepare ----
  struct {
    std::string template_path, out;
    int anchors = 160, neighbors = 128, influences = 8;
    double simplify_ratio = 0.0;
    uint64_t seed = 0;
  } prep;
  CLI::App* prepare = app.add_subcommand(
      "prepare", "build anchors and a simplified mesh for a garment template");
  prepare->add_option("--template", prep.template_path, "garment template OBJ")->required();
  prepare->add_option("--anchors", prep.anchors, "number of anchors");
  prepare->add_option("--neighbors", prep.neighbors, "attention neighborhood size");
  prepare->add_option("--influences", prep.influences, "anchors blended per vertex");
  prepare->add_option("--simplify-ratio", prep.simplify_ratio,
                      "simplified vertex count as a fraction of the template");
  prepare->add_option("--seed", prep.seed, "rng seed");
  prepare->add_option("--out", prep.out, "output directory")->required();
  prepare->callback([&]() {
    Mesh tmpl = load_obj(prep.template_path);
    int m = tmpl.n_vertices();
    if (prep.anchors < 1) throw UsageError("--anchors must be positive");
    if (prep.anchors > m)
      throw UsageError("--anchors (" + std::to_string(prep.anchors) +
                       ") exceeds the template vertex count (" + std::to_string(m) + ")");
    int k = std::min(prep.neighbors, m);
    int p = std::min(prep.influences, prep.anchors);
    AnchorSet set = build_anchor_set(tmpl, prep.anchors, k, p, prep.seed);
    int target = prep.simplify_ratio > 0.0
                     ? static_cast<int>(std::llround(prep.simplify_ratio * m))
                     : std::min(2 * prep.anchors, m);
    target = std::max(4, std::min(target, m));
    SimplifyResult simp = qem_simplify(tmpl, target);
    fs::create_directories(prep.out);
    save_anchors_json(set, (fs::path(prep.out) / "anchors.json").string());
    save_obj(simp.mesh, (fs::path(prep.out) / "simplified.obj").string());
    std::cerr << "prepare: " << prep.anchors << " anchors (k=" << k << ", p=" << p << "), "
              << simp.mesh.n_vertices() << " simplified vertices -> " << prep.out << "\n";
  });

  // ---- synth ----
  struct {
    std::string config, out, script;
    int clips = 0, frames = 0, grid = 0;
    uint64_t seed = 0;
  } syn;
  CLI::Option *syn_clips, *syn_frames, *syn_grid, *syn_seed, *syn_script;
  CLI::App* synth = app.add_subcommand("synth", "simulate a hanging-cloth dataset");
  synth->add_option("--config", syn.config, "JSON simulation config");
  synth->add_option("--out", syn.out, "output dataset directory")->required();
  syn_clips = synth->add_option("--clips", syn.clips, "number of clips");
  syn_frames = synth->add_option("--frames", syn.frames, "frames per clip");
  syn_grid = synth->add_option("--grid", syn.grid, "cloth grid resolution");
  syn_seed = synth->add_option("--seed", syn.seed, "rng seed");
  syn_script = synth->add_option("--script", syn.script,
                                 "motion script: cycle, swing, slide, spin, or mixed");
  synth->callback([&]() {
    SynthConfig cfg;
    if (!syn.config.empty()) apply_synth_json(&cfg, syn.config);
    if (*syn_clips) cfg.n_clips = syn.clips;
    if (*syn_frames) cfg.frames_per_clip = syn.frames;
    if (*syn_grid) cfg.grid = syn.grid;
    if (*syn_seed) cfg.seed = syn.seed;
    if (*syn_script) cfg.script = syn.script;
    SequenceDataset ds = synth_cloth(cfg);
    save_dataset(ds, syn.out);
    std::cerr << "synth: " << ds.clips.size() << " clips x " << cfg.frames_per_clip
              << " frames, " << ds.template_mesh.n_vertices() << " vertices -> " << syn.out
              << "\n";
  });

  // ---- train ----
  struct {
    std::string data, template_path, anchors, config, out;
    int epochs = 0, batch = 0, seq_len = 0, n_anchors = 0, k_neighbors = 0, influences = 0,
        simplify_target = 0, hidden = 0, gru_layers = 0, mlp_hidden = 0, threads = 0;
    double lr = 0, lr_late = 0, tight_threshold = 0, grad_clip = 0, init_state_std = 0;
    int lr_drop = 0, late_start = 0;
    uint64_t seed = 0;
  } tr;
  CLI::App* train_cmd = app.add_subcommand("train", "fit the deformation model to a dataset");
  train_cmd->add_option("--data", tr.data, "dataset directory or manifest.json")->required();
  train_cmd->add_option("--template", tr.template_path,
                        "garment template OBJ (default: the dataset's template)");
  train_cmd->add_option("--anchors", tr.anchors, "initial anchors.json from `prepare`");
  train_cmd->add_option("--config", tr.config, "JSON training config");
  train_cmd->add_option("--out", tr.out, "run directory for checkpoints and logs")
      ->required();
  CLI::Option* o_epochs = train_cmd->add_option("--epochs", tr.epochs, "training epochs");
  CLI::Option* o_lr = train_cmd->add_option("--lr", tr.lr, "early-stage learning rate");
  CLI::Option* o_lr_late = train_cmd->add_option("--lr-late", tr.lr_late,
                                                 "late learning rate");
  CLI::Option* o_lr_drop =
      train_cmd->add_option("--lr-drop-epoch", tr.lr_drop, "first epoch at the late rate");
  CLI::Option* o_late = train_cmd->add_option(
      "--late-start", tr.late_start, "first epoch with collision and direction terms");
  CLI::Option* o_batch = train_cmd->add_option("--batch", tr.batch, "windows per batch");
  CLI::Option* o_seq = train_cmd->add_option("--seq-len", tr.seq_len, "frames per window");
  CLI::Option* o_seed = train_cmd->add_option("--seed", tr.seed, "rng seed");
  CLI::Option* o_na = train_cmd->add_option("--n-anchors", tr.n_anchors, "anchor count");
  CLI::Option* o_kn =
      train_cmd->add_option("--k-neighbors", tr.k_neighbors, "attention neighborhood size");
  CLI::Option* o_inf =
      train_cmd->add_option("--influences", tr.influences, "anchors blended per vertex");
  CLI::Option* o_st = train_cmd->add_option("--simplify-target", tr.simplify_target,
                                            "simplified vertex count for anchor coverage");
  CLI::Option* o_hid = train_cmd->add_option("--hidden", tr.hidden, "recurrent state size");
  CLI::Option* o_gru = train_cmd->add_option("--gru-layers", tr.gru_layers,
                                             "recurrent layers");
  CLI::Option* o_mlp = train_cmd->add_option("--mlp-hidden", tr.mlp_hidden,
                                             "head hidden width");
  CLI::Option* o_iss = train_cmd->add_option("--init-state-std", tr.init_state_std,
                                             "sampled initial hidden state stddev");
  CLI::Option* o_tight = train_cmd->add_option("--tight-threshold", tr.tight_threshold,
                                               "anchor-to-body distance for tight mode");
  CLI::Option* o_clip = train_cmd->add_option("--grad-clip", tr.grad_clip,
                                              "global gradient norm cap");
  CLI::Option* o_thr = train_cmd->add_option("--threads", tr.threads, "worker threads");
  train_cmd->callback([&]() {
    SequenceDataset ds = load_dataset(resolve_manifest(tr.data));
    if (!tr.template_path.empty()) ds.template_mesh = load_obj(tr.template_path);
    TrainConfig cfg;
    if (!tr.config.empty()) apply_config_json(&cfg, tr.config);
    if (*o_epochs) cfg.epochs = tr.epochs;
    if (*o_lr) cfg.lr = tr.lr;
    if (*o_lr_late) cfg.lr_late = tr.lr_late;
    if (*o_lr_drop) cfg.lr_drop_epoch = tr.lr_drop;
    if (*o_late) cfg.late_stage_start = tr.late_start;
    if (*o_batch) cfg.batch_size = tr.batch;
    if (*o_seq) cfg.sequence_length = tr.seq_len;
    if (*o_seed) cfg.seed = tr.seed;
    if (*o_na) cfg.n_anchors = tr.n_anchors;
    if (*o_kn) cfg.k_neighbors = tr.k_neighbors;
    if (*o_inf) cfg.n_influences = tr.influences;
    if (*o_st) cfg.simplify_target = tr.simplify_target;
    if (*o_hid) cfg.hidden_size = tr.hidden;
    if (*o_gru) cfg.gru_layers = tr.gru_layers;
    if (*o_mlp) cfg.mlp_hidden = tr.mlp_hidden;
    if (*o_iss) cfg.init_state_std = tr.init_state_std;
    if (*o_tight) cfg.tight_threshold = tr.tight_threshold;
    if (*o_clip) cfg.grad_clip = tr.grad_clip;
    if (*o_thr) cfg.threads = tr.threads;
    AnchorSet initial;
    const AnchorSet* initial_ptr = nullptr;
    if (!tr.anchors.empty()) {
      initial = load_anchors_json(tr.anchors);
      initial_ptr = &initial;
    }
    TrainResult result = train(ds, cfg, tr.out, initial_ptr);
    if (result.epochs.empty()) {
      std::cerr << "train: wrote the initial checkpoint to " << tr.out << " (0 epochs)\n";
    } else {
      const EpochStats& last = result.epochs.back();
      std::cerr << "train: " << result.epochs.size() << " epochs, final loss " << last.loss
                << " (rec " << last.rec << ") -> " << tr.out << "\n";
    }
  });

  // ---- infer ----
  struct {
    std::string checkpoint, template_path, motion, out_dir;
  } inf;
  CLI::App* infer = app.add_subcommand("infer", "predict garment frames for a motion clip");
  infer->add_option("--checkpoint", inf.checkpoint, "checkpoint directory")->required();
  infer->add_option("--template", inf.template_path, "garment template OBJ")->required();
  infer->add_option("--motion", inf.motion, "motion clip JSONL")->required();
  infer->add_option("--out-dir", inf.out_dir, "directory for frame_*.obj")->required();
  infer->callback([&]() {
    Checkpoint ckpt = load_checkpoint(inf.checkpoint);
    Mesh tmpl = load_obj(inf.template_path);
    Clip motion = load_clip(inf.motion);
    std::vector<std::vector<Vec3>> frames = infer_clip(ckpt, tmpl, motion);
    fs::create_directories(inf.out_dir);
    Mesh out_mesh;
    out_mesh.faces = tmpl.faces;
    char name[32];
    for (size_t f = 0; f < frames.size(); ++f) {
      std::snprintf(name, sizeof(name), "frame_%06zu.obj", f + 1);
      out_mesh.vertices = frames[f];
      save_obj(out_mesh, (fs::path(inf.out_dir) / name).string());
    }
    std::cerr << "infer: " << frames.size() << " frames -> " << inf.out_dir << "\n";
  });

  // ---- eval ----
  struct {
    std::string pred_dir, gt, out;
  } ev;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "compare predicted frames against ground truth");
  eval_cmd->add_option("--pred-dir", ev.pred_dir, "directory of predicted frame_*.obj")
      ->required();
  eval_cmd->add_option("--gt", ev.gt, "ground-truth clip JSONL")->required();
  eval_cmd->add_option("--out", ev.out, "metrics CSV path")->required();
  eval_cmd->callback([&]() {
    Clip gt = load_clip(ev.gt);
    std::vector<fs::path> files = frame_objs(ev.pred_dir);
    if (files.size() != gt.frames.size())
      throw UsageError("prediction has " + std::to_string(files.size()) +
                       " frames, ground truth has " + std::to_string(gt.frames.size()));
    Mesh first;
    std::vector<std::vector<Vec3>> pred, gt_pos;
    for (size_t f = 0; f < files.size(); ++f) {
      Mesh mesh = load_obj(files[f].string());
      if (f == 0) first = mesh;
      if (mesh.vertices.size() != gt.frames[f].gt.size())
        throw UsageError(files[f].string() + " has " + std::to_string(mesh.vertices.size()) +
                         " vertices, ground truth has " +
                         std::to_string(gt.frames[f].gt.size()));
      pred.push_back(mesh.vertices);
      gt_pos.push_back(gt.frames[f].gt);
    }
    std::string csv = "frame,rmse_mm,hausdorff_mm\n";
    char line[128];
    double rmse_sum = 0.0;
    for (size_t f = 0; f < pred.size(); ++f) {
      double rmse = metric_rmse({pred[f]}, {gt_pos[f]});
      double haus = metric_hausdorff({pred[f]}, {gt_pos[f]});
      rmse_sum += rmse;
      std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g\n", f + 1, rmse, haus);
      csv += line;
    }
    if (pred.size() >= 2 && !first.faces.empty()) {
      std::snprintf(line, sizeof(line), "sted,%.17g,\n", metric_sted(pred, gt_pos, first));
      csv += line;
    }
    std::ofstream out(ev.out, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + ev.out);
    out << csv;
    std::cerr << "eval: " << pred.size() << " frames, mean rmse "
              << rmse_sum / static_cast<double>(pred.size()) << " mm -> " << ev.out << "\n";
  });

  // ---- gradcheck ----
  struct {
    uint64_t seed = 0;
    std::string corrupt_op;
  } gc;
  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "audit analytic gradients against finite differences");
  gradcheck->add_option("--seed", gc.seed, "rng seed");
  gradcheck->add_option("--corrupt-op", gc.corrupt_op)->group("");  // test hook
  gradcheck->callback([&]() {
    GradCheckReport report = run_gradcheck(gc.seed, gc.corrupt_op);
    std::printf("%-22s %13s  %s\n", "case", "max_rel_err", "status");
    for (const GradCheckRow& row : report.rows)
      std::printf("%-22s %13.4e  %s\n", row.name.c_str(), row.max_rel_err,
                  row.ok ? "ok" : "FAIL");
    for (const std::string& op : report.uncovered)
      std::printf("uncovered operation: %s\n", op.c_str());
    std::printf("gradcheck: %s (threshold %.1e)\n", report.all_ok ? "PASS" : "FAIL",
                report.threshold);
    if (!report.all_ok) {
      for (const GradCheckRow& row : report.rows)
        if (!row.ok)
          std::cerr << "gradcheck: gradient mismatch in '" << row.name << "' (max rel err "
                    << row.max_rel_err << ")\n";
      if (!report.uncovered.empty())
        std::cerr << "gradcheck: " << report.uncovered.size()
                  << " registered operation(s) lack coverage\n";
      rc = 1;
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
