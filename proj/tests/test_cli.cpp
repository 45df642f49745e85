#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "anchorcloth/anchors.hpp"
#include "anchorcloth/data.hpp"
#include "anchorcloth/geometry.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace anchorcloth;

namespace {

// Exit code of the tool run with `args`, stdout/stderr captured to files.
int run_cli(const std::string& args, const std::string& capture_prefix = "") {
  std::string cmd = std::string(ANCHORCLOTH_CLI_PATH) + " " + args;
  if (capture_prefix.empty())
    cmd += " > /dev/null 2> /dev/null";
  else
    cmd += " > " + capture_prefix + ".out 2> " + capture_prefix + ".err";
  int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const std::string& path) {
  std::ifstream in(path);
  int n = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

int count_frame_objs(const std::string& dir) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string name = e.path().filename().string();
    if (name.rfind("frame_", 0) == 0 && name.size() > 4 &&
        name.substr(name.size() - 4) == ".obj")
      ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("help exits clean, usage errors exit 2") {
  testutil::TempDir dir("usage");
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("synth --help") == 0);
  CHECK(run_cli("") == 2);                    // a subcommand is required
  CHECK(run_cli("frobnicate") == 2);          // unknown subcommand
  CHECK(run_cli("synth") == 2);               // missing required --out
  CHECK(run_cli("synth --out " + dir.file("ds") + " --grid 4") == 2);   // domain error
  CHECK(run_cli("synth --out " + dir.file("ds") + " --grid x") == 2);   // parse error
  CHECK(run_cli("train --data " + dir.file("nope") + " --out " + dir.file("run")) == 2);
  CHECK(run_cli("prepare --template " + dir.file("nope.obj") + " --out " + dir.file("p")) == 2);
  CHECK(run_cli("eval --pred-dir " + dir.file("nope") + " --gt x --out y") == 2);
  CHECK(run_cli("infer --checkpoint " + dir.file("nope") + " --template x --motion y "
                "--out-dir z") == 2);
}

TEST_CASE("gradient audit passes clean and fails when sabotaged") {
  testutil::TempDir dir("gradcheck");
  CHECK(run_cli("gradcheck --seed 0", dir.file("ok")) == 0);
  std::string out = slurp(dir.file("ok.out"));
  CHECK(out.find("gradcheck: PASS") != std::string::npos);
  CHECK(out.find("FAIL") == std::string::npos);
  CHECK(out.find("uncovered operation") == std::string::npos);

  CHECK(run_cli("gradcheck --seed 0 --corrupt-op matmul", dir.file("bad")) == 1);
  std::string bad = slurp(dir.file("bad.out"));
  CHECK(bad.find("gradcheck: FAIL") != std::string::npos);

  CHECK(run_cli("gradcheck --seed 0 --corrupt-op end_to_end", dir.file("e2e")) == 1);
}

TEST_CASE("full pipeline: synth, prepare, train, infer, eval") {
  testutil::TempDir dir("pipeline");
  std::string ds = dir.file("ds");

  REQUIRE(run_cli("synth --out " + ds + " --grid 8 --clips 2 --frames 12 --seed 21") == 0);
  REQUIRE(fs::exists(ds + "/manifest.json"));
  REQUIRE(fs::exists(ds + "/template.obj"));
  REQUIRE(fs::exists(ds + "/body_rest.obj"));
  REQUIRE(fs::exists(ds + "/clips/swing_00.jsonl"));
  REQUIRE(fs::exists(ds + "/clips/slide_01.jsonl"));

  std::string prep = dir.file("prep");
  REQUIRE(run_cli("prepare --template " + ds + "/template.obj --anchors 6 --neighbors 12 "
                  "--influences 3 --seed 4 --out " + prep) == 0);
  AnchorSet set = load_anchors_json(prep + "/anchors.json");
  CHECK(set.n_anchors == 6);
  CHECK(set.n_vertices() == 64);
  Mesh simplified = load_obj(prep + "/simplified.obj");
  CHECK(simplified.n_vertices() == 12);  // default target 2 * anchors
  CHECK(run_cli("prepare --template " + ds + "/template.obj --anchors 100 --out " +
                dir.file("prep_too_many")) == 2);

  std::string run = dir.file("run");
  std::string train_flags = " --epochs 2 --seq-len 6 --batch 2 --hidden 8 --gru-layers 1 "
                            "--mlp-hidden 8 --simplify-target 16 --seed 5";
  REQUIRE(run_cli("train --data " + ds + " --anchors " + prep + "/anchors.json --out " + run +
                  train_flags) == 0);
  for (const char* f : {"model.bin", "model.manifest.json", "anchors.json", "optim.bin",
                        "train_log.jsonl", "loss_curves.csv", "loss_curves.svg"})
    CHECK(fs::exists(run + "/" + f));
  CHECK(count_lines(run + "/train_log.jsonl") == 2);

  // training is reproducible at the artifact level
  std::string run2 = dir.file("run2");
  REQUIRE(run_cli("train --data " + ds + " --anchors " + prep + "/anchors.json --out " + run2 +
                  train_flags) == 0);
  CHECK(testutil::read_file_bytes(run2 + "/model.bin") ==
        testutil::read_file_bytes(run + "/model.bin"));
  CHECK(testutil::read_file_bytes(run2 + "/anchors.json") ==
        testutil::read_file_bytes(run + "/anchors.json"));

  std::string pred = dir.file("pred");
  REQUIRE(run_cli("infer --checkpoint " + run + " --template " + ds + "/template.obj "
                  "--motion " + ds + "/clips/swing_00.jsonl --out-dir " + pred) == 0);
  CHECK(count_frame_objs(pred) == 12);
  CHECK(fs::exists(pred + "/frame_000001.obj"));
  CHECK(fs::exists(pred + "/frame_000012.obj"));
  Mesh f1 = load_obj(pred + "/frame_000001.obj");
  CHECK(f1.n_vertices() == 64);
  CHECK(f1.faces.size() == 2u * 7 * 7);

  std::string metrics = dir.file("metrics.csv");
  REQUIRE(run_cli("eval --pred-dir " + pred + " --gt " + ds + "/clips/swing_00.jsonl --out " +
                  metrics) == 0);
  std::ifstream csv(metrics);
  std::string line;
  REQUIRE(std::getline(csv, line));
  CHECK(line == "frame,rmse_mm,hausdorff_mm");
  int rows = 0;
  bool sted_row = false;
  while (std::getline(csv, line)) {
    if (line.rfind("sted,", 0) == 0) {
      sted_row = true;
      continue;
    }
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 12);
  CHECK(sted_row);

  // frame count mismatch between prediction and ground truth
  fs::remove(pred + "/frame_000012.obj");
  CHECK(run_cli("eval --pred-dir " + pred + " --gt " + ds + "/clips/swing_00.jsonl --out " +
                dir.file("bad.csv")) == 2);
}

TEST_CASE("evaluating ground truth against itself reports (near) zero error") {
  testutil::TempDir dir("selfeval");
  SynthConfig cfg;
  cfg.grid = 8;
  cfg.n_clips = 1;
  cfg.frames_per_clip = 6;
  cfg.seed = 2;
  SequenceDataset ds = synth_cloth(cfg);
  save_dataset(ds, dir.file("ds"));

  std::string pred = dir.file("pred");
  fs::create_directories(pred);
  Mesh out_mesh;
  out_mesh.faces = ds.template_mesh.faces;
  for (int f = 0; f < 6; ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%06d.obj", f + 1);
    out_mesh.vertices = ds.clips[0].frames[f].gt;
    save_obj(out_mesh, pred + "/" + name);
  }
  std::string clip = dir.file("ds") + "/clips/" + ds.clips[0].name + ".jsonl";
  std::string metrics = dir.file("metrics.csv");
  REQUIRE(run_cli("eval --pred-dir " + pred + " --gt " + clip + " --out " + metrics) == 0);

  // predictions differ from ground truth only by OBJ text quantization (1e-6 m)
  std::ifstream csv(metrics);
  std::string line;
  std::getline(csv, line);  // header
  int rows = 0;
  while (std::getline(csv, line)) {
    if (line.empty() || line.rfind("sted,", 0) == 0) continue;
    size_t c1 = line.find(','), c2 = line.find(',', c1 + 1);
    REQUIRE(c2 != std::string::npos);
    double rmse = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    double haus = std::stod(line.substr(c2 + 1));
    CHECK(rmse < 1e-3);  // mm
    CHECK(haus < 2e-3);  // mm
    ++rows;
  }
  CHECK(rows == 6);
}

TEST_CASE("config files apply and explicit flags override them") {
  testutil::TempDir dir("config");

  std::ofstream(dir.file("synth.json"))
      << R"({"grid": 10, "n_clips": 1, "frames_per_clip": 4, "seed": 9})";
  std::string ds = dir.file("ds");
  REQUIRE(run_cli("synth --config " + dir.file("synth.json") + " --out " + ds + " --grid 8") ==
          0);
  Mesh tmpl = load_obj(ds + "/template.obj");
  CHECK(tmpl.n_vertices() == 64);  // the flag beat the config file
  SequenceDataset loaded = load_dataset(ds + "/manifest.json");
  CHECK(loaded.clips.size() == 1);        // config file fields still apply
  CHECK(loaded.clips[0].n_frames() == 4);

  std::ofstream(dir.file("bad_synth.json")) << R"({"gird": 8})";
  CHECK(run_cli("synth --config " + dir.file("bad_synth.json") + " --out " + dir.file("x")) ==
        2);

  std::ofstream(dir.file("train.json")) << R"({"epochs": 3, "sequence_length": 4,
      "batch_size": 2, "n_anchors": 6, "k_neighbors": 12, "n_influences": 3,
      "simplify_target": 16, "hidden_size": 8, "gru_layers": 1, "mlp_hidden": 8})";
  std::string run = dir.file("run");
  REQUIRE(run_cli("train --data " + ds + " --config " + dir.file("train.json") + " --out " +
                  run + " --epochs 1") == 0);
  CHECK(count_lines(run + "/train_log.jsonl") == 1);  // flag beat the file

  std::ofstream(dir.file("bad_train.json")) << R"({"epochz": 3})";
  CHECK(run_cli("train --data " + ds + " --config " + dir.file("bad_train.json") + " --out " +
                dir.file("y")) == 2);
}

TEST_CASE("synthesis is byte-deterministic across runs") {
  testutil::TempDir dir("determinism");
  std::string flags = " --grid 8 --clips 2 --frames 6 --seed 11 --script mixed";
  REQUIRE(run_cli("synth --out " + dir.file("a") + flags) == 0);
  REQUIRE(run_cli("synth --out " + dir.file("b") + flags) == 0);
  for (const char* rel : {"manifest.json", "template.obj", "body_rest.obj",
                          "clips/mixed_00.jsonl", "clips/mixed_01.jsonl"})
    CHECK(testutil::read_file_bytes(dir.file("a") + "/" + rel) ==
          testutil::read_file_bytes(dir.file("b") + "/" + rel));

  // a different seed actually changes the data
  REQUIRE(run_cli("synth --out " + dir.file("c") + " --grid 8 --clips 2 --frames 6 --seed 12 "
                  "--script mixed") == 0);
  CHECK(testutil::read_file_bytes(dir.file("c") + "/clips/mixed_00.jsonl") !=
        testutil::read_file_bytes(dir.file("a") + "/clips/mixed_00.jsonl"));
}
