#pragma once

// Sequence model: stacked GRU layers over per-frame pose inputs, followed by
// two 2-layer MLP heads that regress per-anchor rigid transforms (as Euler
// angles + translations) and per-vertex canonical displacements.

#include <cstdint>
#include <string>
#include <vector>

#include "anchorcloth/autodiff.hpp"
#include "anchorcloth/core.hpp"

namespace anchorcloth {

struct ModelConfig {
  int pose_dim = 6;     // theta size; the GRU input is [theta; t], pose_dim + 3 wide
  int hidden_size = 32;
  int gru_layers = 2;
  int mlp_hidden = 32;
  int n_anchors = 0;
  int n_vertices = 0;
  double init_state_std = 0.1;  // stddev of the sampled initial hidden state

  int input_dim() const { return pose_dim + 3; }
};

// One named parameter tensor; `values` is row-major rows x cols.
struct ParamRef {
  std::string name;
  std::vector<double>* values;
  int rows, cols;
};

struct GruLayerParams {
  std::vector<double> wz, wr, wh;  // hidden x (in + hidden)
  std::vector<double> bz, br, bh;  // hidden
};

struct HeadParams {
  std::vector<double> w1, b1;  // mlp_hidden x in, mlp_hidden
  std::vector<double> w2, b2;  // out x mlp_hidden, out
  std::vector<double> prelu;   // single shared slope
};

struct ModelParams {
  ModelConfig config;
  std::vector<GruLayerParams> gru;
  HeadParams head_rt;  // outputs 6 * n_anchors (3 Euler + 3 translation each)
  HeadParams head_d;   // outputs 3 * n_vertices

  // Weights ~ uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero,
  // PReLU slopes 0.25.
  static ModelParams init(const ModelConfig& config, uint64_t seed);

  // Every parameter tensor in fixed serialization order. Non-const overload
  // yields mutable pointers for the optimizer.
  std::vector<ParamRef> param_refs();
  std::vector<ParamRef> param_refs() const;
};

// Initial hidden state per layer: zeros at inference, N(0, init_state_std^2)
// draws in training mode.
enum class HiddenInit { zeros, sampled };
std::vector<std::vector<double>> init_hidden(const ModelConfig& config, HiddenInit mode,
                                             Rng* rng);

// Taped parameter mirror for one forward pass, aligned with param_refs().
struct TapedModel {
  struct GruLayer {
    ad::Tensor wz, wr, wh, bz, br, bh;
  };
  struct Head {
    ad::Tensor w1, b1, w2, b2, prelu;
  };
  std::vector<GruLayer> gru;
  Head head_rt, head_d;
  std::vector<ad::Tensor> leaves;  // same order as param_refs()
};

TapedModel stage_params(ad::Tape* tape, const ModelParams& params);

// h' = (1-z) (.) h + z (.) tanh(Wh [x; r (.) h] + bh), z/r from sigmoid gates.
ad::Tensor gru_cell(ad::Tensor x, ad::Tensor h, const TapedModel::GruLayer& layer);

// Runs the stacked GRU over per-frame inputs (each input_dim x 1); returns the
// top layer's hidden state per frame. `hidden` is updated in place so a caller
// can continue the sequence.
std::vector<ad::Tensor> encode_sequence(const std::vector<ad::Tensor>& inputs,
                                        const TapedModel& model,
                                        std::vector<ad::Tensor>* hidden);

struct HeadsOut {
  ad::Tensor euler;          // (n_anchors, 3)
  ad::Tensor translations;   // (n_anchors, 3)
  ad::Tensor displacements;  // (n_vertices, 3)
};

HeadsOut apply_heads(ad::Tensor feature, const TapedModel& model, const ModelConfig& config);

// Raw little-endian doubles for each tensor in param_refs() order, plus a
// JSON manifest describing names/shapes/offsets.
void save_model_bin(const ModelParams& params, const std::string& path);
void load_model_bin(ModelParams* params, const std::string& path);

}  // namespace anchorcloth
