#include "anchorcloth/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace anchorcloth {

namespace {

std::vector<double> uniform_fan_in(int rows, int cols, Rng* rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  std::vector<double> w(static_cast<size_t>(rows) * cols);
  for (double& v : w) v = rng->uniform(-bound, bound);
  return w;
}

GruLayerParams init_gru_layer(int in_dim, int hidden, Rng* rng) {
  GruLayerParams layer;
  int cols = in_dim + hidden;
  layer.wz = uniform_fan_in(hidden, cols, rng);
  layer.wr = uniform_fan_in(hidden, cols, rng);
  layer.wh = uniform_fan_in(hidden, cols, rng);
  layer.bz.assign(hidden, 0.0);
  layer.br.assign(hidden, 0.0);
  layer.bh.assign(hidden, 0.0);
  return layer;
}

HeadParams init_head(int in_dim, int mlp_hidden, int out_dim, Rng* rng) {
  HeadParams head;
  head.w1 = uniform_fan_in(mlp_hidden, in_dim, rng);
  head.b1.assign(mlp_hidden, 0.0);
  head.w2 = uniform_fan_in(out_dim, mlp_hidden, rng);
  head.b2.assign(out_dim, 0.0);
  head.prelu.assign(1, 0.25);
  return head;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, uint64_t seed) {
  if (config.n_anchors < 1 || config.n_vertices < 1)
    throw UsageError("ModelParams::init: anchor and vertex counts must be set");
  if (config.gru_layers < 1) throw UsageError("ModelParams::init: need at least one GRU layer");
  Rng rng(seed);
  ModelParams p;
  p.config = config;
  for (int l = 0; l < config.gru_layers; ++l) {
    int in_dim = (l == 0) ? config.input_dim() : config.hidden_size;
    p.gru.push_back(init_gru_layer(in_dim, config.hidden_size, &rng));
  }
  p.head_rt = init_head(config.hidden_size, config.mlp_hidden, 6 * config.n_anchors, &rng);
  p.head_d = init_head(config.hidden_size, config.mlp_hidden, 3 * config.n_vertices, &rng);
  return p;
}

namespace {

std::vector<ParamRef> collect_refs(ModelParams* p) {
  const ModelConfig& c = p->config;
  std::vector<ParamRef> refs;
  for (int l = 0; l < c.gru_layers; ++l) {
    int in_dim = (l == 0) ? c.input_dim() : c.hidden_size;
    int cols = in_dim + c.hidden_size;
    std::string base = "gru" + std::to_string(l + 1) + ".";
    GruLayerParams& g = p->gru[l];
    refs.push_back({base + "wz", &g.wz, c.hidden_size, cols});
    refs.push_back({base + "wr", &g.wr, c.hidden_size, cols});
    refs.push_back({base + "wh", &g.wh, c.hidden_size, cols});
    refs.push_back({base + "bz", &g.bz, c.hidden_size, 1});
    refs.push_back({base + "br", &g.br, c.hidden_size, 1});
    refs.push_back({base + "bh", &g.bh, c.hidden_size, 1});
  }
  auto head_refs = [&](const std::string& base, HeadParams& h, int out_dim) {
    refs.push_back({base + ".fc1.w", &h.w1, c.mlp_hidden, c.hidden_size});
    refs.push_back({base + ".fc1.b", &h.b1, c.mlp_hidden, 1});
    refs.push_back({base + ".fc2.w", &h.w2, out_dim, c.mlp_hidden});
    refs.push_back({base + ".fc2.b", &h.b2, out_dim, 1});
    refs.push_back({base + ".prelu", &h.prelu, 1, 1});
  };
  head_refs("head_rt", p->head_rt, 6 * c.n_anchors);
  head_refs("head_d", p->head_d, 3 * c.n_vertices);
  return refs;
}

}  // namespace

std::vector<ParamRef> ModelParams::param_refs() { return collect_refs(this); }

std::vector<ParamRef> ModelParams::param_refs() const {
  return collect_refs(const_cast<ModelParams*>(this));
}

std::vector<std::vector<double>> init_hidden(const ModelConfig& config, HiddenInit mode,
                                             Rng* rng) {
  std::vector<std::vector<double>> h(config.gru_layers);
  for (auto& layer : h) {
    layer.assign(config.hidden_size, 0.0);
    if (mode == HiddenInit::sampled) {
      if (!rng) throw UsageError("init_hidden: sampled mode needs an RNG");
      for (double& v : layer) v = rng->normal(0.0, config.init_state_std);
    }
  }
  return h;
}

TapedModel stage_params(ad::Tape* tape, const ModelParams& params) {
  TapedModel staged;
  std::vector<ParamRef> refs = params.param_refs();
  std::vector<ad::Tensor> leaves;
  leaves.reserve(refs.size());
  for (const ParamRef& r : refs) leaves.push_back(tape->input(r.rows, r.cols, *r.values));

  size_t i = 0;
  for (int l = 0; l < params.config.gru_layers; ++l) {
    TapedModel::GruLayer layer;
    layer.wz = leaves[i++];
    layer.wr = leaves[i++];
    layer.wh = leaves[i++];
    layer.bz = leaves[i++];
    layer.br = leaves[i++];
    layer.bh = leaves[i++];
    staged.gru.push_back(layer);
  }
  for (TapedModel::Head* head : {&staged.head_rt, &staged.head_d}) {
    head->w1 = leaves[i++];
    head->b1 = leaves[i++];
    head->w2 = leaves[i++];
    head->b2 = leaves[i++];
    head->prelu = leaves[i++];
  }
  staged.leaves = std::move(leaves);
  return staged;
}

ad::Tensor gru_cell(ad::Tensor x, ad::Tensor h, const TapedModel::GruLayer& layer) {
  using namespace ad;
  Tensor xh = concat_rows(x, h);
  Tensor z = sigmoid(add(matmul(layer.wz, xh), layer.bz));
  Tensor r = sigmoid(add(matmul(layer.wr, xh), layer.br));
  Tensor xrh = concat_rows(x, mul(r, h));
  Tensor cand = tanh_op(add(matmul(layer.wh, xrh), layer.bh));
  // (1 - z) (.) h + z (.) cand
  Tensor one_minus_z = add_scalar(neg(z), 1.0);
  return add(mul(one_minus_z, h), mul(z, cand));
}

std::vector<ad::Tensor> encode_sequence(const std::vector<ad::Tensor>& inputs,
                                        const TapedModel& model,
                                        std::vector<ad::Tensor>* hidden) {
  if (hidden->size() != model.gru.size())
    throw UsageError("encode_sequence: hidden state count does not match layers");
  std::vector<ad::Tensor> features;
  features.reserve(inputs.size());
  for (ad::Tensor x : inputs) {
    ad::Tensor layer_in = x;
    for (size_t l = 0; l < model.gru.size(); ++l) {
      (*hidden)[l] = gru_cell(layer_in, (*hidden)[l], model.gru[l]);
      layer_in = (*hidden)[l];
    }
    features.push_back(layer_in);
  }
  return features;
}

namespace {

ad::Tensor run_head(ad::Tensor feature, const TapedModel::Head& head) {
  using namespace ad;
  Tensor hidden = prelu(add(matmul(head.w1, feature), head.b1), head.prelu);
  return add(matmul(head.w2, hidden), head.b2);
}

}  // namespace

HeadsOut apply_heads(ad::Tensor feature, const TapedModel& model, const ModelConfig& config) {
  using namespace ad;
  int n = config.n_anchors, m = config.n_vertices;
  Tensor rt = run_head(feature, model.head_rt);      // (6n, 1)
  HeadsOut out;
  out.euler = reshape(slice_rows(rt, 0, 3 * n), n, 3);
  out.translations = reshape(slice_rows(rt, 3 * n, 6 * n), n, 3);
  out.displacements = reshape(run_head(feature, model.head_d), m, 3);
  return out;
}

void save_model_bin(const ModelParams& params, const std::string& path) {
  std::FILE* out = std::fopen(path.c_str(), "wb");
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  for (const ParamRef& r : params.param_refs()) {
    size_t n = r.values->size();
    if (std::fwrite(r.values->data(), sizeof(double), n, out) != n) {
      std::fclose(out);
      throw std::runtime_error("short write to model file: " + path);
    }
  }
  if (std::fclose(out) != 0) throw std::runtime_error("failed to flush model file: " + path);
}

void load_model_bin(ModelParams* params, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open model file: " + path);
  for (const ParamRef& r : params->param_refs()) {
    in.read(reinterpret_cast<char*>(r.values->data()),
            static_cast<std::streamsize>(r.values->size() * sizeof(double)));
    if (!in)
      throw UsageError("model file " + path + " truncated at tensor " + r.name);
  }
  char extra;
  if (in.read(&extra, 1))
    throw UsageError("model file " + path + " has trailing bytes (config mismatch?)");
}

}  // namespace anchorcloth
