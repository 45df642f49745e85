#include "anchorcloth/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <set>

#include "anchorcloth/anchors.hpp"
#include "anchorcloth/autodiff.hpp"
#include "anchorcloth/geometry.hpp"
#include "anchorcloth/losses.hpp"
#include "anchorcloth/model.hpp"
#include "anchorcloth/skinning.hpp"
#include "anchorcloth/training.hpp"

namespace anchorcloth {
namespace {

constexpr double kEps = 1e-5;
constexpr double kThreshold = 1e-4;

struct Input {
  int rows, cols;
  std::vector<double> values;
};

// One checked computation: leaves built from `inputs`, reduced to a scalar by
// `build`. The d(loss)/d(input) from the tape is compared against central
// differences element by element.
struct Case {
  std::string name;
  std::vector<std::string> covers;
  std::vector<Input> inputs;
  std::function<ad::Tensor(ad::Tape*, const std::vector<ad::Tensor>&)> build;
};

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Values away from zero, so relu/normalize/cosine guards stay inactive.
std::vector<double> signed_values(Rng* rng, int n, double lo = 0.3, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) {
    double mag = rng->uniform(lo, hi);
    x = rng->uniform(0.0, 1.0) < 0.5 ? -mag : mag;
  }
  return v;
}

std::vector<double> smooth_values(Rng* rng, int n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng->uniform(lo, hi);
  return v;
}

std::vector<Vec3> random_points(Rng* rng, int n, double spread = 1.0) {
  std::vector<Vec3> pts(n);
  for (Vec3& p : pts)
    p = Vec3{rng->uniform(-spread, spread), rng->uniform(-spread, spread),
             rng->uniform(-spread, spread)};
  return pts;
}

// Reduce an arbitrary output to a scalar through a fixed random functional,
// so every output element influences the loss with a distinct weight.
ad::Tensor reduce(ad::Tape* tape, ad::Tensor out, uint64_t tag) {
  Rng rng(0x9e3779b97f4a7c15ull ^ tag);
  std::vector<double> c(static_cast<size_t>(tape->rows(out)) * tape->cols(out));
  for (double& v : c) v = rng.uniform(-1.0, 1.0);
  ad::Tensor weights = tape->input(tape->rows(out), tape->cols(out), c);
  return ad::sum(ad::mul(out, weights));
}

GradCheckRow check_case(const Case& c, bool corrupt) {
  auto eval = [&](const std::vector<Input>& inputs,
                  std::vector<std::vector<double>>* grads) {
    ad::Tape tape;
    std::vector<ad::Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const Input& in : inputs) leaves.push_back(tape.input(in.rows, in.cols, in.values));
    ad::Tensor loss = c.build(&tape, leaves);
    double v = tape.scalar_val(loss);
    if (grads != nullptr) {
      tape.backward(loss);
      for (ad::Tensor leaf : leaves) grads->push_back(tape.grad(leaf));
    }
    return v;
  };

  std::vector<std::vector<double>> analytic;
  eval(c.inputs, &analytic);
  if (corrupt) analytic[0][0] += 0.5;

  GradCheckRow row;
  row.name = c.name;
  std::vector<Input> work = c.inputs;
  for (size_t i = 0; i < work.size(); ++i) {
    for (size_t e = 0; e < work[i].values.size(); ++e) {
      double saved = work[i].values[e];
      work[i].values[e] = saved + kEps;
      double f_plus = eval(work, nullptr);
      work[i].values[e] = saved - kEps;
      double f_minus = eval(work, nullptr);
      work[i].values[e] = saved;
      double fd = (f_plus - f_minus) / (2.0 * kEps);
      row.max_rel_err = std::max(row.max_rel_err, rel_err(analytic[i][e], fd));
    }
  }
  row.ok = row.max_rel_err < kThreshold;
  return row;
}

Input make_input(int rows, int cols, std::vector<double> values) {
  return Input{rows, cols, std::move(values)};
}

std::vector<Case> build_cases(uint64_t seed) {
  Rng root(seed);
  std::vector<Case> cases;
  auto rng_for = [&](uint64_t tag) { return root.split(tag); };
  uint64_t tag = 0;

  auto unary = [&](const std::string& name, auto op, std::vector<double> values) {
    Case c;
    c.name = name;
    c.covers = {name};
    c.inputs = {make_input(3, 4, std::move(values))};
    uint64_t t = tag++;
    c.build = [op, t](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, op(in[0]), t);
    };
    cases.push_back(std::move(c));
  };
  auto binary = [&](const std::string& name, auto op, std::vector<double> a,
                    std::vector<double> b) {
    Case c;
    c.name = name;
    c.covers = {name};
    c.inputs = {make_input(3, 4, std::move(a)), make_input(3, 4, std::move(b))};
    uint64_t t = tag++;
    c.build = [op, t](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, op(in[0], in[1]), t);
    };
    cases.push_back(std::move(c));
  };

  {
    Rng r = rng_for(1);
    binary("add", [](ad::Tensor a, ad::Tensor b) { return ad::add(a, b); },
           smooth_values(&r, 12, -1, 1), smooth_values(&r, 12, -1, 1));
  }
  {
    Rng r = rng_for(2);
    binary("sub", [](ad::Tensor a, ad::Tensor b) { return ad::sub(a, b); },
           smooth_values(&r, 12, -1, 1), smooth_values(&r, 12, -1, 1));
  }
  {
    Rng r = rng_for(3);
    binary("mul", [](ad::Tensor a, ad::Tensor b) { return ad::mul(a, b); },
           smooth_values(&r, 12, -1, 1), smooth_values(&r, 12, -1, 1));
  }
  {
    Rng r = rng_for(4);
    binary("div", [](ad::Tensor a, ad::Tensor b) { return ad::div(a, b); },
           smooth_values(&r, 12, -1, 1), signed_values(&r, 12, 0.5, 1.5));
  }
  {
    Rng r = rng_for(5);
    unary("neg", [](ad::Tensor x) { return ad::neg(x); }, smooth_values(&r, 12, -1, 1));
  }
  {
    Rng r = rng_for(6);
    unary("scale", [](ad::Tensor x) { return ad::scale(x, 1.7); },
          smooth_values(&r, 12, -1, 1));
  }
  {
    Rng r = rng_for(7);
    unary("add_scalar", [](ad::Tensor x) { return ad::add_scalar(x, 0.37); },
          smooth_values(&r, 12, -1, 1));
  }
  {
    Rng r = rng_for(8);
    unary("square", [](ad::Tensor x) { return ad::square(x); }, smooth_values(&r, 12, -1, 1));
  }
  {
    Rng r = rng_for(9);
    unary("sqrt", [](ad::Tensor x) { return ad::sqrt_op(x); }, smooth_values(&r, 12, 0.5, 2));
  }
  {
    Rng r = rng_for(10);
    unary("exp", [](ad::Tensor x) { return ad::exp_op(x); }, smooth_values(&r, 12, -1, 1));
  }
  {
    Rng r = rng_for(11);
    unary("sin", [](ad::Tensor x) { return ad::sin_op(x); }, smooth_values(&r, 12, -2, 2));
  }
  {
    Rng r = rng_for(12);
    unary("cos", [](ad::Tensor x) { return ad::cos_op(x); }, smooth_values(&r, 12, -2, 2));
  }
  {
    Rng r = rng_for(13);
    unary("tanh", [](ad::Tensor x) { return ad::tanh_op(x); }, smooth_values(&r, 12, -2, 2));
  }
  {
    Rng r = rng_for(14);
    unary("sigmoid", [](ad::Tensor x) { return ad::sigmoid(x); },
          smooth_values(&r, 12, -2, 2));
  }
  {
    Rng r = rng_for(15);
    unary("relu", [](ad::Tensor x) { return ad::relu(x); }, signed_values(&r, 12, 0.2, 1.0));
  }
  {
    Rng r = rng_for(16);
    Case c;
    c.name = "prelu";
    c.covers = {"prelu"};
    c.inputs = {make_input(3, 4, signed_values(&r, 12, 0.2, 1.0)), make_input(1, 1, {0.25})};
    uint64_t t = tag++;
    c.build = [t](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::prelu(in[0], in[1]), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(17);
    Case c;
    c.name = "concat_rows";
    c.covers = {"concat_rows"};
    c.inputs = {make_input(2, 3, smooth_values(&r, 6, -1, 1)),
                make_input(3, 3, smooth_values(&r, 9, -1, 1))};
    uint64_t t = tag++;
    c.build = [t](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::concat_rows(in[0], in[1]), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(18);
    Case c;
    c.name = "concat_cols";
    c.covers = {"concat_cols"};
    c.inputs = {make_input(3, 2, smooth_values(&r, 6, -1, 1)),
                make_input(3, 3, smooth_values(&r, 9, -1, 1))};
    uint64_t t = tag++;
    c.build = [t](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::concat_cols(in[0], in[1]), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(19);
    Case c;
    c.name = "slice_rows";
    c.covers = {"slice_rows"};
    c.inputs = {make_input(5, 3, smooth_values(&r, 15, -1, 1))};
    uint64_t t = tag++;
    c.build = [t](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::slice_rows(in[0], 1, 4), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(20);
    Case c;
    c.name = "reshape";
    c.covers = {"reshape"};
    c.inputs = {make_input(3, 4, smooth_values(&r, 12, -1, 1))};
    uint64_t t = tag++;
    c.build = [t](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::reshape(in[0], 2, 6), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(21);
    Case c;
    c.name = "gather_rows";
    c.covers = {"gather_rows"};
    c.inputs = {make_input(5, 3, smooth_values(&r, 15, -1, 1))};
    uint64_t t = tag++;
    // repeated index 0 exercises gradient accumulation
    auto idx = std::make_shared<const std::vector<int>>(std::vector<int>{3, 0, 4, 0});
    c.build = [t, idx](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::gather_rows(in[0], idx), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(22);
    unary("sum", [](ad::Tensor x) { return ad::sum(x); }, smooth_values(&r, 12, -1, 1));
  }
  {
    Rng r = rng_for(23);
    unary("mean", [](ad::Tensor x) { return ad::mean(x); }, smooth_values(&r, 12, -1, 1));
  }
  {
    Rng r = rng_for(24);
    unary("row_sum", [](ad::Tensor x) { return ad::row_sum(x); },
          smooth_values(&r, 12, -1, 1));
  }
  {
    Rng r = rng_for(25);
    binary("row_dot", [](ad::Tensor a, ad::Tensor b) { return ad::row_dot(a, b); },
           smooth_values(&r, 12, -1, 1), smooth_values(&r, 12, -1, 1));
  }
  {
    Rng r = rng_for(26);
    unary("norm_sq", [](ad::Tensor x) { return ad::norm_sq(x); },
          smooth_values(&r, 12, -1, 1));
  }
  {
    Rng r = rng_for(27);
    Case c;
    c.name = "matmul";
    c.covers = {"matmul"};
    c.inputs = {make_input(3, 4, smooth_values(&r, 12, -1, 1)),
                make_input(4, 2, smooth_values(&r, 8, -1, 1))};
    uint64_t t = tag++;
    c.build = [t](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::matmul(in[0], in[1]), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(28);
    Case c;
    c.name = "softmax_rows";
    c.covers = {"softmax_rows"};
    c.inputs = {make_input(3, 5, smooth_values(&r, 15, -2, 2))};
    uint64_t t = tag++;
    c.build = [t](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::softmax_rows(in[0]), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(29);
    Case c;
    c.name = "rows_normalize";
    c.covers = {"rows_normalize"};
    c.inputs = {make_input(4, 3, signed_values(&r, 12, 0.3, 1.0))};
    uint64_t t = tag++;
    c.build = [t](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::rows_normalize(in[0]), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(30);
    Case c;
    c.name = "cosine_similarity";
    c.covers = {"cosine_similarity"};
    c.inputs = {make_input(4, 3, signed_values(&r, 12, 0.3, 1.0)),
                make_input(4, 3, signed_values(&r, 12, 0.3, 1.0))};
    uint64_t t = tag++;
    c.build = [t](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::cosine_similarity(in[0], in[1]), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(31);
    Case c;
    c.name = "attention_gather";
    c.covers = {"attention_gather"};
    c.inputs = {make_input(2, 3, smooth_values(&r, 6, -1, 1)),
                make_input(5, 3, smooth_values(&r, 15, -1, 1))};
    uint64_t t = tag++;
    auto nbrs = std::make_shared<const std::vector<std::vector<int>>>(
        std::vector<std::vector<int>>{{0, 2, 4}, {1, 3, 0}});
    c.build = [t, nbrs](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::attention_gather(in[0], in[1], nbrs), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(32);
    Case c;
    c.name = "graph_laplacian";
    c.covers = {"graph_laplacian"};
    c.inputs = {make_input(5, 3, smooth_values(&r, 15, -1, 1))};
    uint64_t t = tag++;
    auto adj = std::make_shared<const VertexAdjacency>(
        VertexAdjacency{{1}, {0, 2}, {1, 3}, {2, 4}, {3}});
    c.build = [t, adj](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::graph_laplacian_op(in[0], adj), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(33);
    Case c;
    c.name = "vertex_normals";
    c.covers = {"vertex_normals"};
    // bent quad, well away from degenerate triangles
    std::vector<double> pos = {0, 0, 0, 1, 0.1, 0, 1.1, 0.2, 1, -0.1, 0.1, 0.9};
    for (double& v : pos) v += r.uniform(-0.05, 0.05);
    c.inputs = {make_input(4, 3, pos)};
    uint64_t t = tag++;
    auto faces = std::make_shared<const std::vector<std::array<int, 3>>>(
        std::vector<std::array<int, 3>>{{0, 1, 2}, {0, 2, 3}});
    c.build = [t, faces](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::vertex_normals_op(in[0], faces), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(34);
    Case c;
    c.name = "euler_rotmats";
    c.covers = {"euler_rotmats"};
    c.inputs = {make_input(3, 3, smooth_values(&r, 9, -1, 1))};
    uint64_t t = tag++;
    c.build = [t](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::euler_rotmats(in[0]), t);
    };
    cases.push_back(std::move(c));
  }
  auto random_rotations = [](Rng* r, int n) {
    auto mats = std::make_shared<std::vector<Mat3>>();
    for (int i = 0; i < n; ++i)
      mats->push_back(euler_to_rotation(Vec3{r->uniform(-1.0, 1.0), r->uniform(-1.0, 1.0),
                                             r->uniform(-1.0, 1.0)}));
    return std::shared_ptr<const std::vector<Mat3>>(mats);
  };
  {
    Rng r = rng_for(35);
    Case c;
    c.name = "compose_rot";
    c.covers = {"compose_rot"};
    c.inputs = {make_input(2, 3, smooth_values(&r, 6, -1, 1))};
    uint64_t t = tag++;
    auto a = random_rotations(&r, 2);
    c.build = [t, a](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::compose_rot(ad::euler_rotmats(in[0]), a), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(36);
    Case c;
    c.name = "compose_trans";
    c.covers = {"compose_trans"};
    c.inputs = {make_input(2, 3, smooth_values(&r, 6, -1, 1)),
                make_input(2, 3, smooth_values(&r, 6, -1, 1))};
    uint64_t t = tag++;
    auto a = random_rotations(&r, 2);
    auto u = std::make_shared<const std::vector<Vec3>>(random_points(&r, 2));
    auto cc = std::make_shared<const std::vector<Vec3>>(random_points(&r, 2));
    c.build = [t, a, u, cc](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::compose_trans(ad::euler_rotmats(in[0]), in[1], a, u, cc), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(37);
    Case c;
    c.name = "transform_points";
    c.covers = {"transform_points"};
    c.inputs = {make_input(2, 3, smooth_values(&r, 6, -1, 1)),
                make_input(2, 3, smooth_values(&r, 6, -1, 1)),
                make_input(2, 3, smooth_values(&r, 6, -1, 1))};
    uint64_t t = tag++;
    c.build = [t](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::transform_points(ad::euler_rotmats(in[0]), in[1], in[2]), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(38);
    Case c;
    c.name = "lbs";
    c.covers = {"lbs"};
    c.inputs = {make_input(3, 3, smooth_values(&r, 9, -1, 1)),
                make_input(3, 3, smooth_values(&r, 9, -1, 1)),
                make_input(4, 3, smooth_values(&r, 12, -1, 1)),
                make_input(4, 2, smooth_values(&r, 8, -2, 2))};
    uint64_t t = tag++;
    auto idx = std::make_shared<const std::vector<std::vector<int>>>(
        std::vector<std::vector<int>>{{0, 2}, {1, 0}, {2, 1}, {0, 1}});
    c.build = [t, idx](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      ad::Tensor weights = ad::softmax_rows(in[3]);
      return reduce(
          tape, ad::lbs_op(ad::euler_rotmats(in[0]), in[1], in[2], weights, idx), t);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(39);
    Case c;
    c.name = "chamfer";
    c.covers = {"chamfer"};
    c.inputs = {make_input(4, 3, smooth_values(&r, 12, -1, 1))};
    uint64_t t = tag++;
    auto targets = std::make_shared<const std::vector<Vec3>>(random_points(&r, 5, 2.0));
    c.build = [t, targets](ad::Tape* tape, const std::vector<ad::Tensor>& in) {
      return reduce(tape, ad::chamfer(in[0], targets), t);
    };
    cases.push_back(std::move(c));
  }

  // ---- loss-level rows ----
  {
    Rng r = rng_for(40);
    Case c;
    c.name = "loss_rec";
    c.inputs = {make_input(6, 3, smooth_values(&r, 18, -1, 1)),
                make_input(6, 3, smooth_values(&r, 18, -1, 1))};
    c.build = [](ad::Tape*, const std::vector<ad::Tensor>& in) {
      return loss_rec(in[0], in[1]);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(41);
    Case c;
    c.name = "loss_lap";
    c.inputs = {make_input(5, 3, smooth_values(&r, 15, -1, 1))};
    auto adj = std::make_shared<const VertexAdjacency>(
        VertexAdjacency{{1, 2}, {0, 2}, {0, 1, 3}, {2, 4}, {3}});
    std::vector<Vec3> gt_lap = random_points(&r, 5, 0.2);
    c.build = [adj, gt_lap](ad::Tape*, const std::vector<ad::Tensor>& in) {
      return loss_lap(in[0], adj, gt_lap);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(42);
    Case c;
    c.name = "loss_collision";
    // body is the z=0 plane sampled at four points, normals +z; the predicted
    // vertices sit clearly on both sides of the margin
    std::vector<double> pos;
    std::vector<Vec3> body, normals;
    for (int i = 0; i < 4; ++i) {
      body.push_back(Vec3{i * 0.5, 0.0, 0.0});
      normals.push_back(Vec3{0, 0, 1});
    }
    double depths[4] = {-0.2, 0.02, 0.3, -0.05};
    for (int i = 0; i < 4; ++i) {
      pos.push_back(i * 0.5 + r.uniform(-0.05, 0.05));
      pos.push_back(r.uniform(-0.05, 0.05));
      pos.push_back(depths[i] + r.uniform(-0.01, 0.01));
    }
    c.inputs = {make_input(4, 3, pos)};
    c.build = [body, normals](ad::Tape*, const std::vector<ad::Tensor>& in) {
      return loss_collision(in[0], body, normals, 0.1);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(43);
    Case c;
    c.name = "loss_consis";
    c.inputs = {make_input(3, 3, smooth_values(&r, 9, -1, 1)),
                make_input(3, 3, signed_values(&r, 9, 0.3, 1.0))};
    std::vector<Vec3> p_tgt = random_points(&r, 3);
    std::vector<Vec3> n_tgt(3);
    for (Vec3& n : n_tgt) n = normalized(random_points(&r, 1, 1.0)[0] + Vec3{0.5, 0.5, 0.5});
    c.build = [p_tgt, n_tgt](ad::Tape*, const std::vector<ad::Tensor>& in) {
      return loss_consis(in[0], in[1], p_tgt, n_tgt, 0.1);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(44);
    Case c;
    c.name = "loss_dir";
    c.inputs = {make_input(3, 3, smooth_values(&r, 9, 1.0, 2.0))};
    std::vector<Vec3> p_tgt = random_points(&r, 3, 0.3);
    std::vector<Vec3> n_tgt(3);
    for (Vec3& n : n_tgt) n = normalized(random_points(&r, 1, 1.0)[0] + Vec3{0.5, 0.5, 0.5});
    c.build = [p_tgt, n_tgt](ad::Tape*, const std::vector<ad::Tensor>& in) {
      return loss_dir(in[0], p_tgt, n_tgt);
    };
    cases.push_back(std::move(c));
  }
  {
    Rng r = rng_for(45);
    Case c;
    c.name = "loss_anchor_chamfer";
    c.inputs = {make_input(4, 3, smooth_values(&r, 12, -1, 1))};
    auto targets = std::make_shared<const std::vector<Vec3>>(random_points(&r, 6, 1.5));
    c.build = [targets](ad::Tape*, const std::vector<ad::Tensor>& in) {
      return loss_anchor_chamfer(in[0], targets);
    };
    cases.push_back(std::move(c));
  }
  return cases;
}

// Full pipeline on a miniature problem: every leaf the optimizer would touch
// is checked against finite differences of the total late-stage loss.
GradCheckRow check_end_to_end(uint64_t seed, bool corrupt) {
  Rng rng(seed ^ 0xe2e0ull);

  // Jitter kills the grid's symmetries; exact ties in nearest-point
  // correspondences would put the loss on a kink where finite differences
  // cannot agree with any one-sided gradient.
  Mesh tmpl = grid_mesh(3, 2, [](int ix, int iy) {
    return Vec3{ix * 0.1, 0.0, iy * 0.1};
  });
  for (Vec3& v : tmpl.vertices)
    v += Vec3{rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02)};
  AnchorSet anchors = build_anchor_set(tmpl, 2, 4, 2, seed);
  for (double& a : anchors.alpha) a += rng.uniform(-0.3, 0.3);
  for (double& w : anchors.weight_logits) w += rng.uniform(-0.3, 0.3);
  recompute_positions(&anchors, tmpl.vertices);
  AnchorStrategy strategy;
  strategy.tight.assign(2, 0);
  strategy.tight_body_index.assign(2, -1);

  ModelConfig mc;
  mc.pose_dim = 2;
  mc.hidden_size = 4;
  mc.gru_layers = 1;
  mc.mlp_hidden = 4;
  mc.n_anchors = 2;
  mc.n_vertices = tmpl.n_vertices();
  ModelParams model = ModelParams::init(mc, seed ^ 0x51ull);

  std::vector<Vec3> simplified = {tmpl.vertices[0], tmpl.vertices[2], tmpl.vertices[4]};

  std::vector<MotionFrame> frames(2);
  for (int f = 0; f < 2; ++f) {
    MotionFrame& fr = frames[f];
    fr.theta = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    fr.t = Vec3{rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
    fr.r_global = euler_to_rotation(
        Vec3{rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)});
    fr.j_root = Vec3{0.1, 0.0, 0.05};
    fr.gt = tmpl.vertices;
    for (Vec3& p : fr.gt)
      p += Vec3{rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03)};
    fr.has_body = true;
    for (int b = 0; b < 3; ++b) {
      fr.body_vertices.push_back(Vec3{b * 0.1, -0.3, 0.05});
      fr.body_normals.push_back(Vec3{0, 1, 0});
    }
  }

  ForwardShared shared = make_forward_shared(tmpl, anchors, simplified);
  VertexAdjacency adjacency = vertex_adjacency(tmpl);
  std::vector<FrameDerived> derived;
  for (const MotionFrame& f : frames) derived.push_back(derive_frame(tmpl, adjacency, f));

  LossWeights weights;
  std::vector<Vec3> anchor_frame_simplified = {frames[1].gt[0], frames[1].gt[2],
                                               frames[1].gt[4]};

  std::vector<const MotionFrame*> fptr = {&frames[0], &frames[1]};
  std::vector<const FrameDerived*> dptr = {&derived[0], &derived[1]};
  // Targets are constants of the graph, so they stay frozen across the
  // finite-difference probes.
  WindowTargets targets = compute_window_targets(anchors, fptr, dptr);

  auto eval = [&](std::vector<std::vector<double>>* grads) {
    ad::Tape tape;
    WindowForward fwd = build_window_forward(&tape, model, anchors, strategy, tmpl, fptr,
                                             dptr, targets, Stage::late, weights, shared,
                                             &frames[1], &anchor_frame_simplified, nullptr);
    double v = tape.scalar_val(fwd.loss);
    if (grads != nullptr) {
      tape.backward(fwd.loss);
      for (ad::Tensor leaf : fwd.leaves) grads->push_back(tape.grad(leaf));
    }
    return v;
  };

  std::vector<std::vector<double>*> leaves;
  for (const ParamRef& ref : model.param_refs()) leaves.push_back(ref.values);
  leaves.push_back(&anchors.alpha);
  leaves.push_back(&anchors.weight_logits);

  std::vector<std::vector<double>> analytic;
  eval(&analytic);
  if (corrupt) analytic[0][0] += 0.5;

  GradCheckRow row;
  row.name = "end_to_end";
  for (size_t i = 0; i < leaves.size(); ++i) {
    std::vector<double>& vec = *leaves[i];
    for (size_t e = 0; e < vec.size(); ++e) {
      double saved = vec[e];
      vec[e] = saved + kEps;
      double f_plus = eval(nullptr);
      vec[e] = saved - kEps;
      double f_minus = eval(nullptr);
      vec[e] = saved;
      double fd = (f_plus - f_minus) / (2.0 * kEps);
      row.max_rel_err = std::max(row.max_rel_err, rel_err(analytic[i][e], fd));
    }
  }
  row.ok = row.max_rel_err < kThreshold;
  return row;
}

}  // namespace

GradCheckReport run_gradcheck(uint64_t seed, const std::string& corrupt_op) {
  GradCheckReport report;
  report.threshold = kThreshold;

  std::set<std::string> covered;
  for (const Case& c : build_cases(seed)) {
    report.rows.push_back(check_case(c, corrupt_op == c.name));
    for (const std::string& op : c.covers) covered.insert(op);
  }
  report.rows.push_back(check_end_to_end(seed, corrupt_op == "end_to_end"));

  for (const std::string& op : ad::registered_ops())
    if (covered.find(op) == covered.end()) report.uncovered.push_back(op);

  report.all_ok = report.uncovered.empty();
  for (const GradCheckRow& row : report.rows) report.all_ok = report.all_ok && row.ok;
  return report;
}

}  // namespace anchorcloth
