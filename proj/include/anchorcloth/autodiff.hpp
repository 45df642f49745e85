#pragma once

// Define-by-run reverse-mode automatic differentiation on a tape of dense
// 2-D double tensors (scalars are 1x1, vectors are n x 1, point sets n x 3).
// Ops record a backward closure at creation; Tape::backward walks the tape in
// reverse once and accumulates gradients into every contributing node.
//
// Besides elementwise/matrix primitives there are fused geometry ops (LBS,
// Euler-angle rotations, rigid composition, vertex normals, graph Laplacian,
// softmax-attention gathers, Chamfer distance) whose hand-derived backwards
// are covered by the same finite-difference harness as everything else; see
// registered_ops() and gradcheck.hpp.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "anchorcloth/core.hpp"
#include "anchorcloth/geometry.hpp"

namespace anchorcloth::ad {

class Tape;

struct Tensor {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

using BackwardFn = std::function<void(Tape&, int)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf creation. Values are copied in; read gradients back via grad().
  Tensor input(int rows, int cols, const std::vector<double>& values);
  Tensor input(int rows, int cols, const double* values);
  Tensor zeros(int rows, int cols);
  Tensor scalar(double v);
  Tensor points(const std::vector<Vec3>& pts);  // (n, 3)

  int rows(Tensor t) const;
  int cols(Tensor t) const;
  int size(Tensor t) const;
  const std::vector<double>& val(Tensor t) const;
  double scalar_val(Tensor t) const;
  std::vector<Vec3> val_points(Tensor t) const;
  // Gradient accumulated into t by the last backward(); zeros if none reached it.
  std::vector<double> grad(Tensor t) const;

  // Seeds d(loss)/d(loss) = 1 and runs every recorded backward in reverse
  // creation order. `loss` must be 1x1. A tape can be consumed only once.
  void backward(Tensor loss);
  bool consumed() const { return consumed_; }
  int n_nodes() const { return static_cast<int>(nodes_.size()); }

  // Plumbing for op implementations.
  Tensor make(int rows, int cols, const char* op, std::vector<int> parents, BackwardFn back);
  std::vector<double>& values(int id) { return nodes_[id].val; }
  const std::vector<double>& values(int id) const { return nodes_[id].val; }
  double* grad_ptr(int id);           // allocates zeros on first touch
  bool grad_touched(int id) const { return !nodes_[id].grad.empty(); }
  const std::vector<double>& grad_vec(int id) const { return nodes_[id].grad; }

 private:
  struct Node {
    int rows = 0, cols = 0;
    const char* op = "";
    std::vector<double> val;
    std::vector<double> grad;
    std::vector<int> parents;
    BackwardFn back;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Every op name the tape can record, in a fixed order. The gradient-check
// harness must cover each of these.
const std::vector<std::string>& registered_ops();

// ---- elementwise / scalar ----
Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor div(Tensor a, Tensor b);
Tensor neg(Tensor x);
Tensor scale(Tensor x, double c);
Tensor add_scalar(Tensor x, double c);
Tensor square(Tensor x);
Tensor sqrt_op(Tensor x);  // requires strictly positive entries
Tensor exp_op(Tensor x);
Tensor sin_op(Tensor x);
Tensor cos_op(Tensor x);
Tensor tanh_op(Tensor x);
Tensor sigmoid(Tensor x);
Tensor relu(Tensor x);            // slope at exactly 0 is 1
Tensor prelu(Tensor x, Tensor slope);  // slope is 1x1; slope at 0 is 1

// ---- shape ----
Tensor concat_rows(Tensor a, Tensor b);
Tensor concat_cols(Tensor a, Tensor b);
Tensor slice_rows(Tensor x, int row_begin, int row_end);
Tensor reshape(Tensor x, int rows, int cols);
Tensor gather_rows(Tensor x, std::shared_ptr<const std::vector<int>> indices);

// ---- reductions ----
Tensor sum(Tensor x);
Tensor mean(Tensor x);
Tensor row_sum(Tensor x);             // (r, c) -> (r, 1)
Tensor row_dot(Tensor a, Tensor b);   // same shape -> (r, 1)
Tensor norm_sq(Tensor x);             // sum of squares -> 1x1

// ---- linear algebra / rows ----
Tensor matmul(Tensor a, Tensor b);
Tensor softmax_rows(Tensor x);
// Unit rows; rows shorter than 1e-12 become (0,0,1) with zero gradient.
Tensor rows_normalize(Tensor x);  // (r, 3)
// Per-row cosine of the angle between a and b; rows where either side is
// shorter than 1e-9 yield 1 with zero gradient.
Tensor cosine_similarity(Tensor a, Tensor b);  // -> (r, 1)

// ---- fused geometry ----
// out[n] = sum_k softmax(alpha[n])_k * src[idx[n][k]]; gradients flow to both
// alpha and src. idx entries index rows of src.
Tensor attention_gather(Tensor alpha, Tensor src,
                        std::shared_ptr<const std::vector<std::vector<int>>> idx);
Tensor graph_laplacian_op(Tensor x, std::shared_ptr<const VertexAdjacency> adjacency);
// Area-weighted vertex normals of the mesh with positions x (same fallback
// behavior as geometry::vertex_normals_at; fallback rows get zero gradient).
Tensor vertex_normals_op(Tensor x,
                         std::shared_ptr<const std::vector<std::array<int, 3>>> faces);
// (N,3) angles -> (N,9) row-major rotations, R = Rx(ax) * Ry(ay) * Rz(az).
Tensor euler_rotmats(Tensor angles);
// out[n] = A[n] * R[n] with constant A.
Tensor compose_rot(Tensor rot, std::shared_ptr<const std::vector<Mat3>> a);
// out[n] = A[n] * (T[n] + R[n] * u[n]) + c[n] with constant A, u, c.
Tensor compose_trans(Tensor rot, Tensor trans, std::shared_ptr<const std::vector<Mat3>> a,
                     std::shared_ptr<const std::vector<Vec3>> u,
                     std::shared_ptr<const std::vector<Vec3>> c);
// out[n] = R[n] * p[n] + T[n].
Tensor transform_points(Tensor rot, Tensor trans, Tensor points);
// out[m] = sum_j w[m][j] * (R[idx[m][j]] * base[m] + T[idx[m][j]]).
Tensor lbs_op(Tensor rot, Tensor trans, Tensor base, Tensor weights,
              std::shared_ptr<const std::vector<std::vector<int>>> anchor_idx);
// Symmetric sum-of-squared-nearest-distances between rows of p and the
// constant target set (sum convention in both directions).
Tensor chamfer(Tensor p, std::shared_ptr<const std::vector<Vec3>> targets);

// ---- optimizer (value-level, not taped) ----
struct AdamState {
  std::vector<std::vector<double>> m, v;  // per-parameter first/second moments
  int step = 0;                           // t in the bias correction
};

// One Adam update over a parameter list; grads must align with params.
// Initializes state on first use.
void adam_step(const std::vector<std::vector<double>*>& params,
               const std::vector<const std::vector<double>*>& grads, AdamState* state,
               double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

}  // namespace anchorcloth::ad
