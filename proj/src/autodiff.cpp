#include "anchorcloth/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace anchorcloth::ad {

namespace {

[[noreturn]] void op_fail(const char* op, const std::string& why) {
  throw std::runtime_error(std::string("autodiff op '") + op + "': " + why);
}

void check_same_shape(const char* op, const Tape* t, Tensor a, Tensor b) {
  if (t->rows(a) != t->rows(b) || t->cols(a) != t->cols(b))
    op_fail(op, "shape mismatch (" + std::to_string(t->rows(a)) + "x" + std::to_string(t->cols(a)) +
                    " vs " + std::to_string(t->rows(b)) + "x" + std::to_string(t->cols(b)) + ")");
}

void check_same_tape(const char* op, Tensor a, Tensor b) {
  if (a.tape != b.tape) op_fail(op, "operands live on different tapes");
}

}  // namespace

const std::vector<std::string>& registered_ops() {
  static const std::vector<std::string> ops = {
      "add",          "sub",          "mul",           "div",
      "neg",          "scale",        "add_scalar",    "square",
      "sqrt",         "exp",          "sin",           "cos",
      "tanh",         "sigmoid",      "relu",          "prelu",
      "concat_rows",  "concat_cols",  "slice_rows",    "reshape",
      "gather_rows",  "sum",          "mean",          "row_sum",
      "row_dot",      "norm_sq",      "matmul",        "softmax_rows",
      "rows_normalize", "cosine_similarity", "attention_gather",
      "graph_laplacian", "vertex_normals", "euler_rotmats",
      "compose_rot",  "compose_trans", "transform_points", "lbs",
      "chamfer",
  };
  return ops;
}

// ---------------------------------------------------------------- Tape

Tensor Tape::input(int rows, int cols, const std::vector<double>& values) {
  if (static_cast<int>(values.size()) != rows * cols)
    throw std::runtime_error("Tape::input: value count does not match shape");
  return input(rows, cols, values.data());
}

Tensor Tape::input(int rows, int cols, const double* values) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.op = "input";
  n.val.assign(values, values + static_cast<size_t>(rows) * cols);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::zeros(int rows, int cols) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.op = "input";
  n.val.assign(static_cast<size_t>(rows) * cols, 0.0);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::scalar(double v) { return input(1, 1, &v); }

Tensor Tape::points(const std::vector<Vec3>& pts) {
  std::vector<double> flat;
  flat.reserve(pts.size() * 3);
  for (const Vec3& p : pts) {
    flat.push_back(p.x);
    flat.push_back(p.y);
    flat.push_back(p.z);
  }
  return input(static_cast<int>(pts.size()), 3, flat);
}

int Tape::rows(Tensor t) const { return nodes_[t.id].rows; }
int Tape::cols(Tensor t) const { return nodes_[t.id].cols; }
int Tape::size(Tensor t) const { return nodes_[t.id].rows * nodes_[t.id].cols; }
const std::vector<double>& Tape::val(Tensor t) const { return nodes_[t.id].val; }

double Tape::scalar_val(Tensor t) const {
  if (size(t) != 1) throw std::runtime_error("scalar_val: tensor is not 1x1");
  return nodes_[t.id].val[0];
}

std::vector<Vec3> Tape::val_points(Tensor t) const {
  if (cols(t) != 3) throw std::runtime_error("val_points: tensor does not have 3 columns");
  const auto& v = nodes_[t.id].val;
  std::vector<Vec3> pts(rows(t));
  for (int i = 0; i < rows(t); ++i) pts[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  return pts;
}

std::vector<double> Tape::grad(Tensor t) const {
  const Node& n = nodes_[t.id];
  if (n.grad.empty()) return std::vector<double>(static_cast<size_t>(n.rows) * n.cols, 0.0);
  return n.grad;
}

double* Tape::grad_ptr(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.rows) * n.cols, 0.0);
  return n.grad.data();
}

Tensor Tape::make(int rows, int cols, const char* op, std::vector<int> parents, BackwardFn back) {
  if (consumed_) throw std::runtime_error("Tape: cannot record ops after backward()");
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.op = op;
  n.val.assign(static_cast<size_t>(rows) * cols, 0.0);
  n.parents = std::move(parents);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Tensor loss) {
  if (consumed_) throw std::runtime_error("Tape::backward: tape already consumed");
  if (loss.tape != this) throw std::runtime_error("Tape::backward: loss lives on another tape");
  if (size(loss) != 1) throw std::runtime_error("Tape::backward: loss must be a 1x1 tensor");
  consumed_ = true;
  grad_ptr(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.back) continue;
    n.back(*this, id);
  }
}

// ------------------------------------------------------- elementwise

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_ew(Tensor x, const char* op, Fwd fwd, Bwd bwd) {
  Tape& t = *x.tape;
  Tensor out = t.make(t.rows(x), t.cols(x), op, {x.id},
                      [xid = x.id, bwd](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        const auto& xv = tp.values(xid);
                        const auto& yv = tp.values(self);
                        double* gx = tp.grad_ptr(xid);
                        for (size_t i = 0; i < g.size(); ++i) gx[i] += bwd(xv[i], yv[i]) * g[i];
                      });
  const auto& xv = t.val(x);
  auto& ov = t.values(out.id);
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
  return out;
}

}  // namespace

Tensor add(Tensor a, Tensor b) {
  check_same_tape("add", a, b);
  Tape& t = *a.tape;
  check_same_shape("add", &t, a, b);
  Tensor out = t.make(t.rows(a), t.cols(a), "add", {a.id, b.id},
                      [aid = a.id, bid = b.id](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        double* ga = tp.grad_ptr(aid);
                        double* gb = tp.grad_ptr(bid);
                        for (size_t i = 0; i < g.size(); ++i) {
                          ga[i] += g[i];
                          gb[i] += g[i];
                        }
                      });
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  auto& ov = t.values(out.id);
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
  return out;
}

Tensor sub(Tensor a, Tensor b) {
  check_same_tape("sub", a, b);
  Tape& t = *a.tape;
  check_same_shape("sub", &t, a, b);
  Tensor out = t.make(t.rows(a), t.cols(a), "sub", {a.id, b.id},
                      [aid = a.id, bid = b.id](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        double* ga = tp.grad_ptr(aid);
                        double* gb = tp.grad_ptr(bid);
                        for (size_t i = 0; i < g.size(); ++i) {
                          ga[i] += g[i];
                          gb[i] -= g[i];
                        }
                      });
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  auto& ov = t.values(out.id);
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
  return out;
}

Tensor mul(Tensor a, Tensor b) {
  check_same_tape("mul", a, b);
  Tape& t = *a.tape;
  check_same_shape("mul", &t, a, b);
  Tensor out = t.make(t.rows(a), t.cols(a), "mul", {a.id, b.id},
                      [aid = a.id, bid = b.id](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        const auto& av = tp.values(aid);
                        const auto& bv = tp.values(bid);
                        double* ga = tp.grad_ptr(aid);
                        double* gb = tp.grad_ptr(bid);
                        for (size_t i = 0; i < g.size(); ++i) {
                          ga[i] += bv[i] * g[i];
                          gb[i] += av[i] * g[i];
                        }
                      });
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  auto& ov = t.values(out.id);
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
  return out;
}

Tensor div(Tensor a, Tensor b) {
  check_same_tape("div", a, b);
  Tape& t = *a.tape;
  check_same_shape("div", &t, a, b);
  Tensor out = t.make(t.rows(a), t.cols(a), "div", {a.id, b.id},
                      [aid = a.id, bid = b.id](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        const auto& av = tp.values(aid);
                        const auto& bv = tp.values(bid);
                        double* ga = tp.grad_ptr(aid);
                        double* gb = tp.grad_ptr(bid);
                        for (size_t i = 0; i < g.size(); ++i) {
                          ga[i] += g[i] / bv[i];
                          gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                        }
                      });
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  auto& ov = t.values(out.id);
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] / bv[i];
  return out;
}

Tensor neg(Tensor x) {
  return unary_ew(x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(Tensor x, double c) {
  Tape& t = *x.tape;
  Tensor out = t.make(t.rows(x), t.cols(x), "scale", {x.id},
                      [xid = x.id, c](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        double* gx = tp.grad_ptr(xid);
                        for (size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
                      });
  const auto& xv = t.val(x);
  auto& ov = t.values(out.id);
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = c * xv[i];
  return out;
}

Tensor add_scalar(Tensor x, double c) {
  Tape& t = *x.tape;
  Tensor out = t.make(t.rows(x), t.cols(x), "add_scalar", {x.id},
                      [xid = x.id](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        double* gx = tp.grad_ptr(xid);
                        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                      });
  const auto& xv = t.val(x);
  auto& ov = t.values(out.id);
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] + c;
  return out;
}

Tensor square(Tensor x) {
  return unary_ew(x, "square", [](double v) { return v * v; },
                  [](double v, double) { return 2.0 * v; });
}

Tensor sqrt_op(Tensor x) {
  return unary_ew(x, "sqrt", [](double v) { return std::sqrt(v); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor exp_op(Tensor x) {
  return unary_ew(x, "exp", [](double v) { return std::exp(v); },
                  [](double, double y) { return y; });
}

Tensor sin_op(Tensor x) {
  return unary_ew(x, "sin", [](double v) { return std::sin(v); },
                  [](double v, double) { return std::cos(v); });
}

Tensor cos_op(Tensor x) {
  return unary_ew(x, "cos", [](double v) { return std::cos(v); },
                  [](double v, double) { return -std::sin(v); });
}

Tensor tanh_op(Tensor x) {
  return unary_ew(x, "tanh", [](double v) { return std::tanh(v); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(Tensor x) {
  return unary_ew(x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(Tensor x) {
  return unary_ew(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                  [](double v, double) { return v >= 0.0 ? 1.0 : 0.0; });
}

Tensor prelu(Tensor x, Tensor slope) {
  check_same_tape("prelu", x, slope);
  Tape& t = *x.tape;
  if (t.size(slope) != 1) op_fail("prelu", "slope must be a 1x1 tensor");
  Tensor out = t.make(t.rows(x), t.cols(x), "prelu", {x.id, slope.id},
                      [xid = x.id, sid = slope.id](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        const auto& xv = tp.values(xid);
                        double a = tp.values(sid)[0];
                        double* gx = tp.grad_ptr(xid);
                        double* gs = tp.grad_ptr(sid);
                        for (size_t i = 0; i < g.size(); ++i) {
                          if (xv[i] >= 0.0) {
                            gx[i] += g[i];
                          } else {
                            gx[i] += a * g[i];
                            gs[0] += xv[i] * g[i];
                          }
                        }
                      });
  const auto& xv = t.val(x);
  double a = t.val(slope)[0];
  auto& ov = t.values(out.id);
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] >= 0.0 ? xv[i] : a * xv[i];
  return out;
}

// ------------------------------------------------------------- shape

Tensor concat_rows(Tensor a, Tensor b) {
  check_same_tape("concat_rows", a, b);
  Tape& t = *a.tape;
  if (t.cols(a) != t.cols(b)) op_fail("concat_rows", "column counts differ");
  int na = t.size(a);
  Tensor out = t.make(t.rows(a) + t.rows(b), t.cols(a), "concat_rows", {a.id, b.id},
                      [aid = a.id, bid = b.id, na](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        double* ga = tp.grad_ptr(aid);
                        double* gb = tp.grad_ptr(bid);
                        for (int i = 0; i < na; ++i) ga[i] += g[i];
                        for (size_t i = na; i < g.size(); ++i) gb[i - na] += g[i];
                      });
  auto& ov = t.values(out.id);
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  std::copy(av.begin(), av.end(), ov.begin());
  std::copy(bv.begin(), bv.end(), ov.begin() + na);
  return out;
}

Tensor concat_cols(Tensor a, Tensor b) {
  check_same_tape("concat_cols", a, b);
  Tape& t = *a.tape;
  if (t.rows(a) != t.rows(b)) op_fail("concat_cols", "row counts differ");
  int r = t.rows(a), ca = t.cols(a), cb = t.cols(b);
  Tensor out = t.make(r, ca + cb, "concat_cols", {a.id, b.id},
                      [aid = a.id, bid = b.id, r, ca, cb](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        double* ga = tp.grad_ptr(aid);
                        double* gb = tp.grad_ptr(bid);
                        for (int i = 0; i < r; ++i) {
                          for (int j = 0; j < ca; ++j) ga[i * ca + j] += g[i * (ca + cb) + j];
                          for (int j = 0; j < cb; ++j) gb[i * cb + j] += g[i * (ca + cb) + ca + j];
                        }
                      });
  auto& ov = t.values(out.id);
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  for (int i = 0; i < r; ++i) {
    std::copy(av.begin() + i * ca, av.begin() + (i + 1) * ca, ov.begin() + i * (ca + cb));
    std::copy(bv.begin() + i * cb, bv.begin() + (i + 1) * cb, ov.begin() + i * (ca + cb) + ca);
  }
  return out;
}

Tensor slice_rows(Tensor x, int row_begin, int row_end) {
  Tape& t = *x.tape;
  if (row_begin < 0 || row_end > t.rows(x) || row_begin >= row_end)
    op_fail("slice_rows", "row range [" + std::to_string(row_begin) + ", " +
                              std::to_string(row_end) + ") invalid for " +
                              std::to_string(t.rows(x)) + " rows");
  int c = t.cols(x);
  Tensor out = t.make(row_end - row_begin, c, "slice_rows", {x.id},
                      [xid = x.id, row_begin, c](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        double* gx = tp.grad_ptr(xid);
                        for (size_t i = 0; i < g.size(); ++i)
                          gx[static_cast<size_t>(row_begin) * c + i] += g[i];
                      });
  const auto& xv = t.val(x);
  auto& ov = t.values(out.id);
  std::copy(xv.begin() + static_cast<size_t>(row_begin) * c,
            xv.begin() + static_cast<size_t>(row_end) * c, ov.begin());
  return out;
}

Tensor reshape(Tensor x, int rows, int cols) {
  Tape& t = *x.tape;
  if (rows * cols != t.size(x)) op_fail("reshape", "element count changes");
  Tensor out = t.make(rows, cols, "reshape", {x.id},
                      [xid = x.id](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        double* gx = tp.grad_ptr(xid);
                        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                      });
  t.values(out.id) = t.val(x);
  return out;
}

Tensor gather_rows(Tensor x, std::shared_ptr<const std::vector<int>> indices) {
  Tape& t = *x.tape;
  int c = t.cols(x);
  for (int i : *indices)
    if (i < 0 || i >= t.rows(x)) op_fail("gather_rows", "index out of range");
  Tensor out = t.make(static_cast<int>(indices->size()), c, "gather_rows", {x.id},
                      [xid = x.id, indices, c](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        double* gx = tp.grad_ptr(xid);
                        for (size_t i = 0; i < indices->size(); ++i)
                          for (int j = 0; j < c; ++j)
                            gx[static_cast<size_t>((*indices)[i]) * c + j] += g[i * c + j];
                      });
  const auto& xv = t.val(x);
  auto& ov = t.values(out.id);
  for (size_t i = 0; i < indices->size(); ++i)
    std::copy(xv.begin() + static_cast<size_t>((*indices)[i]) * c,
              xv.begin() + (static_cast<size_t>((*indices)[i]) + 1) * c, ov.begin() + i * c);
  return out;
}

// -------------------------------------------------------- reductions

Tensor sum(Tensor x) {
  Tape& t = *x.tape;
  Tensor out = t.make(1, 1, "sum", {x.id},
                      [xid = x.id](Tape& tp, int self) {
                        double g = tp.grad_vec(self)[0];
                        double* gx = tp.grad_ptr(xid);
                        size_t n = tp.values(xid).size();
                        for (size_t i = 0; i < n; ++i) gx[i] += g;
                      });
  double s = 0;
  for (double v : t.val(x)) s += v;
  t.values(out.id)[0] = s;
  return out;
}

Tensor mean(Tensor x) {
  Tape& t = *x.tape;
  double inv = 1.0 / t.size(x);
  Tensor out = t.make(1, 1, "mean", {x.id},
                      [xid = x.id, inv](Tape& tp, int self) {
                        double g = tp.grad_vec(self)[0] * inv;
                        double* gx = tp.grad_ptr(xid);
                        size_t n = tp.values(xid).size();
                        for (size_t i = 0; i < n; ++i) gx[i] += g;
                      });
  double s = 0;
  for (double v : t.val(x)) s += v;
  t.values(out.id)[0] = s * inv;
  return out;
}

Tensor row_sum(Tensor x) {
  Tape& t = *x.tape;
  int r = t.rows(x), c = t.cols(x);
  Tensor out = t.make(r, 1, "row_sum", {x.id},
                      [xid = x.id, r, c](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        double* gx = tp.grad_ptr(xid);
                        for (int i = 0; i < r; ++i)
                          for (int j = 0; j < c; ++j) gx[i * c + j] += g[i];
                      });
  const auto& xv = t.val(x);
  auto& ov = t.values(out.id);
  for (int i = 0; i < r; ++i) {
    double s = 0;
    for (int j = 0; j < c; ++j) s += xv[i * c + j];
    ov[i] = s;
  }
  return out;
}

Tensor row_dot(Tensor a, Tensor b) {
  check_same_tape("row_dot", a, b);
  Tape& t = *a.tape;
  check_same_shape("row_dot", &t, a, b);
  int r = t.rows(a), c = t.cols(a);
  Tensor out = t.make(r, 1, "row_dot", {a.id, b.id},
                      [aid = a.id, bid = b.id, r, c](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        const auto& av = tp.values(aid);
                        const auto& bv = tp.values(bid);
                        double* ga = tp.grad_ptr(aid);
                        double* gb = tp.grad_ptr(bid);
                        for (int i = 0; i < r; ++i)
                          for (int j = 0; j < c; ++j) {
                            ga[i * c + j] += bv[i * c + j] * g[i];
                            gb[i * c + j] += av[i * c + j] * g[i];
                          }
                      });
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  auto& ov = t.values(out.id);
  for (int i = 0; i < r; ++i) {
    double s = 0;
    for (int j = 0; j < c; ++j) s += av[i * c + j] * bv[i * c + j];
    ov[i] = s;
  }
  return out;
}

Tensor norm_sq(Tensor x) {
  Tape& t = *x.tape;
  Tensor out = t.make(1, 1, "norm_sq", {x.id},
                      [xid = x.id](Tape& tp, int self) {
                        double g = tp.grad_vec(self)[0];
                        const auto& xv = tp.values(xid);
                        double* gx = tp.grad_ptr(xid);
                        for (size_t i = 0; i < xv.size(); ++i) gx[i] += 2.0 * xv[i] * g;
                      });
  double s = 0;
  for (double v : t.val(x)) s += v * v;
  t.values(out.id)[0] = s;
  return out;
}

// ---------------------------------------------------- linear algebra

Tensor matmul(Tensor a, Tensor b) {
  check_same_tape("matmul", a, b);
  Tape& t = *a.tape;
  int r = t.rows(a), k = t.cols(a), c = t.cols(b);
  if (t.rows(b) != k) op_fail("matmul", "inner dimensions differ");
  Tensor out = t.make(r, c, "matmul", {a.id, b.id},
                      [aid = a.id, bid = b.id, r, k, c](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        const auto& av = tp.values(aid);
                        const auto& bv = tp.values(bid);
                        double* ga = tp.grad_ptr(aid);
                        double* gb = tp.grad_ptr(bid);
                        // dA = G B^T, dB = A^T G
                        for (int i = 0; i < r; ++i)
                          for (int kk = 0; kk < k; ++kk) {
                            double s = 0;
                            for (int j = 0; j < c; ++j) s += g[i * c + j] * bv[kk * c + j];
                            ga[i * k + kk] += s;
                          }
                        for (int kk = 0; kk < k; ++kk)
                          for (int j = 0; j < c; ++j) {
                            double s = 0;
                            for (int i = 0; i < r; ++i) s += av[i * k + kk] * g[i * c + j];
                            gb[kk * c + j] += s;
                          }
                      });
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  auto& ov = t.values(out.id);
  for (int i = 0; i < r; ++i)
    for (int kk = 0; kk < k; ++kk) {
      double aik = av[i * k + kk];
      if (aik == 0.0) continue;
      for (int j = 0; j < c; ++j) ov[i * c + j] += aik * bv[kk * c + j];
    }
  return out;
}

Tensor softmax_rows(Tensor x) {
  Tape& t = *x.tape;
  int r = t.rows(x), c = t.cols(x);
  Tensor out = t.make(r, c, "softmax_rows", {x.id},
                      [xid = x.id, r, c](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        const auto& y = tp.values(self);
                        double* gx = tp.grad_ptr(xid);
                        for (int i = 0; i < r; ++i) {
                          double dot_gy = 0;
                          for (int j = 0; j < c; ++j) dot_gy += g[i * c + j] * y[i * c + j];
                          for (int j = 0; j < c; ++j)
                            gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot_gy);
                        }
                      });
  const auto& xv = t.val(x);
  auto& ov = t.values(out.id);
  for (int i = 0; i < r; ++i) {
    double mx = xv[i * c];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xv[i * c + j]);
    double denom = 0;
    for (int j = 0; j < c; ++j) {
      ov[i * c + j] = std::exp(xv[i * c + j] - mx);
      denom += ov[i * c + j];
    }
    for (int j = 0; j < c; ++j) ov[i * c + j] /= denom;
  }
  return out;
}

Tensor rows_normalize(Tensor x) {
  Tape& t = *x.tape;
  if (t.cols(x) != 3) op_fail("rows_normalize", "expects 3 columns");
  int r = t.rows(x);
  Tensor out = t.make(r, 3, "rows_normalize", {x.id},
                      [xid = x.id, r](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        const auto& xv = tp.values(xid);
                        const auto& y = tp.values(self);
                        double* gx = tp.grad_ptr(xid);
                        for (int i = 0; i < r; ++i) {
                          Vec3 u{xv[3 * i], xv[3 * i + 1], xv[3 * i + 2]};
                          double len = norm(u);
                          if (len < 1e-12) continue;  // fallback row: zero gradient
                          Vec3 n{y[3 * i], y[3 * i + 1], y[3 * i + 2]};
                          Vec3 gr{g[3 * i], g[3 * i + 1], g[3 * i + 2]};
                          Vec3 d = (gr - n * dot(gr, n)) / len;
                          gx[3 * i] += d.x;
                          gx[3 * i + 1] += d.y;
                          gx[3 * i + 2] += d.z;
                        }
                      });
  const auto& xv = t.val(x);
  auto& ov = t.values(out.id);
  for (int i = 0; i < r; ++i) {
    Vec3 u{xv[3 * i], xv[3 * i + 1], xv[3 * i + 2]};
    Vec3 n = normalized(u);
    ov[3 * i] = n.x;
    ov[3 * i + 1] = n.y;
    ov[3 * i + 2] = n.z;
  }
  return out;
}

Tensor cosine_similarity(Tensor a, Tensor b) {
  check_same_tape("cosine_similarity", a, b);
  Tape& t = *a.tape;
  check_same_shape("cosine_similarity", &t, a, b);
  int r = t.rows(a), c = t.cols(a);
  constexpr double kGuard = 1e-9;
  Tensor out = t.make(r, 1, "cosine_similarity", {a.id, b.id},
                      [aid = a.id, bid = b.id, r, c](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        const auto& av = tp.values(aid);
                        const auto& bv = tp.values(bid);
                        const auto& y = tp.values(self);
                        double* ga = tp.grad_ptr(aid);
                        double* gb = tp.grad_ptr(bid);
                        for (int i = 0; i < r; ++i) {
                          double na2 = 0, nb2 = 0;
                          for (int j = 0; j < c; ++j) {
                            na2 += av[i * c + j] * av[i * c + j];
                            nb2 += bv[i * c + j] * bv[i * c + j];
                          }
                          double na = std::sqrt(na2), nb = std::sqrt(nb2);
                          if (na < kGuard || nb < kGuard) continue;  // guarded row
                          double cosv = y[i];
                          for (int j = 0; j < c; ++j) {
                            double ai = av[i * c + j], bi = bv[i * c + j];
                            ga[i * c + j] += g[i] * (bi / (na * nb) - cosv * ai / na2);
                            gb[i * c + j] += g[i] * (ai / (na * nb) - cosv * bi / nb2);
                          }
                        }
                      });
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  auto& ov = t.values(out.id);
  for (int i = 0; i < r; ++i) {
    double d = 0, na2 = 0, nb2 = 0;
    for (int j = 0; j < c; ++j) {
      d += av[i * c + j] * bv[i * c + j];
      na2 += av[i * c + j] * av[i * c + j];
      nb2 += bv[i * c + j] * bv[i * c + j];
    }
    double na = std::sqrt(na2), nb = std::sqrt(nb2);
    ov[i] = (na < kGuard || nb < kGuard) ? 1.0 : d / (na * nb);
  }
  return out;
}

// ----------------------------------------------------- fused geometry

Tensor attention_gather(Tensor alpha, Tensor src,
                        std::shared_ptr<const std::vector<std::vector<int>>> idx) {
  check_same_tape("attention_gather", alpha, src);
  Tape& t = *alpha.tape;
  int n = t.rows(alpha), k = t.cols(alpha), c = t.cols(src);
  if (static_cast<int>(idx->size()) != n) op_fail("attention_gather", "index rows != alpha rows");
  for (const auto& row : *idx) {
    if (static_cast<int>(row.size()) != k) op_fail("attention_gather", "index row width != K");
    for (int i : row)
      if (i < 0 || i >= t.rows(src)) op_fail("attention_gather", "index out of range");
  }
  // Softmax weights are computed here and captured for the backward pass.
  auto weights = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * k);
  const auto& av = t.val(alpha);
  for (int i = 0; i < n; ++i) {
    double mx = av[i * k];
    for (int j = 1; j < k; ++j) mx = std::max(mx, av[i * k + j]);
    double denom = 0;
    for (int j = 0; j < k; ++j) {
      (*weights)[i * k + j] = std::exp(av[i * k + j] - mx);
      denom += (*weights)[i * k + j];
    }
    for (int j = 0; j < k; ++j) (*weights)[i * k + j] /= denom;
  }
  Tensor out = t.make(
      n, c, "attention_gather", {alpha.id, src.id},
      [aid = alpha.id, sid = src.id, idx, weights, n, k, c](Tape& tp, int self) {
        const auto& g = tp.grad_vec(self);
        const auto& sv = tp.values(sid);
        const auto& y = tp.values(self);
        double* ga = tp.grad_ptr(aid);
        double* gs = tp.grad_ptr(sid);
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < k; ++j) {
            int row = (*idx)[i][j];
            double w = (*weights)[i * k + j];
            double talpha = 0;
            for (int cc = 0; cc < c; ++cc) {
              gs[static_cast<size_t>(row) * c + cc] += w * g[i * c + cc];
              // d out_i / d alpha_ij = w_ij * (src_row - out_i)
              talpha += g[i * c + cc] * (sv[static_cast<size_t>(row) * c + cc] - y[i * c + cc]);
            }
            ga[i * k + j] += w * talpha;
          }
        }
      });
  const auto& sv = t.val(src);
  auto& ov = t.values(out.id);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      int row = (*idx)[i][j];
      double w = (*weights)[i * k + j];
      for (int cc = 0; cc < c; ++cc) ov[i * c + cc] += w * sv[static_cast<size_t>(row) * c + cc];
    }
  return out;
}

Tensor graph_laplacian_op(Tensor x, std::shared_ptr<const VertexAdjacency> adjacency) {
  Tape& t = *x.tape;
  int m = t.rows(x), c = t.cols(x);
  if (static_cast<int>(adjacency->size()) != m)
    op_fail("graph_laplacian", "adjacency size != rows");
  Tensor out = t.make(m, c, "graph_laplacian", {x.id},
                      [xid = x.id, adjacency, m, c](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        double* gx = tp.grad_ptr(xid);
                        // Transpose of the linear map: each row i spreads
                        // g_i/|N_i| to its neighbors and -g_i to itself.
                        for (int i = 0; i < m; ++i) {
                          const auto& nbrs = (*adjacency)[i];
                          if (nbrs.empty()) continue;
                          double inv = 1.0 / nbrs.size();
                          for (int cc = 0; cc < c; ++cc) gx[i * c + cc] -= g[i * c + cc];
                          for (int j : nbrs)
                            for (int cc = 0; cc < c; ++cc)
                              gx[static_cast<size_t>(j) * c + cc] += inv * g[i * c + cc];
                        }
                      });
  const auto& xv = t.val(x);
  auto& ov = t.values(out.id);
  for (int i = 0; i < m; ++i) {
    const auto& nbrs = (*adjacency)[i];
    if (nbrs.empty()) continue;
    double inv = 1.0 / nbrs.size();
    for (int cc = 0; cc < c; ++cc) {
      double s = 0;
      for (int j : nbrs) s += xv[static_cast<size_t>(j) * c + cc];
      ov[i * c + cc] = s * inv - xv[i * c + cc];
    }
  }
  return out;
}

Tensor vertex_normals_op(Tensor x,
                         std::shared_ptr<const std::vector<std::array<int, 3>>> faces) {
  Tape& t = *x.tape;
  if (t.cols(x) != 3) op_fail("vertex_normals", "expects 3 columns");
  int m = t.rows(x);
  for (const auto& f : *faces)
    for (int v : f)
      if (v < 0 || v >= m) op_fail("vertex_normals", "face index out of range");
  Tensor out = t.make(
      m, 3, "vertex_normals", {x.id},
      [xid = x.id, faces, m](Tape& tp, int self) {
        const auto& g = tp.grad_vec(self);
        const auto& xv = tp.values(xid);
        double* gx = tp.grad_ptr(xid);
        auto pos = [&](int i) { return Vec3{xv[3 * i], xv[3 * i + 1], xv[3 * i + 2]}; };
        // Recompute unnormalized accumulators, then pull gradients through
        // the per-vertex normalization and each face cross product.
        std::vector<Vec3> acc(m);
        for (const auto& f : *faces) {
          Vec3 cr = cross(pos(f[1]) - pos(f[0]), pos(f[2]) - pos(f[0]));
          for (int c = 0; c < 3; ++c) acc[f[c]] += cr;
        }
        std::vector<Vec3> gacc(m);  // dL/d(acc_i)
        for (int i = 0; i < m; ++i) {
          double len = norm(acc[i]);
          if (len < 1e-12) continue;  // fallback row: zero gradient
          Vec3 n = acc[i] / len;
          Vec3 gi{g[3 * i], g[3 * i + 1], g[3 * i + 2]};
          gacc[i] = (gi - n * dot(gi, n)) / len;
        }
        for (const auto& f : *faces) {
          Vec3 e1 = pos(f[1]) - pos(f[0]);
          Vec3 e2 = pos(f[2]) - pos(f[0]);
          Vec3 h = gacc[f[0]] + gacc[f[1]] + gacc[f[2]];  // dL/d(cross of this face)
          // d(e1 x e2) pulled back: dL/de1 = e2 x h, dL/de2 = h x e1
          Vec3 d1 = cross(e2, h);
          Vec3 d2 = cross(h, e1);
          Vec3 d0 = -(d1 + d2);
          for (int c = 0; c < 3; ++c) {
            gx[3 * f[0] + c] += d0[c];
            gx[3 * f[1] + c] += d1[c];
            gx[3 * f[2] + c] += d2[c];
          }
        }
      });
  const auto& xv = t.val(x);
  auto pos = [&](int i) { return Vec3{xv[3 * i], xv[3 * i + 1], xv[3 * i + 2]}; };
  std::vector<Vec3> acc(m);
  for (const auto& f : *faces) {
    Vec3 cr = cross(pos(f[1]) - pos(f[0]), pos(f[2]) - pos(f[0]));
    for (int c = 0; c < 3; ++c) acc[f[c]] += cr;
  }
  auto& ov = t.values(out.id);
  for (int i = 0; i < m; ++i) {
    Vec3 n = normalized(acc[i]);
    ov[3 * i] = n.x;
    ov[3 * i + 1] = n.y;
    ov[3 * i + 2] = n.z;
  }
  return out;
}

namespace {

void euler_axis_mats(double a, Mat3* rot, Mat3* drot, int axis) {
  double c = std::cos(a), s = std::sin(a);
  Mat3 r = Mat3::zero(), d = Mat3::zero();
  if (axis == 0) {
    r.m = {1, 0, 0, 0, c, -s, 0, s, c};
    d.m = {0, 0, 0, 0, -s, -c, 0, c, -s};
  } else if (axis == 1) {
    r.m = {c, 0, s, 0, 1, 0, -s, 0, c};
    d.m = {-s, 0, c, 0, 0, 0, -c, 0, -s};
  } else {
    r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
    d.m = {-s, -c, 0, c, -s, 0, 0, 0, 0};
  }
  *rot = r;
  if (drot) *drot = d;
}

}  // namespace

Tensor euler_rotmats(Tensor angles) {
  Tape& t = *angles.tape;
  if (t.cols(angles) != 3) op_fail("euler_rotmats", "expects 3 columns");
  int n = t.rows(angles);
  Tensor out = t.make(
      n, 9, "euler_rotmats", {angles.id},
      [aid = angles.id, n](Tape& tp, int self) {
        const auto& g = tp.grad_vec(self);
        const auto& av = tp.values(aid);
        double* ga = tp.grad_ptr(aid);
        for (int i = 0; i < n; ++i) {
          Mat3 rx, ry, rz, dx, dy, dz;
          euler_axis_mats(av[3 * i], &rx, &dx, 0);
          euler_axis_mats(av[3 * i + 1], &ry, &dy, 1);
          euler_axis_mats(av[3 * i + 2], &rz, &dz, 2);
          Mat3 d_ax = dx * (ry * rz);
          Mat3 d_ay = rx * (dy * rz);
          Mat3 d_az = rx * (ry * dz);
          double sx = 0, sy = 0, sz = 0;
          for (int e = 0; e < 9; ++e) {
            double ge = g[9 * i + e];
            sx += ge * d_ax.m[e];
            sy += ge * d_ay.m[e];
            sz += ge * d_az.m[e];
          }
          ga[3 * i] += sx;
          ga[3 * i + 1] += sy;
          ga[3 * i + 2] += sz;
        }
      });
  const auto& av = t.val(angles);
  auto& ov = t.values(out.id);
  for (int i = 0; i < n; ++i) {
    Mat3 rx, ry, rz;
    euler_axis_mats(av[3 * i], &rx, nullptr, 0);
    euler_axis_mats(av[3 * i + 1], &ry, nullptr, 1);
    euler_axis_mats(av[3 * i + 2], &rz, nullptr, 2);
    Mat3 r = rx * (ry * rz);
    for (int e = 0; e < 9; ++e) ov[9 * i + e] = r.m[e];
  }
  return out;
}

Tensor compose_rot(Tensor rot, std::shared_ptr<const std::vector<Mat3>> a) {
  Tape& t = *rot.tape;
  int n = t.rows(rot);
  if (t.cols(rot) != 9 || static_cast<int>(a->size()) != n)
    op_fail("compose_rot", "expects (N,9) rotations and N constants");
  Tensor out = t.make(n, 9, "compose_rot", {rot.id},
                      [rid = rot.id, a, n](Tape& tp, int self) {
                        const auto& g = tp.grad_vec(self);
                        double* gr = tp.grad_ptr(rid);
                        // out = A R  =>  dR = A^T G
                        for (int i = 0; i < n; ++i) {
                          Mat3 gm;
                          std::copy(g.begin() + 9 * i, g.begin() + 9 * i + 9, gm.m.begin());
                          Mat3 d = (*a)[i].transposed() * gm;
                          for (int e = 0; e < 9; ++e) gr[9 * i + e] += d.m[e];
                        }
                      });
  const auto& rv = t.val(rot);
  auto& ov = t.values(out.id);
  for (int i = 0; i < n; ++i) {
    Mat3 r;
    std::copy(rv.begin() + 9 * i, rv.begin() + 9 * i + 9, r.m.begin());
    Mat3 o = (*a)[i] * r;
    for (int e = 0; e < 9; ++e) ov[9 * i + e] = o.m[e];
  }
  return out;
}

Tensor compose_trans(Tensor rot, Tensor trans, std::shared_ptr<const std::vector<Mat3>> a,
                     std::shared_ptr<const std::vector<Vec3>> u,
                     std::shared_ptr<const std::vector<Vec3>> c) {
  check_same_tape("compose_trans", rot, trans);
  Tape& t = *rot.tape;
  int n = t.rows(rot);
  if (t.cols(rot) != 9 || t.rows(trans) != n || t.cols(trans) != 3 ||
      static_cast<int>(a->size()) != n || static_cast<int>(u->size()) != n ||
      static_cast<int>(c->size()) != n)
    op_fail("compose_trans", "shape mismatch");
  Tensor out = t.make(
      n, 3, "compose_trans", {rot.id, trans.id},
      [rid = rot.id, tid = trans.id, a, u, n](Tape& tp, int self) {
        const auto& g = tp.grad_vec(self);
        double* gr = tp.grad_ptr(rid);
        double* gt = tp.grad_ptr(tid);
        // out = A (T + R u) + c  =>  dT = A^T G,  dR = (A^T G) u^T
        for (int i = 0; i < n; ++i) {
          Vec3 gi{g[3 * i], g[3 * i + 1], g[3 * i + 2]};
          Vec3 atg = (*a)[i].transposed() * gi;
          gt[3 * i] += atg.x;
          gt[3 * i + 1] += atg.y;
          gt[3 * i + 2] += atg.z;
          const Vec3& ui = (*u)[i];
          for (int r = 0; r < 3; ++r)
            for (int cc = 0; cc < 3; ++cc) gr[9 * i + 3 * r + cc] += atg[r] * ui[cc];
        }
      });
  const auto& rv = t.val(rot);
  const auto& tv = t.val(trans);
  auto& ov = t.values(out.id);
  for (int i = 0; i < n; ++i) {
    Mat3 r;
    std::copy(rv.begin() + 9 * i, rv.begin() + 9 * i + 9, r.m.begin());
    Vec3 ti{tv[3 * i], tv[3 * i + 1], tv[3 * i + 2]};
    Vec3 o = (*a)[i] * (ti + r * (*u)[i]) + (*c)[i];
    ov[3 * i] = o.x;
    ov[3 * i + 1] = o.y;
    ov[3 * i + 2] = o.z;
  }
  return out;
}

Tensor transform_points(Tensor rot, Tensor trans, Tensor points) {
  check_same_tape("transform_points", rot, trans);
  check_same_tape("transform_points", rot, points);
  Tape& t = *rot.tape;
  int n = t.rows(rot);
  if (t.cols(rot) != 9 || t.rows(trans) != n || t.cols(trans) != 3 || t.rows(points) != n ||
      t.cols(points) != 3)
    op_fail("transform_points", "shape mismatch");
  Tensor out = t.make(
      n, 3, "transform_points", {rot.id, trans.id, points.id},
      [rid = rot.id, tid = trans.id, pid = points.id, n](Tape& tp, int self) {
        const auto& g = tp.grad_vec(self);
        const auto& rv = tp.values(rid);
        const auto& pv = tp.values(pid);
        double* gr = tp.grad_ptr(rid);
        double* gt = tp.grad_ptr(tid);
        double* gp = tp.grad_ptr(pid);
        for (int i = 0; i < n; ++i) {
          Mat3 r;
          std::copy(rv.begin() + 9 * i, rv.begin() + 9 * i + 9, r.m.begin());
          Vec3 p{pv[3 * i], pv[3 * i + 1], pv[3 * i + 2]};
          Vec3 gi{g[3 * i], g[3 * i + 1], g[3 * i + 2]};
          // dR = g p^T, dT = g, dp = R^T g
          for (int rr = 0; rr < 3; ++rr)
            for (int cc = 0; cc < 3; ++cc) gr[9 * i + 3 * rr + cc] += gi[rr] * p[cc];
          gt[3 * i] += gi.x;
          gt[3 * i + 1] += gi.y;
          gt[3 * i + 2] += gi.z;
          Vec3 rtg = r.transposed() * gi;
          gp[3 * i] += rtg.x;
          gp[3 * i + 1] += rtg.y;
          gp[3 * i + 2] += rtg.z;
        }
      });
  const auto& rv = t.val(rot);
  const auto& tv = t.val(trans);
  const auto& pv = t.val(points);
  auto& ov = t.values(out.id);
  for (int i = 0; i < n; ++i) {
    Mat3 r;
    std::copy(rv.begin() + 9 * i, rv.begin() + 9 * i + 9, r.m.begin());
    Vec3 p{pv[3 * i], pv[3 * i + 1], pv[3 * i + 2]};
    Vec3 o = r * p + Vec3{tv[3 * i], tv[3 * i + 1], tv[3 * i + 2]};
    ov[3 * i] = o.x;
    ov[3 * i + 1] = o.y;
    ov[3 * i + 2] = o.z;
  }
  return out;
}

Tensor lbs_op(Tensor rot, Tensor trans, Tensor base, Tensor weights,
              std::shared_ptr<const std::vector<std::vector<int>>> anchor_idx) {
  check_same_tape("lbs", rot, trans);
  check_same_tape("lbs", rot, base);
  check_same_tape("lbs", rot, weights);
  Tape& t = *rot.tape;
  int n = t.rows(rot), m = t.rows(base), p = t.cols(weights);
  if (t.cols(rot) != 9 || t.rows(trans) != n || t.cols(trans) != 3 || t.cols(base) != 3 ||
      t.rows(weights) != m || static_cast<int>(anchor_idx->size()) != m)
    op_fail("lbs", "shape mismatch");
  for (const auto& row : *anchor_idx) {
    if (static_cast<int>(row.size()) != p) op_fail("lbs", "anchor index row width mismatch");
    for (int i : row)
      if (i < 0 || i >= n) op_fail("lbs", "anchor index out of range");
  }
  Tensor out = t.make(
      m, 3, "lbs", {rot.id, trans.id, base.id, weights.id},
      [rid = rot.id, tid = trans.id, bid = base.id, wid = weights.id, anchor_idx, m,
       p](Tape& tp, int self) {
        const auto& g = tp.grad_vec(self);
        const auto& rv = tp.values(rid);
        const auto& tv = tp.values(tid);
        const auto& bv = tp.values(bid);
        const auto& wv = tp.values(wid);
        double* gr = tp.grad_ptr(rid);
        double* gt = tp.grad_ptr(tid);
        double* gb = tp.grad_ptr(bid);
        double* gw = tp.grad_ptr(wid);
        for (int i = 0; i < m; ++i) {
          Vec3 b{bv[3 * i], bv[3 * i + 1], bv[3 * i + 2]};
          Vec3 gi{g[3 * i], g[3 * i + 1], g[3 * i + 2]};
          Vec3 db;
          for (int j = 0; j < p; ++j) {
            int a = (*anchor_idx)[i][j];
            double w = wv[i * p + j];
            Mat3 r;
            std::copy(rv.begin() + 9 * a, rv.begin() + 9 * a + 9, r.m.begin());
            Vec3 ta{tv[3 * a], tv[3 * a + 1], tv[3 * a + 2]};
            // dw = g . (R b + T); dT_a += w g; dR_a += w g b^T; db += w R^T g
            gw[i * p + j] += dot(gi, r * b + ta);
            gt[3 * a] += w * gi.x;
            gt[3 * a + 1] += w * gi.y;
            gt[3 * a + 2] += w * gi.z;
            for (int rr = 0; rr < 3; ++rr)
              for (int cc = 0; cc < 3; ++cc) gr[9 * a + 3 * rr + cc] += w * gi[rr] * b[cc];
            db += r.transposed() * gi * w;
          }
          gb[3 * i] += db.x;
          gb[3 * i + 1] += db.y;
          gb[3 * i + 2] += db.z;
        }
      });
  const auto& rv = t.val(rot);
  const auto& tv = t.val(trans);
  const auto& bv = t.val(base);
  const auto& wv = t.val(weights);
  auto& ov = t.values(out.id);
  for (int i = 0; i < m; ++i) {
    Vec3 b{bv[3 * i], bv[3 * i + 1], bv[3 * i + 2]};
    Vec3 acc;
    for (int j = 0; j < p; ++j) {
      int a = (*anchor_idx)[i][j];
      double w = wv[i * p + j];
      Mat3 r;
      std::copy(rv.begin() + 9 * a, rv.begin() + 9 * a + 9, r.m.begin());
      Vec3 ta{tv[3 * a], tv[3 * a + 1], tv[3 * a + 2]};
      acc += (r * b + ta) * w;
    }
    ov[3 * i] = acc.x;
    ov[3 * i + 1] = acc.y;
    ov[3 * i + 2] = acc.z;
  }
  return out;
}

Tensor chamfer(Tensor p, std::shared_ptr<const std::vector<Vec3>> targets) {
  Tape& t = *p.tape;
  if (t.cols(p) != 3) op_fail("chamfer", "expects 3 columns");
  if (targets->empty()) op_fail("chamfer", "target set is empty");
  int n = t.rows(p);
  if (n == 0) op_fail("chamfer", "point set is empty");
  std::vector<Vec3> pts = t.val_points(p);
  // Argmins frozen at forward time; the loss is piecewise smooth in between.
  auto nearest_t = std::make_shared<std::vector<int>>(n);   // per point: nearest target
  auto nearest_p = std::make_shared<std::vector<int>>(targets->size());  // per target
  double loss = 0;
  for (int i = 0; i < n; ++i) {
    double best = 0;
    int arg = -1;
    for (size_t s = 0; s < targets->size(); ++s) {
      double d = dist2(pts[i], (*targets)[s]);
      if (arg < 0 || d < best) {
        best = d;
        arg = static_cast<int>(s);
      }
    }
    (*nearest_t)[i] = arg;
    loss += best;
  }
  for (size_t s = 0; s < targets->size(); ++s) {
    double best = 0;
    int arg = -1;
    for (int i = 0; i < n; ++i) {
      double d = dist2(pts[i], (*targets)[s]);
      if (arg < 0 || d < best) {
        best = d;
        arg = i;
      }
    }
    (*nearest_p)[s] = arg;
    loss += best;
  }
  Tensor out = t.make(1, 1, "chamfer", {p.id},
                      [pid = p.id, targets, nearest_t, nearest_p, n](Tape& tp, int self) {
                        double g = tp.grad_vec(self)[0];
                        const auto& pv = tp.values(pid);
                        double* gp = tp.grad_ptr(pid);
                        auto at = [&](int i) {
                          return Vec3{pv[3 * i], pv[3 * i + 1], pv[3 * i + 2]};
                        };
                        for (int i = 0; i < n; ++i) {
                          Vec3 d = (at(i) - (*targets)[(*nearest_t)[i]]) * (2.0 * g);
                          gp[3 * i] += d.x;
                          gp[3 * i + 1] += d.y;
                          gp[3 * i + 2] += d.z;
                        }
                        for (size_t s = 0; s < targets->size(); ++s) {
                          int i = (*nearest_p)[s];
                          Vec3 d = (at(i) - (*targets)[s]) * (2.0 * g);
                          gp[3 * i] += d.x;
                          gp[3 * i + 1] += d.y;
                          gp[3 * i + 2] += d.z;
                        }
                      });
  t.values(out.id)[0] = loss;
  return out;
}

// ------------------------------------------------------------- adam

void adam_step(const std::vector<std::vector<double>*>& params,
               const std::vector<const std::vector<double>*>& grads, AdamState* state,
               double lr, double beta1, double beta2, double eps) {
  if (params.size() != grads.size())
    throw std::runtime_error("adam_step: parameter/gradient list size mismatch");
  if (state->m.empty()) {
    state->m.resize(params.size());
    state->v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state->m[i].assign(params[i]->size(), 0.0);
      state->v[i].assign(params[i]->size(), 0.0);
    }
  }
  if (state->m.size() != params.size())
    throw std::runtime_error("adam_step: state does not match parameter list");
  state->step += 1;
  double bc1 = 1.0 - std::pow(beta1, state->step);
  double bc2 = 1.0 - std::pow(beta2, state->step);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const auto& g = *grads[i];
    if (p.size() != g.size()) throw std::runtime_error("adam_step: gradient shape mismatch");
    auto& m = state->m[i];
    auto& v = state->v[i];
    for (size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace anchorcloth::ad
