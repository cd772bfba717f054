#include "mutdet/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "mutdet/errors.hpp"
#include "mutdet/param_store.hpp"

namespace mutdet::nn {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_same_tape(Var a, Var b) {
  require(a.tape == b.tape, "ops cannot mix variables from different tapes");
}

bool any_needs_grad(std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (v.tape->needs_grad(v.id)) return true;
  return false;
}

}  // namespace

int Tape::add(Mat value, bool needs_grad, std::function<void(Tape&, int)> bw) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backward = std::move(bw);
  nodes_.push_back(std::move(n));
  return int(nodes_.size()) - 1;
}

Mat& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(int loss_id) {
  require(loss_id >= 0 && loss_id < size(), "backward: node id out of range");
  require(nodes_[loss_id].value.rows() == 1 && nodes_[loss_id].value.cols() == 1,
          "backward: loss node must be 1x1");
  grad(loss_id).setConstant(1.0);
  for (int id = loss_id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() > 0) n.backward(*this, id);
  }
}

Var constant(Tape& t, Mat v) { return {&t, t.add(std::move(v), false, nullptr)}; }

Var input(Tape& t, Mat v) { return {&t, t.add(std::move(v), true, nullptr)}; }

Var param(Tape& t, ParamStore& store, const std::string& name) {
  Mat v = store.value(name);
  ParamStore* sp = &store;
  int id = t.add(std::move(v), true, [sp, name](Tape& tp, int self) {
    sp->grad(name) += tp.grad(self);
  });
  return {&t, id};
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Mat c = a.val() * b.val();
  Tape& t = *a.tape;
  if (!any_needs_grad({a, b})) return constant(t, std::move(c));
  int ai = a.id, bi = b.id;
  int id = t.add(std::move(c), true, [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    if (tp.needs_grad(ai)) tp.grad(ai).noalias() += g * tp.value(bi).transpose();
    if (tp.needs_grad(bi)) tp.grad(bi).noalias() += tp.value(ai).transpose() * g;
  });
  return {&t, id};
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Mat c = a.val() * b.val().transpose();
  Tape& t = *a.tape;
  if (!any_needs_grad({a, b})) return constant(t, std::move(c));
  int ai = a.id, bi = b.id;
  int id = t.add(std::move(c), true, [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    if (tp.needs_grad(ai)) tp.grad(ai).noalias() += g * tp.value(bi);
    if (tp.needs_grad(bi)) tp.grad(bi).noalias() += g.transpose() * tp.value(ai);
  });
  return {&t, id};
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Mat c = a.val() + b.val();
  Tape& t = *a.tape;
  if (!any_needs_grad({a, b})) return constant(t, std::move(c));
  int ai = a.id, bi = b.id;
  int id = t.add(std::move(c), true, [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    if (tp.needs_grad(ai)) tp.grad(ai) += g;
    if (tp.needs_grad(bi)) tp.grad(bi) += g;
  });
  return {&t, id};
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Mat c = a.val() - b.val();
  Tape& t = *a.tape;
  if (!any_needs_grad({a, b})) return constant(t, std::move(c));
  int ai = a.id, bi = b.id;
  int id = t.add(std::move(c), true, [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    if (tp.needs_grad(ai)) tp.grad(ai) += g;
    if (tp.needs_grad(bi)) tp.grad(bi) -= g;
  });
  return {&t, id};
}

Var scale(Var a, double s) {
  Mat c = a.val() * s;
  Tape& t = *a.tape;
  if (!t.needs_grad(a.id)) return constant(t, std::move(c));
  int ai = a.id;
  int id = t.add(std::move(c), true, [ai, s](Tape& tp, int self) {
    tp.grad(ai) += tp.grad(self) * s;
  });
  return {&t, id};
}

Var add_rowvec(Var x, Var b) {
  require_same_tape(x, b);
  require(b.rows() == 1 && b.cols() == x.cols(), "add_rowvec: bias must be 1 x cols(x)");
  Mat c = x.val().rowwise() + b.val().row(0);
  Tape& t = *x.tape;
  if (!any_needs_grad({x, b})) return constant(t, std::move(c));
  int xi = x.id, bi = b.id;
  int id = t.add(std::move(c), true, [xi, bi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    if (tp.needs_grad(xi)) tp.grad(xi) += g;
    if (tp.needs_grad(bi)) tp.grad(bi) += g.colwise().sum();
  });
  return {&t, id};
}

Var relu(Var x) {
  Mat c = x.val().cwiseMax(0.0);
  Tape& t = *x.tape;
  if (!t.needs_grad(x.id)) return constant(t, std::move(c));
  int xi = x.id;
  int id = t.add(std::move(c), true, [xi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Mat mask = (tp.value(xi).array() > 0.0).cast<double>();
    tp.grad(xi).array() += g.array() * mask.array();
  });
  return {&t, id};
}

Var sigmoid(Var x) {
  Mat c = (1.0 / (1.0 + (-x.val().array()).exp())).matrix();
  Tape& t = *x.tape;
  if (!t.needs_grad(x.id)) return constant(t, std::move(c));
  int xi = x.id;
  int id = t.add(std::move(c), true, [xi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    const Mat& y = tp.value(self);
    tp.grad(xi).array() += g.array() * y.array() * (1.0 - y.array());
  });
  return {&t, id};
}

Var softmax_rows(Var x) {
  Mat c = x.val();
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    Eigen::ArrayXd row = c.row(i).array();
    row -= row.maxCoeff();
    row = row.exp();
    c.row(i) = (row / row.sum()).matrix();
  }
  Tape& t = *x.tape;
  if (!t.needs_grad(x.id)) return constant(t, std::move(c));
  int xi = x.id;
  int id = t.add(std::move(c), true, [xi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    const Mat& y = tp.value(self);
    Eigen::VectorXd rowdot = (g.array() * y.array()).rowwise().sum();
    Mat dx = y.array() * (g.array().colwise() - rowdot.array());
    tp.grad(xi) += dx;
  });
  return {&t, id};
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  require(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm: gain must be 1 x cols(x)");
  require(bias.rows() == 1 && bias.cols() == x.cols(), "layer_norm: bias must be 1 x cols(x)");
  const Mat& xv = x.val();
  const Eigen::Index m = xv.rows(), d = xv.cols();
  Mat xhat(m, d);
  Eigen::VectorXd inv_std(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double mu = xv.row(i).mean();
    double var = (xv.row(i).array() - mu).square().mean();
    double s = std::sqrt(var + eps);
    inv_std(i) = 1.0 / s;
    xhat.row(i) = (xv.row(i).array() - mu) / s;
  }
  Mat y = (xhat.array().rowwise() * gain.val().row(0).array()).rowwise() +
          bias.val().row(0).array();
  Tape& t = *x.tape;
  if (!any_needs_grad({x, gain, bias})) return constant(t, std::move(y));
  int xi = x.id, gi = gain.id, bi = bias.id;
  int id = t.add(std::move(y), true, [xi, gi, bi, xhat, inv_std](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    const Eigen::Index d = g.cols();
    if (tp.needs_grad(gi)) tp.grad(gi) += (g.array() * xhat.array()).colwise().sum().matrix();
    if (tp.needs_grad(bi)) tp.grad(bi) += g.colwise().sum();
    if (!tp.needs_grad(xi)) return;
    Mat dxhat = g.array().rowwise() * tp.value(gi).row(0).array();
    Eigen::VectorXd m1 = dxhat.rowwise().mean();
    Eigen::VectorXd m2 = (dxhat.array() * xhat.array()).rowwise().sum() / double(d);
    Mat dx = (dxhat.array().colwise() - m1.array()) - (xhat.array().colwise() * m2.array());
    tp.grad(xi) += (dx.array().colwise() * inv_std.array()).matrix();
  });
  return {&t, id};
}

Var slice_cols(Var x, int c0, int n) {
  require(c0 >= 0 && n > 0 && c0 + n <= x.cols(), "slice_cols: range out of bounds");
  Mat c = x.val().middleCols(c0, n);
  Tape& t = *x.tape;
  if (!t.needs_grad(x.id)) return constant(t, std::move(c));
  int xi = x.id;
  int id = t.add(std::move(c), true, [xi, c0, n](Tape& tp, int self) {
    tp.grad(xi).middleCols(c0, n) += tp.grad(self);
  });
  return {&t, id};
}

Var concat_cols(const std::vector<Var>& xs) {
  require(!xs.empty(), "concat_cols: empty input");
  Tape& t = *xs.front().tape;
  Eigen::Index rows = xs.front().rows(), total = 0;
  bool ng = false;
  for (Var v : xs) {
    require_same_tape(xs.front(), v);
    require(v.rows() == rows, "concat_cols: row counts differ");
    total += v.cols();
    ng = ng || t.needs_grad(v.id);
  }
  Mat c(rows, total);
  Eigen::Index off = 0;
  std::vector<int> ids;
  std::vector<int> widths;
  for (Var v : xs) {
    c.middleCols(off, v.cols()) = v.val();
    ids.push_back(v.id);
    widths.push_back(int(v.cols()));
    off += v.cols();
  }
  if (!ng) return constant(t, std::move(c));
  int id = t.add(std::move(c), true, [ids, widths](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.needs_grad(ids[k])) tp.grad(ids[k]) += g.middleCols(off, widths[k]);
      off += widths[k];
    }
  });
  return {&t, id};
}

Var concat_rows(const std::vector<Var>& xs) {
  require(!xs.empty(), "concat_rows: empty input");
  Tape& t = *xs.front().tape;
  Eigen::Index cols = xs.front().cols(), total = 0;
  bool ng = false;
  for (Var v : xs) {
    require_same_tape(xs.front(), v);
    require(v.cols() == cols, "concat_rows: column counts differ");
    total += v.rows();
    ng = ng || t.needs_grad(v.id);
  }
  Mat c(total, cols);
  Eigen::Index off = 0;
  std::vector<int> ids;
  std::vector<int> heights;
  for (Var v : xs) {
    c.middleRows(off, v.rows()) = v.val();
    ids.push_back(v.id);
    heights.push_back(int(v.rows()));
    off += v.rows();
  }
  if (!ng) return constant(t, std::move(c));
  int id = t.add(std::move(c), true, [ids, heights](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.needs_grad(ids[k])) tp.grad(ids[k]) += g.middleRows(off, heights[k]);
      off += heights[k];
    }
  });
  return {&t, id};
}

Var gather_rows(Var x, std::vector<int> idx) {
  for (int r : idx) require(r >= 0 && r < x.rows(), "gather_rows: index out of bounds");
  Mat c(Eigen::Index(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) c.row(Eigen::Index(i)) = x.val().row(idx[i]);
  Tape& t = *x.tape;
  if (!t.needs_grad(x.id)) return constant(t, std::move(c));
  int xi = x.id;
  int id = t.add(std::move(c), true, [xi, idx](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Mat& gx = tp.grad(xi);
    for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += g.row(Eigen::Index(i));
  });
  return {&t, id};
}

Var l2normalize_rows(Var x) {
  const Mat& xv = x.val();
  Eigen::VectorXd norms = xv.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i)
    if (!(norms(i) > 0.0))
      throw NumericalError("l2normalize_rows: zero-norm row " + std::to_string(i));
  Mat c = xv.array().colwise() / norms.array();
  Tape& t = *x.tape;
  if (!t.needs_grad(x.id)) return constant(t, std::move(c));
  int xi = x.id;
  int id = t.add(std::move(c), true, [xi, norms](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    const Mat& y = tp.value(self);
    Eigen::VectorXd dots = (g.array() * y.array()).rowwise().sum();
    Mat dx = (g.array() - (y.array().colwise() * dots.array())).colwise() *
             norms.array().inverse();
    tp.grad(xi) += dx;
  });
  return {&t, id};
}

Var ew_mul(Var a, Var b) {
  require_same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "ew_mul: shape mismatch");
  Mat c = a.val().cwiseProduct(b.val());
  Tape& t = *a.tape;
  if (!any_needs_grad({a, b})) return constant(t, std::move(c));
  int ai = a.id, bi = b.id;
  int id = t.add(std::move(c), true, [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    if (tp.needs_grad(ai)) tp.grad(ai) += g.cwiseProduct(tp.value(bi));
    if (tp.needs_grad(bi)) tp.grad(bi) += g.cwiseProduct(tp.value(ai));
  });
  return {&t, id};
}

Var ew_div(Var a, Var b) {
  require_same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "ew_div: shape mismatch");
  Mat c = a.val().cwiseQuotient(b.val());
  Tape& t = *a.tape;
  if (!any_needs_grad({a, b})) return constant(t, std::move(c));
  int ai = a.id, bi = b.id;
  int id = t.add(std::move(c), true, [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    const Mat& bv = tp.value(bi);
    const Mat& y = tp.value(self);
    if (tp.needs_grad(ai)) tp.grad(ai) += g.cwiseQuotient(bv);
    if (tp.needs_grad(bi)) tp.grad(bi) -= g.cwiseProduct(y).cwiseQuotient(bv);
  });
  return {&t, id};
}

Var ew_min(Var a, Var b) {
  require_same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "ew_min: shape mismatch");
  Mat c = a.val().cwiseMin(b.val());
  Tape& t = *a.tape;
  if (!any_needs_grad({a, b})) return constant(t, std::move(c));
  int ai = a.id, bi = b.id;
  int id = t.add(std::move(c), true, [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Mat mask = (tp.value(ai).array() <= tp.value(bi).array()).cast<double>();
    if (tp.needs_grad(ai)) tp.grad(ai).array() += g.array() * mask.array();
    if (tp.needs_grad(bi)) tp.grad(bi).array() += g.array() * (1.0 - mask.array());
  });
  return {&t, id};
}

Var ew_max(Var a, Var b) {
  require_same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "ew_max: shape mismatch");
  Mat c = a.val().cwiseMax(b.val());
  Tape& t = *a.tape;
  if (!any_needs_grad({a, b})) return constant(t, std::move(c));
  int ai = a.id, bi = b.id;
  int id = t.add(std::move(c), true, [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Mat mask = (tp.value(ai).array() >= tp.value(bi).array()).cast<double>();
    if (tp.needs_grad(ai)) tp.grad(ai).array() += g.array() * mask.array();
    if (tp.needs_grad(bi)) tp.grad(bi).array() += g.array() * (1.0 - mask.array());
  });
  return {&t, id};
}

Var ew_abs(Var a) {
  Mat c = a.val().cwiseAbs();
  Tape& t = *a.tape;
  if (!t.needs_grad(a.id)) return constant(t, std::move(c));
  int ai = a.id;
  int id = t.add(std::move(c), true, [ai](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Mat sign = tp.value(ai).array().sign();
    tp.grad(ai).array() += g.array() * sign.array();
  });
  return {&t, id};
}

Var sum_all(Var x) {
  Mat c(1, 1);
  c(0, 0) = x.val().sum();
  Tape& t = *x.tape;
  if (!t.needs_grad(x.id)) return constant(t, std::move(c));
  int xi = x.id;
  int id = t.add(std::move(c), true, [xi](Tape& tp, int self) {
    tp.grad(xi).array() += tp.grad(self)(0, 0);
  });
  return {&t, id};
}

Var detach(Var x) { return constant(*x.tape, x.val()); }

Var linear(Var x, const LinearParams& p) {
  require(x.cols() == p.W.cols(), "linear: input width does not match weight");
  return add_rowvec(matmul_nt(x, p.W), p.b);
}

Var multi_head_attention(Var queries, Var keys_values, const AttentionParams& p, int n_heads) {
  require_same_tape(queries, keys_values);
  const int d = int(p.q.W.rows());
  if (n_heads < 1 || d % n_heads != 0)
    throw ConfigError("attention width " + std::to_string(d) +
                      " not divisible by n_heads " + std::to_string(n_heads));
  Var Q = linear(queries, p.q);
  Var K = linear(keys_values, p.k);
  Var V = linear(keys_values, p.v);
  const int dh = d / n_heads;
  const double sc = 1.0 / std::sqrt(double(dh));
  std::vector<Var> heads;
  heads.reserve(std::size_t(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Var Qh = slice_cols(Q, h * dh, dh);
    Var Kh = slice_cols(K, h * dh, dh);
    Var Vh = slice_cols(V, h * dh, dh);
    Var A = softmax_rows(scale(matmul_nt(Qh, Kh), sc));
    heads.push_back(matmul(A, Vh));
  }
  return linear(concat_cols(heads), p.out);
}

Var mlp(Var x, const MlpParams& p) { return linear(relu(linear(x, p.fc1)), p.fc2); }

}  // namespace mutdet::nn
