#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace mutdet::nn {

// All training-path arithmetic is double precision; tensors are dense
// row-major so checkpoints can serialize them without reshaping.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ParamStore;

/// Reverse-mode tape. One Tape lives for one forward/backward pass; Var is
/// a cheap handle into it. Ops append nodes; backward() sweeps the nodes in
/// reverse creation order, so creation order is already a topological order.
class Tape {
public:
  struct Node {
    Mat value;
    Mat grad;  // empty until touched; shaped like value afterwards
    std::function<void(Tape&, int)> backward;
    bool needs_grad = false;
  };

  int add(Mat value, bool needs_grad, std::function<void(Tape&, int)> bw);

  const Mat& value(int id) const { return nodes_[id].value; }
  Mat& grad(int id);            // allocates zeros on first access
  bool has_grad(int id) const { return nodes_[id].grad.size() > 0; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  int size() const { return int(nodes_.size()); }

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 loss node and runs the reverse
  /// sweep. Parameter leaves flush their gradients into their ParamStore.
  void backward(int loss_id);

private:
  std::vector<Node> nodes_;
};

struct Var {
  Tape* tape = nullptr;
  int id = -1;
  const Mat& val() const { return tape->value(id); }
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
};

// --- graph entry points ---------------------------------------------------

Var constant(Tape& t, Mat v);             // no gradient tracking
Var input(Tape& t, Mat v);                // gradient readable after backward
Var param(Tape& t, ParamStore& store, const std::string& name);

// --- core ops ---------------------------------------------------------------

Var matmul(Var a, Var b);                 // (m x k)(k x n)
Var matmul_nt(Var a, Var b);              // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var add_rowvec(Var x, Var b);             // b is 1 x d, broadcast over rows
Var relu(Var x);
Var sigmoid(Var x);
Var softmax_rows(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var slice_cols(Var x, int c0, int n);
Var concat_cols(const std::vector<Var>& xs);
Var concat_rows(const std::vector<Var>& xs);
Var gather_rows(Var x, std::vector<int> idx);
Var l2normalize_rows(Var x);
Var ew_mul(Var a, Var b);
Var ew_div(Var a, Var b);
Var ew_min(Var a, Var b);
Var ew_max(Var a, Var b);
Var ew_abs(Var a);
Var sum_all(Var x);                       // 1x1
Var detach(Var x);                        // value copy, gradient barrier

// --- composite nn_core operations -------------------------------------------

struct LinearParams {
  Var W;  // out x in
  Var b;  // 1 x out
};

/// Row-wise affine map x W^T + b.
Var linear(Var x, const LinearParams& p);

struct AttentionParams {
  LinearParams q, k, v, out;
};

/// Scaled dot-product attention: per-head softmax(Q K^T / sqrt(d_head)) V,
/// heads concatenated, output projection applied. Self-attention is the
/// queries == keys_values special case.
Var multi_head_attention(Var queries, Var keys_values, const AttentionParams& p, int n_heads);

struct MlpParams {
  LinearParams fc1, fc2;
};

/// linear -> ReLU -> linear.
Var mlp(Var x, const MlpParams& p);

}  // namespace mutdet::nn
