#pragma once

// Dense row-major matrices with reverse-mode differentiation.
//
// Every op records its inputs and a backward closure on the result node when
// any input requires a gradient; otherwise the result is a plain constant.
// Calling backward() on a scalar builds a Tape (the reverse topological order
// of the recorded graph) and runs each closure once.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace semtx {

struct TensorNode {
  int rows = 0;
  int cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  std::size_t size() const { return value.size(); }
  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor full(int rows, int cols, double value, bool requires_grad = false);
  static Tensor from(int rows, int cols, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value) { return from(1, 1, {value}); }

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  std::size_t size() const { return node_->size(); }
  std::vector<int> shape() const { return {rows(), cols()}; }

  double at(int i, int j) const { return node_->value[static_cast<std::size_t>(i) * cols() + j]; }
  double item() const;

  std::span<const double> values() const { return node_->value; }
  // Writable access for leaves (parameter updates, perturbation in checks).
  std::span<double> mutable_values() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  // Gradient of the last backward pass; zeros when nothing accumulated.
  std::vector<double> grad() const;
  void zero_grad() { node_->grad.clear(); }

  // Seeds d(this)/d(this) = 1 and back-propagates. Requires a 1x1 tensor.
  void backward() const;

  // Same values, no history.
  Tensor detach() const;

  TensorNode& node() const { return *node_; }
  const std::shared_ptr<TensorNode>& handle() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Reverse topological order of the graph under a root; each node once.
class Tape {
 public:
  explicit Tape(const Tensor& root);

  const std::vector<TensorNode*>& order() const { return order_; }
  void run_backward() const;

 private:
  std::vector<TensorNode*> order_;
};

// Disables history recording on this thread while alive (inference, finite
// differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// --- ops -----------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_row(const Tensor& x, const Tensor& row);  // x[m,n] + row[1,n] per row
Tensor relu(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
// Row i is normalised over columns 0..i; later columns are exactly 0.
Tensor softmax_rows_causal(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);
Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor sum(const Tensor& x);
// Mean over rows of label-smoothed cross entropy. The smoothed target puts
// 1 - eps + eps/V on the gold id and eps/V elsewhere.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, double smoothing);
// Row-wise log-softmax without history (decoding).
std::vector<double> log_softmax_row(std::span<const double> row);

// --- gradient checking ---------------------------------------------------------

// Max over coordinates of |numeric - analytic| / max(1, |analytic|) with
// central differences of step h. f must return a 1x1 tensor.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h);
// Same, over every coordinate of several leaves feeding a closure.
double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double h);

}  // namespace semtx
