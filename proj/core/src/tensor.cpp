#include "semtx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "semtx/error.hpp"

namespace semtx {

namespace {

thread_local bool g_grad_enabled = true;

std::string dims(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shapes " + dims(a) + " and " + dims(b) + " differ");
}

Tensor make_result(int rows, int cols, std::vector<double> value, const char* op,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(TensorNode&)> backward) {
  for (double v : value)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  auto node = std::make_shared<TensorNode>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(value);
  node->op = op;
  bool tracked = false;
  if (g_grad_enabled)
    for (const Tensor* in : inputs) tracked = tracked || in->requires_grad();
  if (tracked) {
    node->requires_grad = true;
    for (const Tensor* in : inputs) node->parents.push_back(in->handle());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// out[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* out, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* row = out + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[static_cast<std::size_t>(i) * k + p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

// out[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(const double* a, const double* b, double* out, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out[static_cast<std::size_t>(i) * n + j] += acc;
    }
  }
}

// out[m,n] += a[k,m]^T * b[k,n]
void gemm_tn(const double* a, const double* b, double* out, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<std::size_t>(p) * m;
    const double* brow = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* row = out + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

bool wants_grad(const std::shared_ptr<TensorNode>& n) { return n->requires_grad; }

Tensor softmax_impl(const Tensor& x, bool causal) {
  const int m = x.rows(), n = x.cols();
  if (causal && m > n) throw DimensionError("causal softmax needs rows <= cols");
  std::vector<double> y(x.size(), 0.0);
  const auto xv = x.values();
  for (int i = 0; i < m; ++i) {
    const int width = causal ? i + 1 : n;
    const double* in = xv.data() + static_cast<std::size_t>(i) * n;
    double* out = y.data() + static_cast<std::size_t>(i) * n;
    const double peak = *std::max_element(in, in + width);
    double total = 0.0;
    for (int j = 0; j < width; ++j) total += out[j] = std::exp(in[j] - peak);
    for (int j = 0; j < width; ++j) out[j] /= total;
  }
  return make_result(m, n, std::move(y), causal ? "softmax_rows_causal" : "softmax_rows", {&x},
                     [m, n](TensorNode& self) {
                       auto& px = *self.parents[0];
                       auto& gx = px.grad_buffer();
                       for (int i = 0; i < m; ++i) {
                         const double* yr = self.value.data() + static_cast<std::size_t>(i) * n;
                         const double* gr = self.grad.data() + static_cast<std::size_t>(i) * n;
                         double dot = 0.0;
                         for (int j = 0; j < n; ++j) dot += yr[j] * gr[j];
                         for (int j = 0; j < n; ++j)
                           gx[static_cast<std::size_t>(i) * n + j] += yr[j] * (gr[j] - dot);
                       }
                     });
}

}  // namespace

std::vector<double>& TensorNode::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  return full(rows, cols, 0.0, requires_grad);
}

Tensor Tensor::full(int rows, int cols, double value, bool requires_grad) {
  return from(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, value),
              requires_grad);
}

Tensor Tensor::from(int rows, int cols, std::vector<double> values, bool requires_grad) {
  if (rows < 0 || cols < 0 || values.size() != static_cast<std::size_t>(rows) * cols)
    throw DimensionError("tensor of shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " cannot hold " + std::to_string(values.size()) + " values");
  auto node = std::make_shared<TensorNode>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on a " + dims(*this) + " tensor");
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
  return node_->grad;
}

void Tensor::backward() const {
  if (size() != 1) throw ContractError("backward() needs a scalar, got " + dims(*this));
  if (!requires_grad()) return;
  node_->grad_buffer()[0] += 1.0;
  Tape(*this).run_backward();
}

Tensor Tensor::detach() const { return from(rows(), cols(), node_->value); }

Tape::Tape(const Tensor& root) {
  // Iterative post-order DFS over tracked nodes; reversed, it is a
  // topological order with the root first.
  std::unordered_set<const TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack{{&root.node(), 0}};
  visited.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order_.begin(), order_.end());
}

void Tape::run_backward() const {
  for (TensorNode* node : order_)
    if (node->backward && !node->grad.empty()) node->backward(*node);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + dims(a) + " x " + dims(b) + " inner dimensions differ");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result(m, n, std::move(out), "matmul", {&a, &b}, [m, k, n](TensorNode& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants_grad(pa)) gemm_nt(self.grad.data(), pb->value.data(), pa->grad_buffer().data(), m, n, k);
    if (wants_grad(pb)) gemm_tn(pa->value.data(), self.grad.data(), pb->grad_buffer().data(), k, m, n);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: " + dims(a) + " x " + dims(b) + "^T inner dimensions differ");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  gemm_nt(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result(m, n, std::move(out), "matmul_nt", {&a, &b}, [m, k, n](TensorNode& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants_grad(pa)) gemm_nn(self.grad.data(), pb->value.data(), pa->grad_buffer().data(), m, n, k);
    if (wants_grad(pb)) gemm_tn(self.grad.data(), pa->value.data(), pb->grad_buffer().data(), n, m, k);
  });
}

Tensor transpose(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * n + j];
  return make_result(n, m, std::move(out), "transpose", {&a}, [m, n](TensorNode& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        g[static_cast<std::size_t>(i) * n + j] += self.grad[static_cast<std::size_t>(j) * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.rows(), a.cols(), std::move(out), "add", {&a, &b}, [](TensorNode& self) {
    for (auto& p : self.parents) {
      if (!wants_grad(p)) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.rows(), a.cols(), std::move(out), "sub", {&a, &b}, [](TensorNode& self) {
    const double sign[2] = {1.0, -1.0};
    for (int k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!wants_grad(p)) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.rows(), a.cols(), std::move(out), "mul", {&a, &b}, [](TensorNode& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants_grad(pa)) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (wants_grad(pb)) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= s;
  return make_result(a.rows(), a.cols(), std::move(out), "scale", {&a}, [s](TensorNode& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != x.cols())
    throw DimensionError("add_row: cannot broadcast " + dims(row) + " over " + dims(x));
  const int m = x.rows(), n = x.cols();
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto rv = row.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] += rv[j];
  return make_result(m, n, std::move(out), "add_row", {&x, &row}, [m, n](TensorNode& self) {
    auto& px = self.parents[0];
    auto& pr = self.parents[1];
    if (wants_grad(px)) {
      auto& g = px->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(pr)) {
      auto& g = pr->grad_buffer();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g[j] += self.grad[static_cast<std::size_t>(i) * n + j];
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x.rows(), x.cols(), std::move(out), "relu", {&x}, [](TensorNode& self) {
    auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p->value[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor softmax_rows(const Tensor& x) { return softmax_impl(x, false); }
Tensor softmax_rows_causal(const Tensor& x) { return softmax_impl(x, true); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const int m = x.rows(), n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(n));
  std::vector<double> normed(x.size()), inv_std(m), out(x.size());
  const auto xv = x.values(), gv = gain.values(), bv = bias.values();
  for (int i = 0; i < m; ++i) {
    const double* row = xv.data() + static_cast<std::size_t>(i) * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= n;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < n; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * n + j;
      normed[k] = (row[j] - mean) * inv_std[i];
      out[k] = gv[j] * normed[k] + bv[j];
    }
  }
  return make_result(
      m, n, std::move(out), "layer_norm", {&x, &gain, &bias},
      [m, n, normed = std::move(normed), inv_std = std::move(inv_std)](TensorNode& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        if (wants_grad(pg)) {
          auto& g = pg->grad_buffer();
          for (std::size_t k = 0; k < normed.size(); ++k) g[k % n] += self.grad[k] * normed[k];
        }
        if (wants_grad(pb)) {
          auto& g = pb->grad_buffer();
          for (std::size_t k = 0; k < normed.size(); ++k) g[k % n] += self.grad[k];
        }
        if (!wants_grad(px)) return;
        auto& gx = px->grad_buffer();
        std::vector<double> dnorm(n);
        for (int i = 0; i < m; ++i) {
          const std::size_t base = static_cast<std::size_t>(i) * n;
          double mean_d = 0.0, mean_dx = 0.0;
          for (int j = 0; j < n; ++j) {
            dnorm[j] = self.grad[base + j] * pg->value[j];
            mean_d += dnorm[j];
            mean_dx += dnorm[j] * normed[base + j];
          }
          mean_d /= n;
          mean_dx /= n;
          for (int j = 0; j < n; ++j)
            gx[base + j] += inv_std[i] * (dnorm[j] - mean_d - normed[base + j] * mean_dx);
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  const int vocab = table.rows(), d = table.cols();
  const int m = static_cast<int>(ids.size());
  std::vector<double> out(static_cast<std::size_t>(m) * d);
  const auto tv = table.values();
  for (int i = 0; i < m; ++i) {
    if (ids[i] < 0 || ids[i] >= vocab)
      throw DimensionError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                           std::to_string(vocab));
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data() + static_cast<std::size_t>(i) * d);
  }
  return make_result(m, d, std::move(out), "embedding", {&table},
                     [d, ids = std::vector<int>(ids.begin(), ids.end())](TensorNode& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < ids.size(); ++i)
                         for (int j = 0; j < d; ++j)
                           g[static_cast<std::size_t>(ids[i]) * d + j] += self.grad[i * d + j];
                     });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result(1, 1, {total}, "sum", {&x}, [](TensorNode& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

std::vector<double> log_softmax_row(std::span<const double> row) {
  const double peak = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (double v : row) total += std::exp(v - peak);
  const double log_z = peak + std::log(total);
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = row[j] - log_z;
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, double smoothing) {
  const int m = logits.rows(), v = logits.cols();
  if (static_cast<int>(targets.size()) != m)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(m) + " rows");
  if (!(smoothing >= 0.0 && smoothing < 1.0))
    throw ConfigError("label smoothing must lie in [0,1)");
  const double off = smoothing / v;
  const double on = 1.0 - smoothing + off;
  std::vector<double> probs(logits.size());
  double loss = 0.0;
  const auto lv = logits.values();
  for (int i = 0; i < m; ++i) {
    if (targets[i] < 0 || targets[i] >= v) throw DimensionError("cross_entropy: target out of range");
    auto logp = log_softmax_row(lv.subspan(static_cast<std::size_t>(i) * v, v));
    for (int j = 0; j < v; ++j) {
      const double q = j == targets[i] ? on : off;
      loss -= q * logp[j];
      probs[static_cast<std::size_t>(i) * v + j] = std::exp(logp[j]);
    }
  }
  loss /= m;
  return make_result(1, 1, {loss}, "cross_entropy", {&logits},
                     [m, v, on, off, probs = std::move(probs),
                      targets = std::vector<int>(targets.begin(), targets.end())](TensorNode& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       const double upstream = self.grad[0] / m;
                       for (int i = 0; i < m; ++i)
                         for (int j = 0; j < v; ++j) {
                           const std::size_t k = static_cast<std::size_t>(i) * v + j;
                           g[k] += upstream * (probs[k] - (j == targets[i] ? on : off));
                         }
                     });
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
  return grad_check([&] { return f(x); }, std::vector<Tensor>{x}, h);
}

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double h) {
  if (!(h > 0.0)) throw ContractError("grad_check: step must be positive");
  for (auto& leaf : leaves) {
    if (!leaf.requires_grad()) throw ContractError("grad_check: leaf does not require grad");
    leaf.zero_grad();
  }
  Tensor y = f();
  if (y.size() != 1) throw ContractError("grad_check: function output is not a scalar");
  y.backward();

  double worst = 0.0;
  NoGradGuard no_grad;
  for (auto& leaf : leaves) {
    const auto analytic = leaf.grad();
    auto values = leaf.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = f().item();
      values[i] = saved - h;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(numeric - analytic[i]) / std::max(1.0, std::abs(analytic[i])));
    }
  }
  return worst;
}

}  // namespace semtx
