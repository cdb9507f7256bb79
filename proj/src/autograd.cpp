#include "fsnt/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "fsnt/errors.hpp"

namespace fsnt::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

thread_local bool g_grad_enabled = true;

MatMap as_mat(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}
ConstMatMap as_mat(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

void require_rank2(const Var& v, const char* op) {
  if (v.value().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " +
                     shape_str(v.shape()));
  }
}

Var make_result(Tensor value, std::initializer_list<const Var*> parents,
                std::function<void(Node&)> backward, const char* op) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": produced a non-finite value");
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    for (const Var* p : parents) {
      if (p->requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const Var* p : parents) node->parents.push_back(p->shared());
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

// Gradient sink for parent i, or nullptr when that parent needs none.
Tensor* sink(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Tensor Var::grad() const {
  if (has_grad()) return node_->grad;
  return Tensor(node_->value.shape(), 0.0);
}

void Var::zero_grad() {
  if (node_->grad.size() == node_->value.size()) node_->grad.fill(0.0);
}

void Var::backward() const {
  if (node_->value.size() != 1) {
    throw ShapeError("backward() needs a single-element output, got " +
                     shape_str(node_->value.shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS -> topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

// ---- linear algebra ---------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  as_mat(out).noalias() = as_mat(a.value()) * as_mat(b.value());
  return make_result(std::move(out), {&a, &b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (Tensor* ga = sink(self, 0)) {
      as_mat(*ga).noalias() += as_mat(self.grad) * as_mat(bv).transpose();
    }
    if (Tensor* gb = sink(self, 1)) {
      as_mat(*gb).noalias() += as_mat(av).transpose() * as_mat(self.grad);
    }
  }, "matmul");
}

Var transpose(const Var& a) {
  require_rank2(a, "transpose");
  Tensor out({a.cols(), a.rows()});
  as_mat(out) = as_mat(a.value()).transpose();
  return make_result(std::move(out), {&a}, [](Node& self) {
    if (Tensor* ga = sink(self, 0)) as_mat(*ga) += as_mat(self.grad).transpose();
  }, "transpose");
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes differ " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {&a, &b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (Tensor* g = sink(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  }, "add");
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result(std::move(out), {&a, &b}, [](Node& self) {
    if (Tensor* g = sink(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor* g = sink(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  }, "sub");
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), {&a, &b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (Tensor* g = sink(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (Tensor* g = sink(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  }, "mul");
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  return make_result(std::move(out), {&a}, [factor](Node& self) {
    if (Tensor* g = sink(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += factor * self.grad[i];
    }
  }, "scale");
}

Var add_row_vector(const Var& x, const Var& bias) {
  require_rank2(x, "add_row_vector");
  if (bias.value().size() != x.cols()) {
    throw ShapeError("add_row_vector: bias " + shape_str(bias.shape()) +
                     " does not match columns of " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  as_mat(out).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(
      bias.value().data(), static_cast<Eigen::Index>(x.cols()));
  return make_result(std::move(out), {&x, &bias}, [](Node& self) {
    if (Tensor* gx = sink(self, 0)) as_mat(*gx) += as_mat(self.grad);
    if (Tensor* gb = sink(self, 1)) {
      auto col_sums = as_mat(self.grad).colwise().sum();
      for (std::size_t j = 0; j < gb->size(); ++j) (*gb)[j] += col_sums(j);
    }
  }, "add_row_vector");
}

Var add_tiled(const Var& x, const Var& tile) {
  require_rank2(x, "add_tiled");
  require_rank2(tile, "add_tiled");
  const std::size_t s = tile.rows();
  if (tile.cols() != x.cols() || s == 0 || x.rows() % s != 0) {
    throw ShapeError("add_tiled: tile " + shape_str(tile.shape()) +
                     " does not tile " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  const std::size_t n = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const double* t = tile.value().data() + (r % s) * n;
    double* o = out.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) o[j] += t[j];
  }
  return make_result(std::move(out), {&x, &tile}, [s](Node& self) {
    if (Tensor* gx = sink(self, 0)) as_mat(*gx) += as_mat(self.grad);
    if (Tensor* gt = sink(self, 1)) {
      const std::size_t n = gt->cols();
      for (std::size_t r = 0; r < self.grad.rows(); ++r) {
        const double* g = self.grad.data() + r * n;
        double* o = gt->data() + (r % s) * n;
        for (std::size_t j = 0; j < n; ++j) o[j] += g[j];
      }
    }
  }, "add_tiled");
}

// ---- elementwise nonlinearities --------------------------------------------

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), {&x}, [](Node& self) {
    if (Tensor* g = sink(self, 0)) {
      const Tensor& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) {
        if (xv[i] > 0.0) (*g)[i] += self.grad[i];
      }
    }
  }, "relu");
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return make_result(std::move(out), {&x}, [](Node& self) {
    if (Tensor* g = sink(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double y = self.value[i];
        (*g)[i] += self.grad[i] * y * (1.0 - y);
      }
    }
  }, "sigmoid");
}

Var tanh(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = std::tanh(v);
  return make_result(std::move(out), {&x}, [](Node& self) {
    if (Tensor* g = sink(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double y = self.value[i];
        (*g)[i] += self.grad[i] * (1.0 - y * y);
      }
    }
  }, "tanh");
}

// ---- normalization ----------------------------------------------------------

Var softmax_rows(const Var& x) {
  require_rank2(x, "softmax_rows");
  Tensor out = x.value();
  const std::size_t n = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* row = out.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= total;
  }
  return make_result(std::move(out), {&x}, [](Node& self) {
    Tensor* g = sink(self, 0);
    if (!g) return;
    const std::size_t n = self.value.cols();
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      const double* y = self.value.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
      double* gx = g->data() + r * n;
      for (std::size_t j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
    }
  }, "softmax_rows");
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t m = x.rows();
  const std::size_t d = x.cols();
  if (d == 0 || gamma.value().size() != d || beta.value().size() != d) {
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(d) +
                     " elements");
  }
  Tensor xhat({m, d});
  std::vector<double> rstd(m);
  Tensor out({m, d});
  const double* gm = gamma.value().data();
  const double* bt = beta.value().data();
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = x.value().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * rstd[r];
      xhat.at(r, j) = h;
      out.at(r, j) = h * gm[j] + bt[j];
    }
  }
  return make_result(
      std::move(out), {&x, &gamma, &beta},
      [xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        const std::size_t m = xhat.rows();
        const std::size_t d = xhat.cols();
        const double* gm = self.parents[1]->value.data();
        Tensor* gx = sink(self, 0);
        Tensor* gg = sink(self, 1);
        Tensor* gb = sink(self, 2);
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < m; ++r) {
          const double* gy = self.grad.data() + r * d;
          const double* h = xhat.data() + r * d;
          if (gg) {
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += gy[j] * h[j];
          }
          if (gb) {
            for (std::size_t j = 0; j < d; ++j) (*gb)[j] += gy[j];
          }
          if (!gx) continue;
          double mean_dh = 0.0;
          double mean_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = gy[j] * gm[j];
            mean_dh += dxhat[j];
            mean_dh_h += dxhat[j] * h[j];
          }
          mean_dh /= static_cast<double>(d);
          mean_dh_h /= static_cast<double>(d);
          double* out = gx->data() + r * d;
          for (std::size_t j = 0; j < d; ++j) {
            out[j] += rstd[r] * (dxhat[j] - mean_dh - h[j] * mean_dh_h);
          }
        }
      },
      "layer_norm");
}

// ---- indexing / reshaping ---------------------------------------------------

Var gather_rows(const Var& table, std::span<const std::size_t> indices) {
  require_rank2(table, "gather_rows");
  const std::size_t v = table.rows();
  const std::size_t e = table.cols();
  Tensor out({indices.size(), e});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= v) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[i]) +
                       " out of range for " + std::to_string(v) + " rows");
    }
    std::copy_n(table.value().data() + indices[i] * e, e, out.data() + i * e);
  }
  return make_result(
      std::move(out), {&table},
      [idx = std::vector<std::size_t>(indices.begin(), indices.end())](Node& self) {
        Tensor* g = sink(self, 0);
        if (!g) return;
        const std::size_t e = g->cols();
        for (std::size_t i = 0; i < idx.size(); ++i) {
          const double* src = self.grad.data() + i * e;
          double* dst = g->data() + idx[i] * e;
          for (std::size_t j = 0; j < e; ++j) dst[j] += src[j];
        }
      },
      "gather_rows");
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
  }
  Tensor out({m, total});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    as_mat(out).middleCols(static_cast<Eigen::Index>(off),
                           static_cast<Eigen::Index>(p.cols())) = as_mat(p.value());
    off += p.cols();
  }
  // make_result takes an initializer list; build the node by hand here.
  if (!out.all_finite()) throw NumericError("concat_cols: produced a non-finite value");
  auto node = std::make_shared<Node>();
  node->value = std::move(out);
  if (g_grad_enabled) {
    for (const Var& p : parts) node->requires_grad |= p.requires_grad();
    if (node->requires_grad) {
      for (const Var& p : parts) node->parents.push_back(p.shared());
      node->backward = [offsets = std::move(offsets)](Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
          Tensor* g = sink(self, i);
          if (!g) continue;
          as_mat(*g) += as_mat(self.grad).middleCols(
              static_cast<Eigen::Index>(offsets[i]),
              static_cast<Eigen::Index>(g->cols()));
        }
      };
    }
  }
  return Var(std::move(node));
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
  require_rank2(x, "slice_cols");
  if (begin + count > x.cols()) {
    throw ShapeError("slice_cols: range exceeds " + std::to_string(x.cols()) +
                     " columns");
  }
  Tensor out({x.rows(), count});
  as_mat(out) = as_mat(x.value()).middleCols(static_cast<Eigen::Index>(begin),
                                            static_cast<Eigen::Index>(count));
  return make_result(std::move(out), {&x}, [begin, count](Node& self) {
    if (Tensor* g = sink(self, 0)) {
      as_mat(*g).middleCols(static_cast<Eigen::Index>(begin),
                            static_cast<Eigen::Index>(count)) += as_mat(self.grad);
    }
  }, "slice_cols");
}

Var reshape(const Var& x, Shape shape) {
  if (shape_size(shape) != x.value().size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  return make_result(x.value().reshaped(std::move(shape)), {&x}, [](Node& self) {
    if (Tensor* g = sink(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  }, "reshape");
}

Var append_row_per_sequence(const Var& x, const Var& row, std::size_t seq_len) {
  require_rank2(x, "append_row_per_sequence");
  const std::size_t n = x.cols();
  if (seq_len == 0 || x.rows() % seq_len != 0 || row.value().size() != n) {
    throw ShapeError("append_row_per_sequence: incompatible shapes");
  }
  const std::size_t batch = x.rows() / seq_len;
  Tensor out({batch * (seq_len + 1), n});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(x.value().data() + b * seq_len * n, seq_len * n,
                out.data() + b * (seq_len + 1) * n);
    std::copy_n(row.value().data(), n, out.data() + (b * (seq_len + 1) + seq_len) * n);
  }
  return make_result(std::move(out), {&x, &row}, [seq_len](Node& self) {
    const std::size_t n = self.value.cols();
    const std::size_t batch = self.value.rows() / (seq_len + 1);
    Tensor* gx = sink(self, 0);
    Tensor* gr = sink(self, 1);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* src = self.grad.data() + b * (seq_len + 1) * n;
      if (gx) {
        double* dst = gx->data() + b * seq_len * n;
        for (std::size_t i = 0; i < seq_len * n; ++i) dst[i] += src[i];
      }
      if (gr) {
        for (std::size_t j = 0; j < n; ++j) (*gr)[j] += src[seq_len * n + j];
      }
    }
  }, "append_row_per_sequence");
}

Var mean_over_time(const Var& x, std::size_t seq_len) {
  require_rank2(x, "mean_over_time");
  if (seq_len == 0 || x.rows() % seq_len != 0) {
    throw ShapeError("mean_over_time: rows not a multiple of seq_len");
  }
  const std::size_t n = x.cols();
  const std::size_t batch = x.rows() / seq_len;
  const double inv = 1.0 / static_cast<double>(seq_len);
  Tensor out({batch, n});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < seq_len; ++t) {
      const double* src = x.value().data() + (b * seq_len + t) * n;
      for (std::size_t j = 0; j < n; ++j) out.at(b, j) += src[j];
    }
    for (std::size_t j = 0; j < n; ++j) out.at(b, j) *= inv;
  }
  return make_result(std::move(out), {&x}, [seq_len, inv](Node& self) {
    Tensor* g = sink(self, 0);
    if (!g) return;
    const std::size_t n = self.value.cols();
    for (std::size_t r = 0; r < g->rows(); ++r) {
      const double* src = self.grad.data() + (r / seq_len) * n;
      double* dst = g->data() + r * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += src[j] * inv;
    }
  }, "mean_over_time");
}

Var time_weighted_sum(const Var& x, const Var& w, std::size_t seq_len) {
  require_rank2(x, "time_weighted_sum");
  require_rank2(w, "time_weighted_sum");
  const std::size_t n = x.cols();
  const bool shared = w.cols() == 1 && n != 1;
  if (seq_len == 0 || x.rows() % seq_len != 0 || w.rows() != seq_len ||
      (!shared && w.cols() != n)) {
    throw ShapeError("time_weighted_sum: weights " + shape_str(w.shape()) +
                     " incompatible with " + shape_str(x.shape()));
  }
  const std::size_t batch = x.rows() / seq_len;
  const std::size_t wc = w.cols();
  Tensor out({batch, n});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < seq_len; ++t) {
      const double* src = x.value().data() + (b * seq_len + t) * n;
      const double* wt = w.value().data() + t * wc;
      for (std::size_t j = 0; j < n; ++j) out.at(b, j) += wt[shared ? 0 : j] * src[j];
    }
  }
  return make_result(std::move(out), {&x, &w}, [seq_len, shared](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const Tensor& wv = self.parents[1]->value;
    const std::size_t n = xv.cols();
    const std::size_t wc = wv.cols();
    Tensor* gx = sink(self, 0);
    Tensor* gw = sink(self, 1);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      const std::size_t t = r % seq_len;
      const double* go = self.grad.data() + (r / seq_len) * n;
      const double* xr = xv.data() + r * n;
      const double* wt = wv.data() + t * wc;
      if (gx) {
        double* dst = gx->data() + r * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += go[j] * wt[shared ? 0 : j];
      }
      if (gw) {
        double* dst = gw->data() + t * wc;
        for (std::size_t j = 0; j < n; ++j) dst[shared ? 0 : j] += go[j] * xr[j];
      }
    }
  }, "time_weighted_sum");
}

// ---- reductions / loss ------------------------------------------------------

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return make_result(Tensor::scalar(total), {&x}, [](Node& self) {
    if (Tensor* g = sink(self, 0)) {
      for (double& v : g->values()) v += self.grad[0];
    }
  }, "sum");
}

Var mean(const Var& x) {
  const double inv = 1.0 / static_cast<double>(x.value().size());
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return make_result(Tensor::scalar(total * inv), {&x}, [inv](Node& self) {
    if (Tensor* g = sink(self, 0)) {
      for (double& v : g->values()) v += self.grad[0] * inv;
    }
  }, "mean");
}

double bce_value(double p, int label) {
  const double q = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return label == 1 ? -std::log(q) : -std::log(1.0 - q);
}

Var bce(const Var& probabilities, std::span<const int> labels) {
  const Tensor& p = probabilities.value();
  if (p.size() != labels.size() || labels.empty()) {
    throw ShapeError("bce: " + std::to_string(p.size()) + " probabilities for " +
                     std::to_string(labels.size()) + " labels");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += bce_value(p[i], labels[i]);
  const double inv = 1.0 / static_cast<double>(labels.size());
  return make_result(
      Tensor::scalar(total * inv), {&probabilities},
      [y = std::vector<int>(labels.begin(), labels.end()), inv](Node& self) {
        Tensor* g = sink(self, 0);
        if (!g) return;
        const Tensor& p = self.parents[0]->value;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double pi = p[i];
          if (pi < kProbabilityClamp || pi > 1.0 - kProbabilityClamp) continue;
          const double d = y[i] == 1 ? -1.0 / pi : 1.0 / (1.0 - pi);
          (*g)[i] += self.grad[0] * d * inv;
        }
      },
      "bce");
}

// ---- attention --------------------------------------------------------------

Var multi_head_attention_core(const Var& q, const Var& k, const Var& v,
                              std::size_t seq_len, std::size_t heads,
                              bool causal, AttentionTrace* trace) {
  require_rank2(q, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: d_model " + std::to_string(d) +
                     " not divisible by " + std::to_string(heads) + " heads");
  }
  if (seq_len == 0 || q.rows() % seq_len != 0) {
    throw ShapeError("attention: rows not a multiple of the sequence length");
  }
  const std::size_t batch = q.rows() / seq_len;
  const std::size_t dk = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  const auto S = static_cast<Eigen::Index>(seq_len);
  const auto DK = static_cast<Eigen::Index>(dk);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));

  auto block = [&](const Tensor& t, std::size_t b, std::size_t h) {
    return ConstStrided(t.data() + b * seq_len * d + h * dk, S, DK, stride);
  };

  Tensor out({q.rows(), d});
  std::vector<double> probs(batch * heads * seq_len * seq_len);
  RowMat scores(S, S);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      scores.noalias() = block(q.value(), b, h) * block(k.value(), b, h).transpose();
      scores *= inv_sqrt;
      MatMap p(probs.data() + (b * heads + h) * seq_len * seq_len, S, S);
      for (Eigen::Index t = 0; t < S; ++t) {
        const Eigen::Index visible = causal ? t + 1 : S;
        const double mx = scores.row(t).head(visible).maxCoeff();
        double total = 0.0;
        for (Eigen::Index u = 0; u < S; ++u) {
          const double e = u < visible ? std::exp(scores(t, u) - mx) : 0.0;
          p(t, u) = e;
          total += e;
        }
        p.row(t) /= total;
      }
      Strided(out.data() + b * seq_len * d + h * dk, S, DK, stride).noalias() =
          p * block(v.value(), b, h);
    }
  }
  if (trace) {
    trace->batch = batch;
    trace->heads = heads;
    trace->seq_len = seq_len;
    trace->weights = probs;
  }

  return make_result(
      std::move(out), {&q, &k, &v},
      [probs = std::move(probs), batch, heads, seq_len, d, dk, inv_sqrt](Node& self) {
        const Tensor& qv = self.parents[0]->value;
        const Tensor& kv = self.parents[1]->value;
        const Tensor& vv = self.parents[2]->value;
        Tensor* gq = sink(self, 0);
        Tensor* gk = sink(self, 1);
        Tensor* gv = sink(self, 2);
        const auto S = static_cast<Eigen::Index>(seq_len);
        const auto DK = static_cast<Eigen::Index>(dk);
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
        auto cblock = [&](const Tensor& t, std::size_t b, std::size_t h) {
          return ConstStrided(t.data() + b * seq_len * d + h * dk, S, DK, stride);
        };
        auto mblock = [&](Tensor& t, std::size_t b, std::size_t h) {
          return Strided(t.data() + b * seq_len * d + h * dk, S, DK, stride);
        };
        RowMat dp(S, S);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            ConstMatMap p(probs.data() + (b * heads + h) * seq_len * seq_len, S, S);
            auto go = cblock(self.grad, b, h);
            if (gv) mblock(*gv, b, h).noalias() += p.transpose() * go;
            if (!gq && !gk) continue;
            dp.noalias() = go * cblock(vv, b, h).transpose();
            // softmax backward: ds = p * (dp - rowsum(dp * p))
            for (Eigen::Index t = 0; t < S; ++t) {
              const double dot = dp.row(t).dot(p.row(t));
              for (Eigen::Index u = 0; u < S; ++u) dp(t, u) = p(t, u) * (dp(t, u) - dot);
            }
            dp *= inv_sqrt;
            if (gq) mblock(*gq, b, h).noalias() += dp * cblock(kv, b, h);
            if (gk) mblock(*gk, b, h).noalias() += dp.transpose() * cblock(qv, b, h);
          }
        }
      },
      "attention");
}

// ---- ParameterSet -----------------------------------------------------------

Var& ParameterSet::add(std::string name, Tensor init) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  entries_.emplace_back(std::move(name), parameter(std::move(init)));
  return entries_.back().second;
}

Var& ParameterSet::at(std::string_view name) {
  for (auto& [n, v] : entries_) {
    if (n == name) return v;
  }
  throw ConfigError("unknown parameter: " + std::string(name));
}

const Var& ParameterSet::at(std::string_view name) const {
  return const_cast<ParameterSet*>(this)->at(name);
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

std::size_t ParameterSet::element_count() const {
  std::size_t total = 0;
  for (const auto& [n, v] : entries_) total += v.value().size();
  return total;
}

void ParameterSet::zero_grad() {
  for (auto& [n, v] : entries_) v.zero_grad();
}

std::vector<Tensor> ParameterSet::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [n, v] : entries_) out.push_back(v.value());
  return out;
}

void ParameterSet::restore(const std::vector<Tensor>& values) {
  if (values.size() != entries_.size()) {
    throw ShapeError("restore: snapshot has " + std::to_string(values.size()) +
                     " tensors, expected " + std::to_string(entries_.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != entries_[i].second.shape()) {
      throw ShapeError("restore: shape mismatch for " + entries_[i].first);
    }
    entries_[i].second.mutable_value() = values[i];
  }
}

}  // namespace fsnt::ag
