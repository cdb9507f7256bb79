#pragma once

// Reverse-mode automatic differentiation over dense Tensors.
//
// A Var is a cheap handle to a graph node. Every primitive below builds a new
// node holding its forward value plus a closure that pushes the node's
// gradient into its parents. Var::backward() on a scalar walks the graph in
// reverse topological order. Parameters are persistent leaf nodes that
// accumulate gradients across calls until zero_grad().
//
// Every primitive checks its output for NaN/Inf and throws NumericError.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fsnt/tensor.hpp"

namespace fsnt::ag {

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily; same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  // Zero tensor of the value's shape when no gradient has reached this node.
  Tensor grad() const;
  void zero_grad();

  // Seeds d(self)/d(self) = 1 and accumulates into every reachable leaf.
  // Only valid on single-element vars.
  void backward() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on the current thread while alive. Ops still
// compute values; nodes simply carry no parents or closures.
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

Var constant(Tensor value);
Var parameter(Tensor value);

// ---- primitives ----------------------------------------------------------

Var matmul(const Var& a, const Var& b);  // [m,k] x [k,n] -> [m,n]
Var transpose(const Var& a);             // [m,n] -> [n,m]
Var add(const Var& a, const Var& b);     // same shape
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double factor);
Var add_row_vector(const Var& x, const Var& bias);  // x[m,n] + bias[n]
// x[B*S, n] + tile[S, n] repeated over the B sequences.
Var add_tiled(const Var& x, const Var& tile);

Var relu(const Var& x);  // subgradient at 0 is 0
Var sigmoid(const Var& x);
Var tanh(const Var& x);

Var softmax_rows(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

// Row gather; gradients scatter-add back into `table`.
Var gather_rows(const Var& table, std::span<const std::size_t> indices);
inline Var embedding_lookup(const Var& table,
                            std::span<const std::size_t> indices) {
  return gather_rows(table, indices);
}

Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& x, std::size_t begin, std::size_t count);
Var reshape(const Var& x, Shape shape);

// Packed sequences: x holds B sequences of `seq_len` rows each.
// Appends `row` [1, n] after every sequence -> [B*(seq_len+1), n].
Var append_row_per_sequence(const Var& x, const Var& row, std::size_t seq_len);
// Mean of each sequence's rows -> [B, n].
Var mean_over_time(const Var& x, std::size_t seq_len);
// out[b, d] = sum_t w[t, d] * x[b*seq_len + t, d]. `w` is [seq_len, n], or
// [seq_len, 1] to share each time weight across all n columns.
Var time_weighted_sum(const Var& x, const Var& w, std::size_t seq_len);

Var sum(const Var& x);   // -> scalar
Var mean(const Var& x);  // -> scalar

inline constexpr double kProbabilityClamp = 1e-7;

// Mean binary cross-entropy. p is clamped to [1e-7, 1 - 1e-7] before the log;
// inside the clamp the gradient is exact, outside it is zero.
Var bce(const Var& probabilities, std::span<const int> labels);
double bce_value(double p, int label);

// Per-(layer) attention weights, captured when a trace is passed to
// multi_head_attention_core. weights[b][h] is a seq_len x seq_len matrix.
struct AttentionTrace {
  std::size_t batch = 0;
  std::size_t heads = 0;
  std::size_t seq_len = 0;
  std::vector<double> weights;  // [batch, heads, seq_len, seq_len]
};

// Scaled dot-product attention over H heads for B packed sequences.
// Q, K, V are [B*seq_len, d_model]; head h uses columns [h*dk, (h+1)*dk).
// Returns the concatenated head outputs [B*seq_len, d_model] (before W_O).
// With `causal`, position t only attends to positions <= t.
Var multi_head_attention_core(const Var& q, const Var& k, const Var& v,
                              std::size_t seq_len, std::size_t heads,
                              bool causal, AttentionTrace* trace = nullptr);

// ---- parameters -----------------------------------------------------------

// Named parameter leaves with stable insertion order.
class ParameterSet {
 public:
  Var& add(std::string name, Tensor init);

  Var& at(std::string_view name);
  const Var& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t element_count() const;
  void zero_grad();

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  // Deep copy of all values, used for best-epoch snapshots.
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

}  // namespace fsnt::ag
