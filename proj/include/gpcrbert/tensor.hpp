#pragma once

// Dense row-major tensors with a reverse-mode tape.
//
// A Tensor is a shared handle: copies alias the same storage, the way
// parameters are shared between the model, the optimizer and checkpoint I/O.
// Every op records a closure on its output node when gradients are enabled
// and at least one input requires them; backward() walks that graph once in
// reverse topological order and then releases it.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gpcrbert/real.hpp"

namespace gpcrbert::tensor {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  // Leading extent of a 2-D view: product of all axes but the last.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<Real> data();
  std::span<const Real> data() const;
  Real item() const;
  Real at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  // Allocates a zero gradient on first access.
  std::span<Real> grad();
  std::span<const Real> grad() const;
  void zero_grad();

  // Independent copy of the values with no graph attached.
  Tensor detach_copy() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Thread-local switch; while disabled no op records backward closures.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

using Rng = std::mt19937_64;

// a[n,k] * b[k,m]
Tensor matmul(const Tensor& a, const Tensor& b);
// a[n,k] * b[m,k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// x[n,d_in] * w[d_in,d_out] + bias[d_out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real factor);
Tensor sum(const Tensor& x);

Tensor relu(const Tensor& x);
// Inverted dropout. With training == false this returns x itself.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

// Row-wise softmax over the last axis. Columns with column_mask[j] == 0 get
// probability exactly 0; at least one column must stay unmasked.
Tensor softmax_rows(const Tensor& x, std::span<const std::uint8_t> column_mask = {});

// Normalizes over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-12);

// Row lookup: out[i] = table[ids[i]].
Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Sum over rows whose label != ignore_index of -log softmax(logits[i])[label],
// divided by `normalizer` (the supervised row count when normalizer <= 0).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, int ignore_index,
                     double normalizer = 0.0);

// Populates gradients of every tracked tensor reachable from the scalar
// `loss`, accumulating into existing gradients, then frees the graph.
void backward(const Tensor& loss);

}  // namespace gpcrbert::tensor
