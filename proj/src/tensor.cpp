#include "gpcrbert/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "gpcrbert/error.hpp"

namespace gpcrbert::tensor {

namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using NodePtr = std::shared_ptr<detail::Node>;

thread_local bool g_grad_enabled = true;

MatrixMap as_matrix(std::vector<Real>& v, std::size_t rows, std::size_t cols) {
  return MatrixMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

ConstMatrixMap as_matrix(const std::vector<Real>& v, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(v.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

std::vector<Real>& grad_of(detail::Node& node) {
  if (node.grad.empty()) node.grad.assign(node.value.size(), Real{0});
  return node.grad;
}

const NodePtr& require(const Tensor& t, const char* op) {
  if (!t.defined()) throw InvalidArgument(std::string(op) + ": undefined tensor");
  return t.node();
}

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + to_string(t.shape()));
  }
}

// Creates the output node; attaches the closure only if a parent is tracked.
Tensor make_result(Shape shape, std::vector<Real> value, std::vector<NodePtr> parents,
                   std::function<void(detail::Node&)> backward_fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool tracked = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) tracked = tracked || p->requires_grad;
  }
  if (tracked) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive: " + to_string(shape));
  }
  if (element_count(shape) != values.size()) {
    throw ShapeError("tensor of shape " + to_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = element_count(shape);
  return Tensor(std::move(shape), std::vector<Real>(n, Real{0}), requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return require(*this, "shape")->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis out of range for shape " + to_string(s));
  return s[axis];
}

std::size_t Tensor::size() const { return require(*this, "size")->value.size(); }

std::size_t Tensor::cols() const { return shape().back(); }

std::size_t Tensor::rows() const { return size() / cols(); }

std::span<Real> Tensor::data() { return require(*this, "data")->value; }

std::span<const Real> Tensor::data() const { return require(*this, "data")->value; }

Real Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

Real Tensor::at(std::size_t row, std::size_t col) const {
  return node_->value[row * cols() + col];
}

bool Tensor::requires_grad() const { return require(*this, "requires_grad")->requires_grad; }

void Tensor::set_requires_grad(bool value) { require(*this, "set_requires_grad")->requires_grad = value; }

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

std::span<Real> Tensor::grad() { return grad_of(*require(*this, "grad")); }

std::span<const Real> Tensor::grad() const { return require(*this, "grad")->grad; }

void Tensor::zero_grad() {
  auto& g = require(*this, "zero_grad")->grad;
  std::fill(g.begin(), g.end(), Real{0});
}

Tensor Tensor::detach_copy() const { return Tensor(shape(), node_->value, false); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<Real> out(n * m);
  as_matrix(out, n, m).noalias() = as_matrix(a.node()->value, n, k) * as_matrix(b.node()->value, k, m);
  return make_result({n, m}, std::move(out), {a.node(), b.node()}, [n, k, m](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    auto dc = as_matrix(std::as_const(self.grad), n, m);
    if (pa.requires_grad) {
      as_matrix(grad_of(pa), n, k).noalias() += dc * as_matrix(std::as_const(pb.value), k, m).transpose();
    }
    if (pb.requires_grad) {
      as_matrix(grad_of(pb), k, m).noalias() += as_matrix(std::as_const(pa.value), n, k).transpose() * dc;
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: " + to_string(a.shape()) + " x " + to_string(b.shape()) + "^T");
  }
  std::vector<Real> out(n * m);
  as_matrix(out, n, m).noalias() =
      as_matrix(a.node()->value, n, k) * as_matrix(b.node()->value, m, k).transpose();
  return make_result({n, m}, std::move(out), {a.node(), b.node()}, [n, k, m](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    auto dc = as_matrix(std::as_const(self.grad), n, m);
    if (pa.requires_grad) {
      as_matrix(grad_of(pa), n, k).noalias() += dc * as_matrix(std::as_const(pb.value), m, k);
    }
    if (pb.requires_grad) {
      as_matrix(grad_of(pb), m, k).noalias() += dc.transpose() * as_matrix(std::as_const(pa.value), n, k);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_2d(x, "linear");
  require_2d(w, "linear");
  const std::size_t n = x.dim(0), din = x.dim(1), dout = w.dim(1);
  if (w.dim(0) != din || bias.size() != dout) {
    throw ShapeError("linear: x " + to_string(x.shape()) + ", W " + to_string(w.shape()) +
                     ", b " + to_string(bias.shape()));
  }
  std::vector<Real> out(n * dout);
  auto y = as_matrix(out, n, dout);
  y.noalias() = as_matrix(x.node()->value, n, din) * as_matrix(w.node()->value, din, dout);
  y.rowwise() += as_matrix(bias.node()->value, 1, dout).row(0);
  return make_result({n, dout}, std::move(out), {x.node(), w.node(), bias.node()},
                     [n, din, dout](detail::Node& self) {
                       auto& px = *self.parents[0];
                       auto& pw = *self.parents[1];
                       auto& pb = *self.parents[2];
                       auto dy = as_matrix(std::as_const(self.grad), n, dout);
                       if (px.requires_grad) {
                         as_matrix(grad_of(px), n, din).noalias() +=
                             dy * as_matrix(std::as_const(pw.value), din, dout).transpose();
                       }
                       if (pw.requires_grad) {
                         as_matrix(grad_of(pw), din, dout).noalias() +=
                             as_matrix(std::as_const(px.value), n, din).transpose() * dy;
                       }
                       if (pb.requires_grad) {
                         as_matrix(grad_of(pb), 1, dout) += dy.colwise().sum();
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  std::vector<Real> out(a.node()->value);
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node& self) {
    for (auto& parent : self.parents) {
      if (!parent->requires_grad) continue;
      auto& g = grad_of(*parent);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  std::vector<Real> out(a.node()->value);
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = grad_of(pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = grad_of(pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& x, Real factor) {
  std::vector<Real> out(x.node()->value);
  for (auto& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), {x.node()}, [factor](detail::Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (auto v : x.node()->value) total += v;
  return make_result({1}, {static_cast<Real>(total)}, {x.node()}, [](detail::Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<Real> out(x.node()->value);
  for (auto& v : out) v = v > Real{0} ? v : Real{0};
  return make_result(x.shape(), std::move(out), {x.node()}, [](detail::Node& self) {
    auto& parent = *self.parents[0];
    auto& g = grad_of(parent);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (parent.value[i] > Real{0}) g[i] += self.grad[i];
    }
  });
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw InvalidArgument("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<Real> mask(x.size());
  for (auto& m : mask) m = keep(rng) ? keep_scale : Real{0};
  std::vector<Real> out(x.node()->value);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_result(x.shape(), std::move(out), {x.node()},
                     [mask = std::move(mask)](detail::Node& self) {
                       auto& g = grad_of(*self.parents[0]);
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
                     });
}

Tensor softmax_rows(const Tensor& x, std::span<const std::uint8_t> column_mask) {
  const std::size_t m = x.cols(), n = x.rows();
  if (!column_mask.empty()) {
    if (column_mask.size() != m) {
      throw ShapeError("softmax_rows: mask of length " + std::to_string(column_mask.size()) +
                       " for " + std::to_string(m) + " columns");
    }
    if (std::none_of(column_mask.begin(), column_mask.end(), [](auto v) { return v != 0; })) {
      throw InvalidArgument("softmax_rows: every column is masked");
    }
  }
  auto allowed = [&](std::size_t j) { return column_mask.empty() || column_mask[j] != 0; };
  const auto& in = x.node()->value;
  std::vector<Real> out(in.size(), Real{0});
  for (std::size_t r = 0; r < n; ++r) {
    const Real* row = in.data() + r * m;
    Real* dst = out.data() + r * m;
    Real peak = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      if (allowed(j)) peak = std::max(peak, row[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!allowed(j)) continue;
      const double e = std::exp(static_cast<double>(row[j] - peak));
      dst[j] = static_cast<Real>(e);
      total += e;
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (allowed(j)) dst[j] = static_cast<Real>(dst[j] / total);
    }
  }
  return make_result(x.shape(), std::move(out), {x.node()}, [n, m](detail::Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t r = 0; r < n; ++r) {
      const Real* y = self.value.data() + r * m;
      const Real* dy = self.grad.data() + r * m;
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += static_cast<double>(dy[j]) * y[j];
      for (std::size_t j = 0; j < m; ++j) {
        g[r * m + j] += static_cast<Real>(y[j] * (dy[j] - dot));
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.cols(), n = x.rows();
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm: width " + std::to_string(d) + " with gain " +
                     to_string(gain.shape()) + " and bias " + to_string(bias.shape()));
  }
  const auto& in = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<Real> out(in.size());
  std::vector<Real> normalized(in.size());
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const Real* row = in.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (row[j] - mean) * inv_std[r];
      normalized[r * d + j] = static_cast<Real>(xhat);
      out[r * d + j] = static_cast<Real>(xhat * gv[j] + bv[j]);
    }
  }
  return make_result(
      x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
      [n, d, normalized = std::move(normalized), inv_std = std::move(inv_std)](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        for (std::size_t r = 0; r < n; ++r) {
          const Real* dy = self.grad.data() + r * d;
          const Real* xhat = normalized.data() + r * d;
          if (pg.requires_grad || pb.requires_grad) {
            auto& gg = grad_of(pg);
            auto& gb = grad_of(pb);
            for (std::size_t j = 0; j < d; ++j) {
              gg[j] += dy[j] * xhat[j];
              gb[j] += dy[j];
            }
          }
          if (px.requires_grad) {
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxhat = static_cast<double>(dy[j]) * pg.value[j];
              mean_dxhat += dxhat;
              mean_dxhat_xhat += dxhat * xhat[j];
            }
            mean_dxhat /= static_cast<double>(d);
            mean_dxhat_xhat /= static_cast<double>(d);
            auto& gx = grad_of(px);
            for (std::size_t j = 0; j < d; ++j) {
              const double dxhat = static_cast<double>(dy[j]) * pg.value[j];
              gx[r * d + j] += static_cast<Real>(
                  inv_std[r] * (dxhat - mean_dxhat - xhat[j] * mean_dxhat_xhat));
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_2d(table, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw ShapeError("embedding: empty id list");
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw InvalidArgument("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                            std::to_string(vocab) + " rows");
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  (void)d;
  return gather_rows(table, rows);
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.cols(), n = x.rows();
  if (rows.empty()) throw ShapeError("gather_rows: empty row list");
  std::vector<Real> out(rows.size() * d);
  const auto& in = x.node()->value;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " of " + std::to_string(n));
    }
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<std::size_t> index(rows.begin(), rows.end());
  return make_result({rows.size(), d}, std::move(out), {x.node()},
                     [d, index = std::move(index)](detail::Node& self) {
                       auto& g = grad_of(*self.parents[0]);
                       for (std::size_t i = 0; i < index.size(); ++i) {
                         for (std::size_t j = 0; j < d; ++j) g[index[i] * d + j] += self.grad[i * d + j];
                       }
                     });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_cols");
  const std::size_t n = x.dim(0), m = x.dim(1);
  if (count == 0 || start + count > m) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") of " + std::to_string(m) + " columns");
  }
  std::vector<Real> out(n * count);
  const auto& in = x.node()->value;
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(r * m + start), count,
                out.begin() + static_cast<std::ptrdiff_t>(r * count));
  }
  return make_result({n, count}, std::move(out), {x.node()}, [n, m, start, count](detail::Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < count; ++j) g[r * m + start + j] += self.grad[r * count + j];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.dim(0) != n) throw ShapeError("concat_cols: row count mismatch " + to_string(p.shape()));
    widths.push_back(p.dim(1));
    total += p.dim(1);
    parents.push_back(p.node());
  }
  std::vector<Real> out(n * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    const auto& in = p.node()->value;
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    }
    offset += w;
  }
  return make_result({n, total}, std::move(out), std::move(parents),
                     [n, total, widths = std::move(widths)](detail::Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         const std::size_t w = widths[k];
                         if (self.parents[k]->requires_grad) {
                           auto& g = grad_of(*self.parents[k]);
                           for (std::size_t r = 0; r < n; ++r) {
                             for (std::size_t j = 0; j < w; ++j) g[r * w + j] += self.grad[r * total + off + j];
                           }
                         }
                         off += w;
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, int ignore_index,
                     double normalizer) {
  require_2d(logits, "cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  std::size_t supervised = 0;
  for (auto l : labels) {
    if (l == ignore_index) continue;
    if (l < 0 || static_cast<std::size_t>(l) >= c) {
      throw InvalidArgument("cross_entropy: label " + std::to_string(l) + " outside " +
                            std::to_string(c) + " classes");
    }
    ++supervised;
  }
  if (supervised == 0) throw InvalidArgument("cross_entropy: no supervised positions");
  const double denom = normalizer > 0.0 ? normalizer : static_cast<double>(supervised);
  const auto& z = logits.node()->value;
  std::vector<Real> probs(n * c, Real{0});
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] == ignore_index) continue;
    const Real* row = z.data() + r * c;
    const double peak = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - peak);
    const double log_z = peak + std::log(s);
    total += log_z - row[labels[r]];
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = static_cast<Real>(std::exp(row[j] - log_z));
  }
  std::vector<int> label_copy(labels.begin(), labels.end());
  return make_result({1}, {static_cast<Real>(total / denom)}, {logits.node()},
                     [n, c, denom, ignore_index, probs = std::move(probs),
                      label_copy = std::move(label_copy)](detail::Node& self) {
                       auto& g = grad_of(*self.parents[0]);
                       const double upstream = self.grad[0] / denom;
                       for (std::size_t r = 0; r < n; ++r) {
                         if (label_copy[r] == ignore_index) continue;
                         for (std::size_t j = 0; j < c; ++j) {
                           double d = probs[r * c + j];
                           if (static_cast<int>(j) == label_copy[r]) d -= 1.0;
                           g[r * c + j] += static_cast<Real>(upstream * d);
                         }
                       }
                     });
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
  }
  const NodePtr& root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  // Holding shared pointers keeps every node alive until the graph is released.
  std::vector<NodePtr> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack{{root, 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr parent = node->parents[next++];
      if (parent->requires_grad && visited.insert(parent.get()).second) {
        stack.emplace_back(std::move(parent), 0);
      }
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }

  grad_of(*root)[0] += Real{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& node = *it;
    if (node->backward) node->backward(*node);
  }
  for (auto& node : order) {
    if (!node->backward) continue;
    node->backward = nullptr;
    node->parents.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

}  // namespace gpcrbert::tensor
