#include "gpcrbert/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "gpcrbert/error.hpp"

namespace gpcrbert::tsne {

void TsneConfig::validate(std::size_t n_points) const {
  if (n_points < 5) throw InvalidArgument("tsne: need at least 5 points, got " + std::to_string(n_points));
  if (!(perplexity > 0.0) || !(perplexity < static_cast<double>(n_points))) {
    throw InvalidArgument("tsne: perplexity must lie in (0, n_points)");
  }
  if (iterations < 250) throw InvalidArgument("tsne: iterations must be at least 250");
  if (!(learning_rate > 0.0)) throw InvalidArgument("tsne: learning rate must be positive");
  if (!(exaggeration >= 1.0)) throw InvalidArgument("tsne: exaggeration must be at least 1");
  if (output_dim == 0) throw InvalidArgument("tsne: output_dim must be positive");
  if (!(entropy_tolerance > 0.0) || max_search_iterations == 0) {
    throw InvalidArgument("tsne: bad bandwidth search settings");
  }
}

Matrix squared_distances(const Matrix& x) {
  Matrix d(x.rows, x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = i + 1; j < x.rows; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols; ++k) {
        const double diff = x(i, k) - x(j, k);
        s += diff * diff;
      }
      d(i, j) = s;
      d(j, i) = s;
    }
  }
  return d;
}

ConditionalAffinities conditional_affinities(const Matrix& sq_dist, double perplexity, double tolerance,
                                             std::size_t max_iterations) {
  const std::size_t n = sq_dist.rows;
  if (n < 2 || sq_dist.cols != n) throw ShapeError("conditional_affinities: need a square matrix with n >= 2");
  if (!(perplexity > 0.0) || !(perplexity < static_cast<double>(n))) {
    throw InvalidArgument("conditional_affinities: perplexity must lie in (0, n)");
  }
  const double target = std::log(perplexity);
  ConditionalAffinities out;
  out.p = Matrix(n, n);
  out.beta.assign(n, 1.0);
  out.entropy.assign(n, 0.0);
  std::vector<double> shifted(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Distances relative to the nearest neighbour keep exp() away from underflow.
    double nearest = std::numeric_limits<double>::infinity();
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      nearest = std::min(nearest, sq_dist(i, j));
      mean += sq_dist(i, j);
    }
    mean /= static_cast<double>(n - 1);
    for (std::size_t j = 0; j < n; ++j) shifted[j] = j == i ? 0.0 : sq_dist(i, j) - nearest;

    double beta = mean > nearest ? 1.0 / (mean - nearest) : 1.0;
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double h = 0.0, sum = 0.0;
    std::size_t it = 0;
    double used_beta = beta;
    for (; it < max_iterations; ++it) {
      used_beta = beta;
      sum = 0.0;
      double weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        w[j] = j == i ? 0.0 : std::exp(-beta * shifted[j]);
        sum += w[j];
        weighted += w[j] * shifted[j];
      }
      h = std::log(sum) + beta * weighted / sum;
      if (std::abs(h - target) < tolerance) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    out.worst_iterations = std::max(out.worst_iterations, std::min(it + 1, max_iterations));
    out.entropy[i] = h;
    out.beta[i] = used_beta;
    for (std::size_t j = 0; j < n; ++j) out.p(i, j) = w[j] / sum;
  }
  return out;
}

Matrix joint_affinities(const Matrix& conditional) {
  const std::size_t n = conditional.rows;
  Matrix p(n, n);
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) p(i, j) = (conditional(i, j) + conditional(j, i)) * scale;
  }
  return p;
}

namespace {

// Unnormalized kernel 1 / (1 + |y_i - y_j|^2); returns the total.
double student_t_kernel(const Matrix& y, Matrix& num) {
  const std::size_t n = y.rows;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num(i, i) = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < y.cols; ++k) {
        const double diff = y(i, k) - y(j, k);
        s += diff * diff;
      }
      const double v = 1.0 / (1.0 + s);
      num(i, j) = v;
      num(j, i) = v;
      total += 2.0 * v;
    }
  }
  return total;
}

constexpr double kMinProb = 1e-12;

}  // namespace

Matrix student_t_affinities(const Matrix& y) {
  Matrix q(y.rows, y.rows);
  const double total = student_t_kernel(y, q);
  for (auto& v : q.data) v /= total;
  return q;
}

double kl_divergence(const Matrix& p, const Matrix& q) {
  if (p.rows != q.rows || p.cols != q.cols) throw ShapeError("kl_divergence: shape mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    if (p.data[i] > 0.0) kl += p.data[i] * std::log(p.data[i] / std::max(q.data[i], kMinProb));
  }
  return kl;
}

TsneResult tsne(const Matrix& x, const TsneConfig& config) {
  const std::size_t n = x.rows;
  config.validate(n);
  const std::size_t dim = config.output_dim;
  TsneResult result;
  result.affinities = conditional_affinities(squared_distances(x), config.perplexity, config.entropy_tolerance,
                                             config.max_search_iterations);
  const Matrix p = joint_affinities(result.affinities.p);

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1e-4);
  Matrix y(n, dim);
  for (auto& v : y.data) v = normal(rng);
  Matrix update(n, dim), gains(n, dim), grad(n, dim), num(n, n);
  std::fill(gains.data.begin(), gains.data.end(), 1.0);

  auto record = [&](double total) {
    double kl = 0.0, qsum = 0.0;
    for (std::size_t i = 0; i < n * n; ++i) {
      const double q = num.data[i] / total;
      qsum += q;
      if (p.data[i] > 0.0) kl += p.data[i] * std::log(p.data[i] / std::max(q, kMinProb));
    }
    result.kl.push_back(kl);
    result.q_sum.push_back(qsum);
  };
  record(student_t_kernel(y, num));

  for (std::size_t iter = 0; iter < config.iterations; ++iter) {
    const double exaggeration = iter < config.exaggeration_iterations ? config.exaggeration : 1.0;
    const double momentum = iter < config.momentum_switch ? config.initial_momentum : config.final_momentum;
    const double total = student_t_kernel(y, num);
    std::fill(grad.data.begin(), grad.data.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double mult = (exaggeration * p(i, j) - num(i, j) / total) * num(i, j);
        for (std::size_t k = 0; k < dim; ++k) grad(i, k) += 4.0 * mult * (y(i, k) - y(j, k));
      }
    }
    for (std::size_t i = 0; i < n * dim; ++i) {
      const bool same_sign = (grad.data[i] > 0.0) == (update.data[i] > 0.0);
      gains.data[i] = same_sign ? std::max(gains.data[i] * 0.8, 0.01) : gains.data[i] + 0.2;
      update.data[i] = momentum * update.data[i] - config.learning_rate * gains.data[i] * grad.data[i];
      y.data[i] += update.data[i];
    }
    for (std::size_t k = 0; k < dim; ++k) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += y(i, k);
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) y(i, k) -= mean;
    }
    record(student_t_kernel(y, num));
  }
  result.coords = std::move(y);
  return result;
}

double nearest_centroid_purity(const Matrix& coords, std::span<const std::string> labels) {
  if (labels.size() != coords.rows || coords.rows == 0) {
    throw ShapeError("nearest_centroid_purity: one label per point required");
  }
  std::map<std::string, std::pair<std::vector<double>, std::size_t>> centroids;
  for (std::size_t i = 0; i < coords.rows; ++i) {
    auto& [sum, count] = centroids[labels[i]];
    sum.resize(coords.cols, 0.0);
    for (std::size_t k = 0; k < coords.cols; ++k) sum[k] += coords(i, k);
    ++count;
  }
  for (auto& [label, c] : centroids) {
    for (auto& v : c.first) v /= static_cast<double>(c.second);
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < coords.rows; ++i) {
    const std::string* best = nullptr;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& [label, c] : centroids) {
      double d = 0.0;
      for (std::size_t k = 0; k < coords.cols; ++k) d += (coords(i, k) - c.first[k]) * (coords(i, k) - c.first[k]);
      if (d < best_d) {
        best_d = d;
        best = &label;
      }
    }
    if (*best == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(coords.rows);
}

}  // namespace gpcrbert::tsne
