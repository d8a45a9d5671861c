#pragma once

// Exact O(n^2) t-SNE.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gpcrbert::tsne {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data).subspan(r * cols, cols);
  }
};

struct TsneConfig {
  double perplexity = 15.0;
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
  double exaggeration = 12.0;
  std::size_t exaggeration_iterations = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  std::size_t momentum_switch = 250;
  std::size_t output_dim = 2;
  double entropy_tolerance = 1e-4;
  std::size_t max_search_iterations = 50;
  std::uint64_t seed = 0;

  void validate(std::size_t n_points) const;
};

Matrix squared_distances(const Matrix& x);

struct ConditionalAffinities {
  Matrix p;                       // row i holds p_{j|i}; diagonal is 0
  std::vector<double> beta;       // 1 / (2 sigma_i^2)
  std::vector<double> entropy;    // achieved row entropy in nats
  std::size_t worst_iterations = 0;
};

// Per-row bisection on beta until |H_i - log(perplexity)| < tolerance.
ConditionalAffinities conditional_affinities(const Matrix& sq_dist, double perplexity,
                                             double tolerance = 1e-4, std::size_t max_iterations = 50);

// (P + P^T) / 2n, which sums to 1.
Matrix joint_affinities(const Matrix& conditional);

// Student-t (one degree of freedom) affinities of an embedding, summing to 1.
Matrix student_t_affinities(const Matrix& y);

double kl_divergence(const Matrix& p, const Matrix& q);

struct TsneResult {
  Matrix coords;
  std::vector<double> kl;     // kl[0] at the initial embedding, kl[t] after step t
  std::vector<double> q_sum;  // sum of Q at every step, a normalization check
  ConditionalAffinities affinities;
};

TsneResult tsne(const Matrix& x, const TsneConfig& config);

// Fraction of points whose nearest class centroid in `coords` is their own class.
double nearest_centroid_purity(const Matrix& coords, std::span<const std::string> labels);

}  // namespace gpcrbert::tsne
