#pragma once

// Central finite-difference check of the analytic gradients of the full
// encoder + head masked cross-entropy loss.

#include <cstdint>
#include <string>
#include <vector>

#include "gpcrbert/model.hpp"

namespace gpcrbert::gradcheck {

struct Options {
  // Step h of (L(p + h) - L(p - h)) / 2h. Zero picks 1e-3 in single and 1e-5
  // in double precision.
  double step = 0.0;
  // Zero picks 1e-2 in single and 1e-4 in double precision.
  double tolerance = 0.0;
  std::uint64_t seed = 1;
  // Checks at most this many entries per tensor (0 = all).
  std::size_t max_entries_per_tensor = 0;
  std::size_t n_masked = 3;
  // Replace the model's small initial weights with well-scaled ones before
  // checking, so attention is far from uniform and ReLUs are away from kinks.
  bool probe_init = true;
};

struct ParameterReport {
  std::string name;
  std::size_t checked = 0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double rel_error = 0.0;
};

struct Report {
  std::vector<ParameterReport> parameters;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  double step = 0.0;
  double floor = 0.0;
  bool passed = true;
};

// Relative error of one tensor's gradient:
//   ||a - n||_2 / max(||a||_2 + ||n||_2, floor)
double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                      double floor);

// The floor used by run(): floor_fraction times the norm of the whole
// analytic gradient. A tensor whose exact gradient vanishes (the attention key
// bias, which softmax ignores) is then judged against the gradient scale of
// the model instead of dividing rounding noise by itself.
inline constexpr double kFloorFraction = 0.1;

// Weights ~ N(0, 1 / fan_in), embeddings ~ N(0, 1), biases ~ N(0, 0.1),
// gains ~ 1 + N(0, 0.1).
void probe_initialize(model::Parameters& params, std::uint64_t seed);

// Random example of config.max_len tokens with `n_masked` supervised
// positions, evaluated in eval mode (no dropout).
Report run(const model::ModelConfig& config, const Options& options = {});

// Same check against an existing model and example.
Report run(const model::Model& model, const tokenizer::MaskedExample& example, const Options& options);

}  // namespace gpcrbert::gradcheck
