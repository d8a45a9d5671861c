// Built against the double-precision library: every op's backward closure is
// compared with central differences at tight tolerance.
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "gpcrbert/gradcheck.hpp"
#include "gpcrbert/tensor.hpp"

using namespace gpcrbert;
using namespace gpcrbert::tensor;

static_assert(std::is_same_v<Real, double>);

namespace {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

Tensor rand_t(std::mt19937_64& rng, Shape s) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(element_count(s));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(s), std::move(v), true);
}

// Max over inputs of |analytic - numeric| / max(1, |numeric|).
double max_error(const Fn& f, std::vector<Tensor> inputs) {
  for (auto& t : inputs) t.zero_grad();
  backward(f(inputs));
  double worst = 0;
  const double h = 1e-6;
  for (auto& t : inputs) {
    auto data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      double plus, minus;
      {
        NoGradGuard g;
        data[i] = orig + h;
        plus = f(inputs).item();
        data[i] = orig - h;
        minus = f(inputs).item();
        data[i] = orig;
      }
      const double numeric = (plus - minus) / (2 * h);
      worst = std::max(worst, std::abs(t.grad()[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

// Random weights give a scalar loss that exercises every output element.
Tensor weigh(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = rand_t(rng, y.shape());
  w.set_requires_grad(false);
  return sum(mul(y, w));
}

struct OpCase {
  const char* name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> make;
  Fn f;
};

std::vector<OpCase> op_cases() {
  return {
      {"matmul", [](auto& r) { return std::vector{rand_t(r, {3, 4}), rand_t(r, {4, 2})}; },
       [](auto& in) { return weigh(matmul(in[0], in[1]), 1); }},
      {"matmul_nt", [](auto& r) { return std::vector{rand_t(r, {3, 4}), rand_t(r, {5, 4})}; },
       [](auto& in) { return weigh(matmul_nt(in[0], in[1]), 2); }},
      {"linear", [](auto& r) { return std::vector{rand_t(r, {3, 4}), rand_t(r, {4, 2}), rand_t(r, {2})}; },
       [](auto& in) { return weigh(linear(in[0], in[1], in[2]), 3); }},
      {"add_mul_scale", [](auto& r) { return std::vector{rand_t(r, {2, 3}), rand_t(r, {2, 3})}; },
       [](auto& in) { return weigh(scale(mul(add(in[0], in[1]), in[0]), 0.7), 4); }},
      {"relu", [](auto& r) { return std::vector{rand_t(r, {4, 5})}; },
       [](auto& in) { return weigh(relu(in[0]), 5); }},
      {"softmax_masked",
       [](auto& r) { return std::vector{rand_t(r, {3, 5})}; },
       [](auto& in) {
         static const std::vector<std::uint8_t> mask{1, 1, 0, 1, 0};
         return weigh(softmax_rows(in[0], mask), 6);
       }},
      {"layer_norm", [](auto& r) { return std::vector{rand_t(r, {3, 6}), rand_t(r, {6}), rand_t(r, {6})}; },
       [](auto& in) { return weigh(layer_norm(in[0], in[1], in[2], 1e-12), 7); }},
      {"embedding",
       [](auto& r) { return std::vector{rand_t(r, {5, 3})}; },
       [](auto& in) {
         static const std::vector<int> ids{4, 0, 4, 2};
         return weigh(embedding(in[0], ids), 8);
       }},
      {"gather_slice_concat", [](auto& r) { return std::vector{rand_t(r, {4, 6})}; },
       [](auto& in) {
         static const std::vector<std::size_t> rows{3, 1, 3};
         auto g = gather_rows(in[0], rows);
         return weigh(concat_cols({slice_cols(g, 4, 2), slice_cols(g, 0, 3)}), 9);
       }},
      {"cross_entropy", [](auto& r) { return std::vector{rand_t(r, {4, 7})}; },
       [](auto& in) {
         static const std::vector<int> labels{3, -100, 0, 6};
         return cross_entropy(in[0], labels, -100, 5.0);
       }},
  };
}

}  // namespace

TEST(GradcheckF64, EveryOpMatchesFiniteDifferences) {
  // 10 ops x 12 random draws = 120 cases.
  for (const auto& op : op_cases()) {
    for (std::uint64_t s = 0; s < 12; ++s) {
      std::mt19937_64 rng(100 + s);
      EXPECT_LT(max_error(op.f, op.make(rng)), 1e-6) << op.name << " seed " << s;
    }
  }
}

TEST(GradcheckF64, TinyModelPassesTightTolerance) {
  auto report = gradcheck::run(model::ModelConfig::tiny(), {});
  EXPECT_DOUBLE_EQ(report.tolerance, 1e-4);
  EXPECT_LT(report.max_rel_error, 1e-4);
  EXPECT_TRUE(report.passed);
}
