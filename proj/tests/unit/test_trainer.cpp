#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gpcrbert/error.hpp"
#include "gpcrbert/trainer.hpp"
#include "helpers.hpp"

using namespace gpcrbert;
using namespace gpcrbert::trainer;

namespace {

model::ModelConfig small() {
  auto c = model::ModelConfig::tiny();
  c.max_len = 40;
  return c;
}

std::vector<tokenizer::MaskedExample> toy_examples(std::size_t n) {
  corpus::SyntheticCorpusOptions opt;
  opt.n_records = n;
  opt.min_length = 30;
  opt.max_length = 38;
  auto records = corpus::synthetic_motif_corpus(opt);
  return tokenizer::encode_all(corpus::build_motif_dataset(records, corpus::MotifKind::kNPxxY), {.max_len = 40});
}

TrainConfig quick() {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 4;
  c.lr = 1e-3;
  c.n_runs = 2;
  return c;
}

}  // namespace

TEST(Trainer, AdamMatchesReferenceRecurrence) {
  testutil::for_all(100, 51, [](std::mt19937_64& rng, std::size_t) {
    const auto n = testutil::uniform(rng, 1, 6);
    const double lr = testutil::uniform_real(rng, 1e-4, 1e-1);
    AdamHyper h{testutil::uniform_real(rng, 0.5, 0.95), testutil::uniform_real(rng, 0.9, 0.9999), 1e-8};
    std::vector<Real> p(n);
    std::vector<double> ref(n), m(n, 0), v(n, 0);
    for (std::size_t i = 0; i < n; ++i) ref[i] = p[i] = static_cast<Real>(testutil::uniform_real(rng, -1, 1));
    AdamState state;
    for (int t = 1; t <= 5; ++t) {
      std::vector<Real> g(n);
      for (auto& x : g) x = static_cast<Real>(testutil::uniform_real(rng, -1, 1));
      adam_step(p, g, state, lr, h);
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = h.beta1 * m[i] + (1 - h.beta1) * g[i];
        v[i] = h.beta2 * v[i] + (1 - h.beta2) * g[i] * g[i];
        const double mh = m[i] / (1 - std::pow(h.beta1, t)), vh = v[i] / (1 - std::pow(h.beta2, t));
        ref[i] -= lr * mh / (std::sqrt(vh) + h.eps);
      }
    }
    EXPECT_EQ(state.t, 5u);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(p[i], ref[i], 1e-5);
  });
}

TEST(Trainer, FirstAdamStepMovesByLr) {
  // With bias correction the first step is lr * g / (|g| + eps).
  std::vector<Real> p{1.0f, -1.0f};
  std::vector<Real> g{0.3f, -2.0f};
  AdamState s;
  adam_step(p, g, s, 0.01);
  EXPECT_NEAR(p[0], 0.99, 1e-6);
  EXPECT_NEAR(p[1], -0.99, 1e-6);
  std::vector<Real> short_g{0.1f};
  EXPECT_THROW(adam_step(p, short_g, s, 0.01), ShapeError);
}

TEST(Trainer, AdamObjectZeroesGradients) {
  tensor::Tensor w({2}, {1, 1}, true);
  Adam opt({w}, {});
  tensor::backward(tensor::sum(tensor::mul(w, w)));
  opt.step(0.1);
  EXPECT_EQ(opt.steps(), 1u);
  EXPECT_NEAR(w.data()[0], 0.9, 1e-6);
  EXPECT_EQ(w.grad()[0], 0);
}

TEST(Trainer, SchedulerDecaysAtPatienceBoundaries) {
  PlateauScheduler s(1e-4, 0.2, 3, 1e-4);
  std::vector<double> lrs;
  for (int i = 0; i < 10; ++i) lrs.push_back(s.step(1.0));
  // Epoch 1 sets the best; epochs 2-4 stagnate -> decay at 4, then 7, then 10.
  const std::vector<double> expected{1e-4, 1e-4, 1e-4, 2e-5, 2e-5, 2e-5, 4e-6, 4e-6, 4e-6, 8e-7};
  for (std::size_t i = 0; i < lrs.size(); ++i) EXPECT_NEAR(lrs[i], expected[i], 1e-18) << i;
}

TEST(Trainer, SchedulerThresholdAndReset) {
  PlateauScheduler s(1.0, 0.5, 2, 0.1);
  s.step(1.0);
  s.step(0.95);  // not better by 0.1
  EXPECT_EQ(s.stagnant_epochs(), 1u);
  s.step(0.5);   // improvement resets
  EXPECT_EQ(s.stagnant_epochs(), 0u);
  EXPECT_EQ(s.lr(), 1.0);
  s.step(0.45);
  EXPECT_EQ(s.step(0.45), 0.5);
  EXPECT_THROW(PlateauScheduler(1.0, 1.0, 2, 0.1), InvalidArgument);
}

TEST(Trainer, SchedulerProperty) {
  // Decays happen exactly when the counter reaches patience; the lr is always
  // lr0 * factor^decays.
  testutil::for_all(200, 52, [](std::mt19937_64& rng, std::size_t) {
    const auto patience = testutil::uniform(rng, 1, 5);
    PlateauScheduler s(1.0, 0.2, patience, 1e-4);
    double best = std::numeric_limits<double>::infinity();
    std::size_t stagnant = 0, decays = 0;
    for (int i = 0; i < 40; ++i) {
      const double base = std::isinf(best) ? 1.0 : best;
      const double loss = testutil::uniform(rng, 0, 3) == 0 ? base - 0.5 : base + testutil::uniform_real(rng, -1e-5, 1);
      if (loss < best - 1e-4) {
        best = loss;
        stagnant = 0;
      } else if (++stagnant >= patience) {
        ++decays;
        stagnant = 0;
      }
      EXPECT_DOUBLE_EQ(s.step(loss), std::pow(0.2, static_cast<double>(decays)));
    }
  });
}

TEST(Trainer, ConfigKeyValues) {
  TrainConfig c;
  c.lr = 3e-4;
  c.monitor = Monitor::kTestLoss;
  auto back = TrainConfig::from_key_values(c.to_key_values());
  EXPECT_EQ(back.lr, 3e-4);
  EXPECT_EQ(back.monitor, Monitor::kTestLoss);
  EXPECT_THROW(TrainConfig::from_key_values({{"learning_rate", "1"}}), ParseError);
  EXPECT_THROW(TrainConfig::from_key_values({{"factor", "1.5"}}), InvalidArgument);
}

TEST(Trainer, MeanStd) {
  std::vector<double> v{1, 2, 3, 4};
  auto m = mean_std(v);
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.std, std::sqrt(5.0 / 3.0), 1e-12);
  std::vector<double> one{7};
  EXPECT_EQ(mean_std(one).std, 0.0);
}

TEST(Trainer, TrainingIsDeterministic) {
  auto ex = toy_examples(12);
  auto a = train(small(), quick(), ex);
  auto b = train(small(), quick(), ex);
  std::ostringstream ca, cb;
  write_metrics_csv(ca, a);
  write_metrics_csv(cb, b);
  EXPECT_EQ(ca.str(), cb.str());
  ASSERT_EQ(a.runs.size(), 2u);
  EXPECT_EQ(a.runs[1].seed, 43u);
  EXPECT_EQ(a.runs[1].history.size(), 3u);
  EXPECT_EQ(ca.str().substr(0, 32), "run,epoch,train_loss,train_acc\n0");
}

TEST(Trainer, DifferentSeedsDiffer) {
  auto ex = toy_examples(12);
  auto c = quick();
  c.n_runs = 1;
  auto a = train(small(), c, ex);
  c.seed = 7;
  auto b = train(small(), c, ex);
  EXPECT_NE(a.runs[0].history[0].train_loss, b.runs[0].history[0].train_loss);
}

TEST(Trainer, LossDecreasesOnRepeatedData) {
  auto ex = toy_examples(8);
  model::Model m(small(), 1);
  auto c = quick();
  c.epochs = 25;
  auto before = evaluate(m, ex).loss;
  auto metrics = train_run(m, c, ex, ex, 1);
  EXPECT_LT(metrics.train.loss, before);
  EXPECT_EQ(metrics.history.back().epoch, 25u);
}

TEST(Trainer, TestExamplesNeverContributeGradients) {
  auto ex = toy_examples(12);
  std::vector<tokenizer::MaskedExample> train_set(ex.begin(), ex.begin() + 8);
  std::vector<tokenizer::MaskedExample> test_a(ex.begin() + 8, ex.end()), test_b(ex.begin(), ex.begin() + 2);
  auto before = test_a;
  model::Model a(small(), 3), b(small(), 3);
  train_run(a, quick(), train_set, test_a, 5);
  train_run(b, quick(), train_set, test_b, 5);
  auto pa = a.trainable(), pb = b.trainable();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    auto da = pa[i].second.data(), db = pb[i].second.data();
    ASSERT_TRUE(std::equal(da.begin(), da.end(), db.begin(), db.end())) << pa[i].first;
  }
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(test_a[i].input_ids, before[i].input_ids);
    EXPECT_EQ(test_a[i].label_ids, before[i].label_ids);
  }
}

TEST(Trainer, ZeroEpochsOnlyEvaluates) {
  auto ex = toy_examples(8);
  model::Model m(small(), 1);
  auto c = quick();
  c.epochs = 0;
  auto metrics = train_run(m, c, ex, ex, 1);
  EXPECT_TRUE(metrics.history.empty());
  EXPECT_NEAR(metrics.train.loss, std::log(30.0), 0.1);
  EXPECT_EQ(metrics.train.n_tokens, 16u);
}

TEST(Trainer, NanLossRaisesDiverged) {
  auto ex = toy_examples(8);
  model::Model m(small(), 1);
  m.parameters().head.b3.data()[0] = std::numeric_limits<Real>::quiet_NaN();
  EXPECT_THROW(train_run(m, quick(), ex, ex, 1), TrainingDiverged);
}

TEST(Trainer, StopPredicateEndsRunEarly) {
  auto ex = toy_examples(8);
  model::Model m(small(), 1);
  auto c = quick();
  c.epochs = 10;
  auto metrics = train_run(m, c, ex, ex, 1, {}, [](const model::Model&, const EpochMetrics& e) { return e.epoch == 2; });
  EXPECT_EQ(metrics.history.size(), 2u);
}

TEST(Trainer, EmptySplitsRejected) {
  model::Model m(small(), 1);
  EXPECT_THROW(train_run(m, quick(), {}, toy_examples(4), 1), InvalidArgument);
  EXPECT_THROW(evaluate(m, {}), InvalidArgument);
}

TEST(Trainer, SummaryFormat) {
  TrainResult r;
  r.train_loss = {0.5, 0.25};
  std::ostringstream out;
  write_summary(out, r);
  EXPECT_EQ(out.str().substr(0, 36), "train_loss {mean: 0.5, std: 0.25}\ntr");
}
