#pragma once

// Adam, reduce-on-plateau scheduling and the multi-run training loop.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "gpcrbert/error.hpp"
#include "gpcrbert/model.hpp"
#include "gpcrbert/text.hpp"
#include "gpcrbert/tokenizer.hpp"

namespace gpcrbert::trainer {

using tensor::Tensor;

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

enum class Monitor { kTrainLoss, kTestLoss };

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 8;
  std::size_t epochs = 30;
  double factor = 0.2;
  std::size_t patience = 3;
  double threshold = 1e-4;
  Monitor monitor = Monitor::kTrainLoss;
  double split_ratio = 0.75;
  std::uint64_t seed = 42;
  std::size_t n_runs = 3;

  void validate() const;
  text::KeyValues to_key_values() const;
  static TrainConfig from_key_values(const text::KeyValues& kv);
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t t = 0;
};

// One bias-corrected Adam update of `params` in place; advances state.t.
void adam_step(std::span<Real> params, std::span<const Real> grads, AdamState& state, double lr,
               const AdamHyper& hyper = {});

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamHyper hyper);
  // Applies one step from the accumulated gradients, then zeroes them.
  void step(double lr);
  void zero_grad();
  std::size_t steps() const { return states_.empty() ? 0 : states_.front().t; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
  AdamHyper hyper_;
};

// lr <- lr * factor once the monitored loss has failed to improve on its best
// value by at least `threshold` for `patience` consecutive epochs; the
// stagnation counter then restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, std::size_t patience, double threshold);
  double step(double loss);
  double lr() const { return lr_; }
  std::size_t stagnant_epochs() const { return stagnant_; }

 private:
  double lr_;
  double factor_;
  std::size_t patience_;
  double threshold_;
  double best_;
  std::size_t stagnant_ = 0;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t n_tokens = 0;
};

// Eval mode, no graph; loss and accuracy are weighted by supervised token.
EvalResult evaluate(const model::Model& model, const std::vector<tokenizer::MaskedExample>& examples);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double lr = 0.0;
};

struct RunMetrics {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  std::vector<EpochMetrics> history;
  EvalResult train;  // eval-mode metrics on the training split after the last epoch
  EvalResult test;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for a single run
};

MeanStd mean_std(std::span<const double> values);

struct TrainResult {
  std::vector<model::Model> models;  // one per run
  std::vector<RunMetrics> runs;
  MeanStd train_loss, train_accuracy, test_loss, test_accuracy;
};

using EpochCallback = std::function<void(const RunMetrics&, const EpochMetrics&)>;
// Checked after every epoch; returning true ends the run early.
using StopPredicate = std::function<bool(const model::Model&, const EpochMetrics&)>;

// Trains `model` in place for one run with the given seed driving batch order
// and dropout.
RunMetrics train_run(model::Model& model, const TrainConfig& config,
                     const std::vector<tokenizer::MaskedExample>& train_set,
                     const std::vector<tokenizer::MaskedExample>& test_set, std::uint64_t seed,
                     const EpochCallback& on_epoch = {}, const StopPredicate& stop = {});

// Splits `examples` once with config.seed, then runs config.n_runs
// independent trainings with seeds seed, seed + 1, ...
TrainResult train(const model::ModelConfig& model_config, const TrainConfig& config,
                  const std::vector<tokenizer::MaskedExample>& examples,
                  const EpochCallback& on_epoch = {});

TrainResult train(const model::ModelConfig& model_config, const TrainConfig& config,
                  const std::vector<tokenizer::MaskedExample>& train_set,
                  const std::vector<tokenizer::MaskedExample>& test_set,
                  const EpochCallback& on_epoch = {});

// `run,epoch,train_loss,train_acc`
void write_metrics_csv(std::ostream& out, const TrainResult& result);
// One `name {mean: x, std: y}` line per metric.
void write_summary(std::ostream& out, const TrainResult& result);

}  // namespace gpcrbert::trainer
