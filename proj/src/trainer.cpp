#include "gpcrbert/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>

#include "gpcrbert/corpus.hpp"
#include "gpcrbert/error.hpp"

namespace gpcrbert::trainer {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw InvalidArgument("train config: " + msg); };
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(eps > 0.0)) fail("eps must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(factor > 0.0 && factor < 1.0)) fail("factor must lie in (0, 1)");
  if (!(threshold >= 0.0)) fail("threshold must be non-negative");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) fail("split_ratio must lie in (0, 1)");
  if (n_runs == 0) fail("n_runs must be positive");
}

text::KeyValues TrainConfig::to_key_values() const {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return {{"lr", num(lr)},
          {"beta1", num(beta1)},
          {"beta2", num(beta2)},
          {"eps", num(eps)},
          {"batch_size", std::to_string(batch_size)},
          {"epochs", std::to_string(epochs)},
          {"factor", num(factor)},
          {"patience", std::to_string(patience)},
          {"threshold", num(threshold)},
          {"monitor", monitor == Monitor::kTrainLoss ? "train" : "test"},
          {"split_ratio", num(split_ratio)},
          {"seed", std::to_string(seed)},
          {"n_runs", std::to_string(n_runs)}};
}

TrainConfig TrainConfig::from_key_values(const text::KeyValues& kv) {
  TrainConfig c;
  for (const auto& [key, value] : kv) {
    const std::string what = "train config key '" + key + "'";
    if (key == "lr") {
      c.lr = text::parse_double(value, what);
    } else if (key == "beta1") {
      c.beta1 = text::parse_double(value, what);
    } else if (key == "beta2") {
      c.beta2 = text::parse_double(value, what);
    } else if (key == "eps") {
      c.eps = text::parse_double(value, what);
    } else if (key == "batch_size") {
      c.batch_size = text::parse_size(value, what);
    } else if (key == "epochs") {
      c.epochs = text::parse_size(value, what);
    } else if (key == "factor") {
      c.factor = text::parse_double(value, what);
    } else if (key == "patience") {
      c.patience = text::parse_size(value, what);
    } else if (key == "threshold") {
      c.threshold = text::parse_double(value, what);
    } else if (key == "monitor") {
      if (value == "train") {
        c.monitor = Monitor::kTrainLoss;
      } else if (value == "test") {
        c.monitor = Monitor::kTestLoss;
      } else {
        throw ParseError(what + ": expected train or test");
      }
    } else if (key == "split_ratio") {
      c.split_ratio = text::parse_double(value, what);
    } else if (key == "seed") {
      c.seed = static_cast<std::uint64_t>(text::parse_size(value, what));
    } else if (key == "n_runs") {
      c.n_runs = text::parse_size(value, what);
    } else {
      throw ParseError("unknown train config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

void adam_step(std::span<Real> params, std::span<const Real> grads, AdamState& state, double lr,
               const AdamHyper& hyper) {
  if (grads.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  if (state.m.empty() && state.v.empty() && state.t == 0) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state does not match parameter size");
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] = static_cast<Real>(params[i] - lr * m_hat / (std::sqrt(v_hat) + hyper.eps));
  }
}

Adam::Adam(std::vector<Tensor> params, AdamHyper hyper)
    : params_(std::move(params)), states_(params_.size()), hyper_(hyper) {}

void Adam::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto grad = params_[i].grad();
    adam_step(params_[i].data(), grad, states_[i], lr, hyper_);
  }
  zero_grad();
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

PlateauScheduler::PlateauScheduler(double lr, double factor, std::size_t patience, double threshold)
    : lr_(lr), factor_(factor), patience_(patience), threshold_(threshold),
      best_(std::numeric_limits<double>::infinity()) {
  if (!(factor > 0.0 && factor < 1.0)) throw InvalidArgument("scheduler factor must lie in (0, 1)");
}

double PlateauScheduler::step(double loss) {
  if (loss < best_ - threshold_) {
    best_ = loss;
    stagnant_ = 0;
    return lr_;
  }
  ++stagnant_;
  if (stagnant_ >= patience_) {
    lr_ *= factor_;
    stagnant_ = 0;
  }
  return lr_;
}

EvalResult evaluate(const model::Model& model, const std::vector<tokenizer::MaskedExample>& examples) {
  if (examples.empty()) throw InvalidArgument("evaluate: empty dataset");
  tensor::NoGradGuard no_grad;
  tensor::Rng unused(0);
  double loss_sum = 0.0;
  model::TokenTally tally;
  for (const auto& ex : examples) {
    auto out = model.masked_logits(ex, false, unused);
    auto loss = model::masked_cross_entropy(out.logits, out.labels);
    loss_sum += static_cast<double>(loss.loss.item()) * static_cast<double>(loss.n_supervised);
    auto t = model::count_correct(out.logits, out.labels);
    tally.correct += t.correct;
    tally.total += t.total;
  }
  EvalResult r;
  r.n_tokens = tally.total;
  r.loss = loss_sum / static_cast<double>(tally.total);
  r.accuracy = static_cast<double>(tally.correct) / static_cast<double>(tally.total);
  return r;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

RunMetrics train_run(model::Model& model, const TrainConfig& config,
                     const std::vector<tokenizer::MaskedExample>& train_set,
                     const std::vector<tokenizer::MaskedExample>& test_set, std::uint64_t seed,
                     const EpochCallback& on_epoch, const StopPredicate& stop) {
  config.validate();
  if (train_set.empty() || test_set.empty()) throw InvalidArgument("train: empty train or test split");
  RunMetrics metrics;
  metrics.seed = seed;

  std::vector<Tensor> trainable;
  for (auto& [name, t] : model.trainable()) trainable.push_back(t);
  Adam adam(trainable, {config.beta1, config.beta2, config.eps});
  PlateauScheduler scheduler(config.lr, config.factor, config.patience, config.threshold);
  tensor::Rng dropout_rng(seed);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = scheduler.lr();
    auto order = corpus::seeded_permutation(train_set.size(), seed * 1000003ULL + epoch);
    double loss_sum = 0.0;
    model::TokenTally tally;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::size_t batch_tokens = 0;
      for (std::size_t b = start; b < end; ++b) batch_tokens += train_set[order[b]].mask_positions.size();
      adam.zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        auto out = model.masked_logits(train_set[order[b]], true, dropout_rng);
        auto loss = model::masked_cross_entropy(out.logits, out.labels, static_cast<double>(batch_tokens));
        loss_sum += static_cast<double>(loss.loss.item()) * static_cast<double>(batch_tokens);
        auto t = model::count_correct(out.logits, out.labels);
        tally.correct += t.correct;
        tally.total += t.total;
        tensor::backward(loss.loss);
      }
      adam.step(lr);
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    em.train_loss = loss_sum / static_cast<double>(tally.total);
    em.train_accuracy = static_cast<double>(tally.correct) / static_cast<double>(tally.total);
    if (!std::isfinite(em.train_loss)) {
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + " (seed " +
                             std::to_string(seed) + ")");
    }
    metrics.history.push_back(em);
    const double monitored =
        config.monitor == Monitor::kTrainLoss ? em.train_loss : evaluate(model, test_set).loss;
    scheduler.step(monitored);
    if (on_epoch) on_epoch(metrics, em);
    if (stop && stop(model, em)) break;
  }
  metrics.train = evaluate(model, train_set);
  metrics.test = evaluate(model, test_set);
  return metrics;
}

TrainResult train(const model::ModelConfig& model_config, const TrainConfig& config,
                  const std::vector<tokenizer::MaskedExample>& train_set,
                  const std::vector<tokenizer::MaskedExample>& test_set, const EpochCallback& on_epoch) {
  config.validate();
  model_config.validate();
  TrainResult result;
  std::vector<double> train_loss, train_acc, test_loss, test_acc;
  for (std::size_t r = 0; r < config.n_runs; ++r) {
    const std::uint64_t seed = config.seed + r;
    model::Model model(model_config, seed);
    auto metrics = train_run(model, config, train_set, test_set, seed, on_epoch ? [&](const RunMetrics& m, const EpochMetrics& e) {
      RunMetrics tagged = m;
      tagged.run = r;
      on_epoch(tagged, e);
    } : EpochCallback{});
    metrics.run = r;
    train_loss.push_back(metrics.train.loss);
    train_acc.push_back(metrics.train.accuracy);
    test_loss.push_back(metrics.test.loss);
    test_acc.push_back(metrics.test.accuracy);
    result.runs.push_back(std::move(metrics));
    result.models.push_back(std::move(model));
  }
  result.train_loss = mean_std(train_loss);
  result.train_accuracy = mean_std(train_acc);
  result.test_loss = mean_std(test_loss);
  result.test_accuracy = mean_std(test_acc);
  return result;
}

TrainResult train(const model::ModelConfig& model_config, const TrainConfig& config,
                  const std::vector<tokenizer::MaskedExample>& examples, const EpochCallback& on_epoch) {
  auto split = corpus::split_dataset(examples, config.split_ratio, config.seed);
  return train(model_config, config, split.train, split.test, on_epoch);
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_metrics_csv(std::ostream& out, const TrainResult& result) {
  out << "run,epoch,train_loss,train_acc\n";
  for (const auto& run : result.runs) {
    for (const auto& e : run.history) {
      out << run.run << ',' << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.train_accuracy) << '\n';
    }
  }
}

void write_summary(std::ostream& out, const TrainResult& result) {
  auto line = [&](const char* name, const MeanStd& m) {
    out << name << " {mean: " << fmt(m.mean) << ", std: " << fmt(m.std) << "}\n";
  };
  line("train_loss", result.train_loss);
  line("train_accuracy", result.train_accuracy);
  line("test_loss", result.test_loss);
  line("test_accuracy", result.test_accuracy);
}

}  // namespace gpcrbert::trainer
