#include "gpcrbert/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "gpcrbert/error.hpp"

namespace gpcrbert::baselines {

namespace {

constexpr std::size_t kV = tokenizer::kVocabSize;
constexpr double kMinScale = 1e-6;

double dot(const std::vector<double>& v, const SvmInstance& x) {
  double s = 0.0;
  for (const auto& [i, value] : x.features) s += v[i] * value;
  return s;
}

double uniform53(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

std::vector<double> featurize(const tokenizer::MaskedExample& example) {
  std::vector<double> x(example.length() * kV, 0.0);
  for (std::size_t p = 0; p < example.length(); ++p) {
    const int id = example.input_ids[p];
    if (id < 0 || id >= static_cast<int>(kV)) throw InvalidArgument("featurize: token id out of range");
    x[p * kV + static_cast<std::size_t>(id)] = 1.0;
  }
  return x;
}

std::size_t instance_dim(std::size_t max_len) { return max_len * kV + max_len + 1; }

SvmInstance make_instance(const tokenizer::MaskedExample& example, std::size_t token_position) {
  const std::size_t n = example.length();
  if (token_position >= n) throw InvalidArgument("make_instance: position beyond the example");
  SvmInstance inst;
  inst.features.reserve(n + 2);
  for (std::size_t p = 0; p < n; ++p) {
    const int id = example.input_ids[p];
    if (id < 0 || id >= static_cast<int>(kV)) throw InvalidArgument("make_instance: token id out of range");
    inst.features.emplace_back(static_cast<std::uint32_t>(p * kV + static_cast<std::size_t>(id)), 1.0);
  }
  inst.features.emplace_back(static_cast<std::uint32_t>(n * kV + token_position), 1.0);
  inst.features.emplace_back(static_cast<std::uint32_t>(instance_dim(n) - 1), 1.0);
  inst.label = example.label_ids[token_position];
  return inst;
}

std::vector<SvmInstance> svm_instances(const std::vector<tokenizer::MaskedExample>& examples) {
  std::vector<SvmInstance> out;
  for (const auto& ex : examples) {
    for (auto p : ex.mask_positions) {
      if (ex.label_ids[p] == tokenizer::kIgnore) continue;
      out.push_back(make_instance(ex, p));
    }
  }
  return out;
}

double hinge_objective(const std::vector<double>& w, double lambda, const std::vector<SvmInstance>& instances,
                       int positive_class) {
  double sq = 0.0;
  for (double v : w) sq += v * v;
  double hinge = 0.0;
  for (const auto& x : instances) {
    const double y = x.label == positive_class ? 1.0 : -1.0;
    hinge += std::max(0.0, 1.0 - y * dot(w, x));
  }
  return 0.5 * lambda * sq + hinge / static_cast<double>(instances.size());
}

SvmModel svm_train(const std::vector<SvmInstance>& instances, std::size_t dim, const SvmConfig& config) {
  if (!(config.lambda > 0.0)) throw InvalidArgument("svm_train: lambda must be positive");
  if (config.steps == 0) throw InvalidArgument("svm_train: steps must be positive");
  std::set<int> labels;
  for (const auto& x : instances) {
    labels.insert(x.label);
    for (const auto& [i, v] : x.features) {
      if (i >= dim) throw InvalidArgument("svm_train: feature index beyond dim");
    }
  }
  if (labels.size() < 2) throw InvalidArgument("svm_train: need at least two distinct labels");

  SvmModel model;
  model.classes.assign(labels.begin(), labels.end());
  model.dim = dim;
  model.lambda = config.lambda;
  const double n = static_cast<double>(instances.size());
  const double radius = 1.0 / std::sqrt(config.lambda);

  for (int c : model.classes) {
    // w = scale * v keeps the shrink step O(1) for sparse updates.
    std::vector<double> v(dim, 0.0);
    double scale = 1.0, v_sq = 0.0;
    std::mt19937_64 rng(config.seed);
    std::vector<double> trace;
    for (std::size_t t = 1; t <= config.steps; ++t) {
      const auto& x = instances[static_cast<std::size_t>(uniform53(rng) * n)];
      const double y = x.label == c ? 1.0 : -1.0;
      const double eta = 1.0 / (config.lambda * static_cast<double>(t));
      const double margin = y * scale * dot(v, x);
      const double shrink = 1.0 - eta * config.lambda;
      if (shrink <= 0.0) {
        std::fill(v.begin(), v.end(), 0.0);
        scale = 1.0;
        v_sq = 0.0;
      } else {
        scale *= shrink;
      }
      if (margin < 1.0) {
        const double a = eta * y / scale;
        double vx = 0.0, xx = 0.0;
        for (const auto& [i, value] : x.features) {
          vx += v[i] * value;
          xx += value * value;
        }
        for (const auto& [i, value] : x.features) v[i] += a * value;
        v_sq += 2.0 * a * vx + a * a * xx;
      }
      const double norm = scale * std::sqrt(std::max(v_sq, 0.0));
      if (norm > radius) scale *= radius / norm;
      // Repeated projections drive scale toward underflow; fold it back into v.
      if (scale < kMinScale) {
        v_sq = 0.0;
        for (auto& vi : v) {
          vi *= scale;
          v_sq += vi * vi;
        }
        scale = 1.0;
      }
      if (config.objective_every > 0 && t % config.objective_every == 0) {
        std::vector<double> w(v);
        for (auto& wi : w) wi *= scale;
        trace.push_back(hinge_objective(w, config.lambda, instances, c));
      }
    }
    for (auto& vi : v) vi *= scale;
    model.weights.push_back(std::move(v));
    model.objective_trace.push_back(std::move(trace));
  }
  return model;
}

std::vector<double> SvmModel::scores(const SvmInstance& x) const {
  std::vector<double> out;
  for (const auto& w : weights) out.push_back(dot(w, x));
  return out;
}

int svm_predict(const SvmModel& model, const SvmInstance& x) {
  if (model.classes.empty()) throw InvalidArgument("svm_predict: empty model");
  for (const auto& [i, v] : x.features) {
    if (i >= model.dim) throw InvalidArgument("svm_predict: feature index beyond model dimension");
  }
  const auto s = model.scores(x);
  std::size_t best = 0;
  for (std::size_t c = 1; c < s.size(); ++c) {
    if (s[c] > s[best]) best = c;
  }
  return model.classes[best];
}

int svm_predict(const SvmModel& model, std::span<const double> dense) {
  if (dense.size() != model.dim) {
    throw InvalidArgument("svm_predict: feature length " + std::to_string(dense.size()) + ", model expects " +
                          std::to_string(model.dim));
  }
  SvmInstance x;
  for (std::size_t i = 0; i < dense.size(); ++i) {
    if (dense[i] != 0.0) x.features.emplace_back(static_cast<std::uint32_t>(i), dense[i]);
  }
  return svm_predict(model, x);
}

double svm_accuracy(const SvmModel& model, const std::vector<SvmInstance>& instances) {
  if (instances.empty()) throw InvalidArgument("svm_accuracy: no instances");
  std::size_t hits = 0;
  for (const auto& x : instances) hits += svm_predict(model, x) == x.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(instances.size());
}

MajorityBaseline majority_baseline(std::span<const int> labels) {
  if (labels.empty()) throw InvalidArgument("majority_baseline: no labels");
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  MajorityBaseline out;
  std::size_t best = 0;
  for (const auto& [label, count] : counts) {
    if (count > best) {
      best = count;
      out.label = label;
    }
  }
  out.train_frequency = static_cast<double>(best) / static_cast<double>(labels.size());
  return out;
}

double majority_accuracy(const MajorityBaseline& baseline, std::span<const int> labels) {
  if (labels.empty()) throw InvalidArgument("majority_accuracy: no labels");
  const auto hits = std::count(labels.begin(), labels.end(), baseline.label);
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

checkpoint::Container to_container(const SvmModel& model) {
  checkpoint::Container c;
  c.kind = "svm";
  c.vocab_hash = tokenizer::Vocab::standard().hash();
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", model.lambda);
  c.config = {{"lambda", buf}, {"dim", std::to_string(model.dim)}};
  checkpoint::NamedTensor classes{"classes", {model.classes.size()}, {}};
  for (int id : model.classes) classes.values.push_back(static_cast<float>(id));
  checkpoint::NamedTensor weights{"weights", {model.classes.size(), model.dim}, {}};
  weights.values.reserve(model.classes.size() * model.dim);
  for (const auto& w : model.weights) {
    for (double v : w) weights.values.push_back(static_cast<float>(v));
  }
  c.tensors = {std::move(classes), std::move(weights)};
  return c;
}

SvmModel from_container(const checkpoint::Container& c) {
  using checkpoint::CheckpointError;
  using checkpoint::ErrorCode;
  if (c.kind != "svm") throw CheckpointError(ErrorCode::kMismatch, "container kind is '" + c.kind + "', expected svm");
  if (c.vocab_hash != tokenizer::Vocab::standard().hash()) {
    throw CheckpointError(ErrorCode::kMismatch, "vocabulary hash does not match this build");
  }
  SvmModel m;
  auto lambda = c.config.find("lambda");
  auto dim = c.config.find("dim");
  if (lambda == c.config.end() || dim == c.config.end() || c.tensors.size() != 2 ||
      c.tensors[0].name != "classes" || c.tensors[1].name != "weights") {
    throw CheckpointError(ErrorCode::kMismatch, "not an SVM model layout");
  }
  m.lambda = text::parse_double(lambda->second, "lambda");
  m.dim = text::parse_size(dim->second, "dim");
  const auto& classes = c.tensors[0];
  const auto& weights = c.tensors[1];
  if (weights.shape != tensor::Shape{classes.values.size(), m.dim}) {
    throw CheckpointError(ErrorCode::kMismatch, "weights shape " + tensor::to_string(weights.shape));
  }
  for (float id : classes.values) m.classes.push_back(static_cast<int>(id));
  for (std::size_t r = 0; r < m.classes.size(); ++r) {
    m.weights.emplace_back(weights.values.begin() + static_cast<std::ptrdiff_t>(r * m.dim),
                           weights.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * m.dim));
  }
  return m;
}

}  // namespace gpcrbert::baselines
