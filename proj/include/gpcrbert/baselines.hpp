#pragma once

// One-vs-rest linear SVM over one-hot sequence features, plus the
// majority-class reference.

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "gpcrbert/checkpoint.hpp"
#include "gpcrbert/tokenizer.hpp"

namespace gpcrbert::baselines {

// Dense one-hot of every input token: length() * kVocabSize entries.
std::vector<double> featurize(const tokenizer::MaskedExample& example);

// Sparse feature vector: (index, value) pairs with ascending indices.
struct SvmInstance {
  std::vector<std::pair<std::uint32_t, double>> features;
  int label = 0;
};

// Instance layout for a max_len-token encoding: the one-hot blocks, then a
// one-hot tag over max_len token positions naming the predicted position,
// then a constant 1 that acts as the bias.
std::size_t instance_dim(std::size_t max_len);
SvmInstance make_instance(const tokenizer::MaskedExample& example, std::size_t token_position);
// One instance per masked position, labelled with the true residue id.
std::vector<SvmInstance> svm_instances(const std::vector<tokenizer::MaskedExample>& examples);

struct SvmConfig {
  double lambda = 1e-4;
  std::size_t steps = 20000;
  std::uint64_t seed = 0;
  std::size_t objective_every = 1000;
};

struct SvmModel {
  std::vector<int> classes;  // ascending vocabulary ids
  std::size_t dim = 0;
  double lambda = 0.0;
  std::vector<std::vector<double>> weights;  // one per class
  // Objective lambda/2 |w|^2 + mean hinge per class, every objective_every steps.
  std::vector<std::vector<double>> objective_trace;

  std::vector<double> scores(const SvmInstance& x) const;
};

// Pegasos: step t samples i = floor(u * n) for a 53-bit uniform u, then takes
// a subgradient step with rate 1 / (lambda t) and projects onto the ball of
// radius 1 / sqrt(lambda).
SvmModel svm_train(const std::vector<SvmInstance>& instances, std::size_t dim, const SvmConfig& config = {});

// Argmax of the class scores; ties go to the lower vocabulary id.
int svm_predict(const SvmModel& model, const SvmInstance& x);
int svm_predict(const SvmModel& model, std::span<const double> dense);

double svm_accuracy(const SvmModel& model, const std::vector<SvmInstance>& instances);

double hinge_objective(const std::vector<double>& w, double lambda, const std::vector<SvmInstance>& instances,
                       int positive_class);

struct MajorityBaseline {
  int label = 0;
  double train_frequency = 0.0;
};

// Most frequent label (lowest id on ties) and its share of the labels.
MajorityBaseline majority_baseline(std::span<const int> labels);
double majority_accuracy(const MajorityBaseline& baseline, std::span<const int> labels);

checkpoint::Container to_container(const SvmModel& model);
SvmModel from_container(const checkpoint::Container& container);

}  // namespace gpcrbert::baselines
