#include "gpcrbert/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string_view>

#include "gpcrbert/error.hpp"

namespace gpcrbert::gradcheck {

namespace {

constexpr bool kDouble = sizeof(Real) == sizeof(double);

// Loss recomputed in double from the logits so the final reduction adds no
// single-precision rounding to the finite differences.
double loss_value(const model::Model& model, const tokenizer::MaskedExample& example) {
  tensor::NoGradGuard no_grad;
  tensor::Rng unused(0);
  auto out = model.masked_logits(example, false, unused);
  const std::size_t c = out.logits.cols();
  const auto z = out.logits.data();
  double total = 0.0;
  for (std::size_t r = 0; r < out.labels.size(); ++r) {
    const double peak = *std::max_element(z.begin() + static_cast<std::ptrdiff_t>(r * c),
                                          z.begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(static_cast<double>(z[r * c + j]) - peak);
    total += peak + std::log(s) - static_cast<double>(z[r * c + static_cast<std::size_t>(out.labels[r])]);
  }
  return total / static_cast<double>(out.labels.size());
}

}  // namespace

void probe_initialize(model::Parameters& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto ends_with = [](const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (auto& [name, t] : params.named()) {
    auto data = t.data();
    double mean = 0.0, sd = 1.0;
    if (ends_with(name, ".gain")) {
      mean = 1.0;
      sd = 0.1;
    } else if (ends_with(name, ".bias")) {
      sd = 0.1;
    } else if (name.rfind("embeddings.", 0) != 0) {
      sd = 1.0 / std::sqrt(static_cast<double>(t.dim(0)));
    }
    for (auto& v : data) v = static_cast<Real>(mean + sd * normal(rng));
  }
}

double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                      double floor) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  if (diff == 0.0) return 0.0;
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), floor);
}

Report run(const model::Model& model, const tokenizer::MaskedExample& example, const Options& options) {
  Report report;
  report.step = options.step > 0.0 ? options.step : (kDouble ? 1e-5 : 1e-3);
  report.tolerance = options.tolerance > 0.0 ? options.tolerance : (kDouble ? 1e-4 : 1e-2);

  auto params = model.trainable();
  for (auto& [name, p] : params) p.zero_grad();
  {
    tensor::Rng unused(0);
    auto out = model.masked_logits(example, false, unused);
    auto loss = model::masked_cross_entropy(out.logits, out.labels);
    tensor::backward(loss.loss);
  }

  std::mt19937_64 pick(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::vector<double>> analytic(params.size()), numeric(params.size());
  double total_sq = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t].second;
    const std::size_t n = p.size();
    std::vector<std::size_t> entries(n);
    for (std::size_t i = 0; i < n; ++i) entries[i] = i;
    if (options.max_entries_per_tensor > 0 && n > options.max_entries_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), pick);
      entries.resize(options.max_entries_per_tensor);
      std::sort(entries.begin(), entries.end());
    }
    const auto grad = p.grad();
    auto values = p.data();
    for (std::size_t i = 0; i < n; ++i) total_sq += static_cast<double>(grad[i]) * grad[i];
    for (auto i : entries) {
      const Real saved = values[i];
      values[i] = static_cast<Real>(saved + report.step);
      const double plus = loss_value(model, example);
      values[i] = static_cast<Real>(saved - report.step);
      const double minus = loss_value(model, example);
      values[i] = saved;
      analytic[t].push_back(grad[i]);
      numeric[t].push_back((plus - minus) / (2.0 * report.step));
    }
  }
  report.floor = std::max(kFloorFraction * std::sqrt(total_sq), 1e-300);
  for (std::size_t t = 0; t < params.size(); ++t) {
    ParameterReport pr;
    pr.name = params[t].first;
    pr.checked = analytic[t].size();
    for (std::size_t i = 0; i < analytic[t].size(); ++i) {
      pr.analytic_norm += analytic[t][i] * analytic[t][i];
      pr.numeric_norm += numeric[t][i] * numeric[t][i];
    }
    pr.analytic_norm = std::sqrt(pr.analytic_norm);
    pr.numeric_norm = std::sqrt(pr.numeric_norm);
    pr.rel_error = relative_error(analytic[t], numeric[t], report.floor);
    report.max_rel_error = std::max(report.max_rel_error, pr.rel_error);
    report.parameters.push_back(std::move(pr));
  }
  for (auto& [name, p] : params) p.zero_grad();
  report.passed = report.max_rel_error < report.tolerance;
  return report;
}

Report run(const model::ModelConfig& config, const Options& options) {
  config.validate();
  if (options.n_masked == 0 || options.n_masked + 1 > config.max_len) {
    throw InvalidArgument("gradcheck: n_masked must lie in [1, max_len - 1]");
  }
  std::mt19937_64 rng(options.seed);
  const std::size_t seq_len = config.max_len - 1;
  std::uniform_int_distribution<int> residue(tokenizer::kFirstResidue, tokenizer::kVocabSize - 1);
  corpus::RawMaskedPair pair;
  pair.source_id = "gradcheck";
  for (std::size_t i = 0; i < seq_len; ++i) {
    pair.input_seq.push_back(tokenizer::Vocab::standard().residue(residue(rng)));
  }
  pair.label_seq.assign(seq_len, corpus::kMaskChar);
  auto order = corpus::seeded_permutation(seq_len, options.seed);
  for (std::size_t k = 0; k < options.n_masked; ++k) {
    pair.label_seq[order[k]] = pair.input_seq[order[k]];
    pair.input_seq[order[k]] = corpus::kMaskChar;
  }
  tokenizer::EncodeOptions enc;
  enc.max_len = config.max_len;
  auto example = tokenizer::encode(pair, enc);
  model::Model model(config, options.seed);
  if (options.probe_init) probe_initialize(model.parameters(), options.seed);
  return run(model, example, options);
}

}  // namespace gpcrbert::gradcheck
