#pragma once

// Post-layer-norm transformer encoder with a three-layer prediction head.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gpcrbert/tensor.hpp"
#include "gpcrbert/text.hpp"
#include "gpcrbert/tokenizer.hpp"

namespace gpcrbert::model {

using tensor::Tensor;

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  std::size_t max_len = 372;
  std::size_t vocab_size = tokenizer::kVocabSize;
  std::size_t head_hidden1 = 1024;
  std::size_t head_hidden2 = 256;
  double dropout = 0.25;
  double init_std = 0.02;
  double layer_norm_eps = 1e-12;
  bool freeze_encoder = false;

  // 4 layers, 4 heads, d_model 128.
  static ModelConfig desk();
  // 2 layers, 2 heads, d_model 16, 12 positions, narrow head; for gradient checks.
  static ModelConfig tiny();
  // 30 layers, 16 heads, d_model 1024, d_ff 4096.
  static ModelConfig full_scale();

  std::size_t head_dim() const { return d_model / n_heads; }
  void validate() const;

  text::KeyValues to_key_values() const;
  // Unknown keys are rejected; missing keys keep the desk defaults.
  static ModelConfig from_key_values(const text::KeyValues& kv);

  bool operator==(const ModelConfig&) const = default;
};

struct LayerParameters {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor attn_norm_gain, attn_norm_bias;
  Tensor ff_in_w, ff_in_b, ff_out_w, ff_out_b;
  Tensor ff_norm_gain, ff_norm_bias;
};

struct HeadParameters {
  Tensor w1, b1, w2, b2, w3, b3;
};

struct Parameters {
  Tensor token_embedding;
  Tensor position_embedding;
  std::vector<LayerParameters> layers;
  HeadParameters head;

  // Every tensor with a stable dotted name, in serialization order.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<std::pair<std::string, Tensor>> named_encoder() const;
  std::vector<std::pair<std::string, Tensor>> named_head() const;

  // Weights ~ N(0, init_std), biases 0, layer-norm gains 1.
  static Parameters initialize(const ModelConfig& config, std::uint64_t seed);
  static Parameters zeros(const ModelConfig& config);
  // Deep copy with fresh storage.
  Parameters clone() const;
};

// Expected shape of every named parameter for a config.
std::vector<std::pair<std::string, tensor::Shape>> parameter_shapes(const ModelConfig& config);

struct AttentionMatrix {
  std::size_t size = 0;
  std::vector<Real> weights;  // size * size, row = query

  Real at(std::size_t query, std::size_t key) const { return weights[query * size + key]; }
  std::span<const Real> row(std::size_t query) const {
    return std::span<const Real>(weights).subspan(query * size, size);
  }
};

struct AttentionStack {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t seq_len = 0;
  std::vector<AttentionMatrix> matrices;  // layer-major

  const AttentionMatrix& at(std::size_t layer, std::size_t head) const {
    return matrices[layer * n_heads + head];
  }
};

struct ForwardOptions {
  bool training = false;
  bool capture_attention = false;
  // Run only up to the last attended token. Outputs at unpadded positions are
  // identical either way; disable to get full padded-length attention maps.
  bool trim_padding = true;
};

struct EncoderOutput {
  // hidden[0] is the embedding output, hidden[l + 1] the output of layer l.
  std::vector<Tensor> hidden;
  std::optional<AttentionStack> attention;

  const Tensor& final_hidden() const { return hidden.back(); }
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  Model(ModelConfig config, Parameters parameters);

  const ModelConfig& config() const { return config_; }
  const Parameters& parameters() const { return params_; }
  Parameters& parameters() { return params_; }

  EncoderOutput encode(std::span<const int> ids, std::span<const std::uint8_t> attention_mask,
                       const ForwardOptions& options = {}) const;
  EncoderOutput encode(const tokenizer::MaskedExample& example, const ForwardOptions& options = {}) const;

  // Position-wise linear-ReLU-dropout-linear-ReLU-dropout-linear.
  Tensor head(const Tensor& hidden, bool training, tensor::Rng& rng) const;

  // Head logits for the [MASK] rows only, paired with their labels.
  struct MaskedLogits {
    Tensor logits;
    std::vector<int> labels;
  };
  MaskedLogits masked_logits(const tokenizer::MaskedExample& example, bool training,
                             tensor::Rng& rng) const;

  // Tensors the optimizer updates (head only when freeze_encoder is set).
  std::vector<std::pair<std::string, Tensor>> trainable() const;

 private:
  void apply_freeze();

  ModelConfig config_;
  Parameters params_;
};

struct LossResult {
  Tensor loss;
  std::size_t n_supervised = 0;
};

// Mean over labels != kIgnore of -log softmax(logits)[label]; a positive
// normalizer replaces the supervised count as the divisor.
LossResult masked_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                double normalizer = 0.0);

struct TokenTally {
  std::size_t correct = 0;
  std::size_t total = 0;
};

// Argmax ties resolve to the lower id.
TokenTally count_correct(const Tensor& logits, std::span<const int> labels);
double masked_accuracy(const Tensor& logits, std::span<const int> labels);

}  // namespace gpcrbert::model
