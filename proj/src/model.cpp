#include "gpcrbert/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "gpcrbert/error.hpp"

namespace gpcrbert::model {

namespace t = gpcrbert::tensor;

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.max_len = 12;
  c.head_hidden1 = 24;
  c.head_hidden2 = 12;
  return c;
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.n_layers = 30;
  c.n_heads = 16;
  c.d_model = 1024;
  c.d_ff = 4096;
  c.max_len = 372;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw InvalidArgument("model config: " + msg); };
  if (n_layers == 0) fail("n_layers must be positive");
  if (n_heads == 0 || d_model == 0) fail("n_heads and d_model must be positive");
  if (d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (d_ff == 0 || max_len < 2) fail("d_ff must be positive and max_len at least 2");
  if (vocab_size != static_cast<std::size_t>(tokenizer::kVocabSize)) {
    fail("vocab_size must be " + std::to_string(tokenizer::kVocabSize));
  }
  if (head_hidden1 == 0 || head_hidden2 == 0) fail("head widths must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(init_std > 0.0)) fail("init_std must be positive");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
}

text::KeyValues ModelConfig::to_key_values() const {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return {{"n_layers", std::to_string(n_layers)},
          {"n_heads", std::to_string(n_heads)},
          {"d_model", std::to_string(d_model)},
          {"d_ff", std::to_string(d_ff)},
          {"max_len", std::to_string(max_len)},
          {"vocab_size", std::to_string(vocab_size)},
          {"head_hidden1", std::to_string(head_hidden1)},
          {"head_hidden2", std::to_string(head_hidden2)},
          {"dropout", num(dropout)},
          {"init_std", num(init_std)},
          {"layer_norm_eps", num(layer_norm_eps)},
          {"freeze_encoder", freeze_encoder ? "true" : "false"}};
}

ModelConfig ModelConfig::from_key_values(const text::KeyValues& kv) {
  ModelConfig c;
  for (const auto& [key, value] : kv) {
    const std::string what = "model config key '" + key + "'";
    if (key == "preset") {
      continue;
    } else if (key == "n_layers") {
      c.n_layers = text::parse_size(value, what);
    } else if (key == "n_heads") {
      c.n_heads = text::parse_size(value, what);
    } else if (key == "d_model") {
      c.d_model = text::parse_size(value, what);
    } else if (key == "d_ff") {
      c.d_ff = text::parse_size(value, what);
    } else if (key == "max_len") {
      c.max_len = text::parse_size(value, what);
    } else if (key == "vocab_size") {
      c.vocab_size = text::parse_size(value, what);
    } else if (key == "head_hidden1") {
      c.head_hidden1 = text::parse_size(value, what);
    } else if (key == "head_hidden2") {
      c.head_hidden2 = text::parse_size(value, what);
    } else if (key == "dropout") {
      c.dropout = text::parse_double(value, what);
    } else if (key == "init_std") {
      c.init_std = text::parse_double(value, what);
    } else if (key == "layer_norm_eps") {
      c.layer_norm_eps = text::parse_double(value, what);
    } else if (key == "freeze_encoder") {
      c.freeze_encoder = text::parse_bool(value, what);
    } else {
      throw ParseError("unknown model config key '" + key + "'");
    }
  }
  if (auto it = kv.find("preset"); it != kv.end()) {
    // A preset supplies defaults; explicit keys still win.
    ModelConfig base;
    if (it->second == "desk") {
      base = desk();
    } else if (it->second == "tiny") {
      base = tiny();
    } else if (it->second == "full" || it->second == "full_scale") {
      base = full_scale();
    } else {
      throw ParseError("unknown model preset '" + it->second + "'");
    }
    auto rest = kv;
    rest.erase("preset");
    auto merged = base.to_key_values();
    for (const auto& [k, v] : rest) merged[k] = v;
    return from_key_values(merged);
  }
  c.validate();
  return c;
}

std::vector<std::pair<std::string, tensor::Shape>> parameter_shapes(const ModelConfig& c) {
  std::vector<std::pair<std::string, tensor::Shape>> out;
  const std::size_t d = c.d_model;
  out.push_back({"embeddings.token", {c.vocab_size, d}});
  out.push_back({"embeddings.position", {c.max_len, d}});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "encoder." + std::to_string(l) + ".";
    for (const char* m : {"query", "key", "value", "output"}) {
      out.push_back({p + "attention." + m + ".weight", {d, d}});
      out.push_back({p + "attention." + m + ".bias", {d}});
    }
    out.push_back({p + "attention.norm.gain", {d}});
    out.push_back({p + "attention.norm.bias", {d}});
    out.push_back({p + "ffn.in.weight", {d, c.d_ff}});
    out.push_back({p + "ffn.in.bias", {c.d_ff}});
    out.push_back({p + "ffn.out.weight", {c.d_ff, d}});
    out.push_back({p + "ffn.out.bias", {d}});
    out.push_back({p + "ffn.norm.gain", {d}});
    out.push_back({p + "ffn.norm.bias", {d}});
  }
  out.push_back({"head.0.weight", {d, c.head_hidden1}});
  out.push_back({"head.0.bias", {c.head_hidden1}});
  out.push_back({"head.1.weight", {c.head_hidden1, c.head_hidden2}});
  out.push_back({"head.1.bias", {c.head_hidden2}});
  out.push_back({"head.2.weight", {c.head_hidden2, c.vocab_size}});
  out.push_back({"head.2.bias", {c.vocab_size}});
  return out;
}

std::vector<std::pair<std::string, Tensor>> Parameters::named_encoder() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embeddings.token", token_embedding);
  out.emplace_back("embeddings.position", position_embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::string p = "encoder." + std::to_string(l) + ".";
    out.emplace_back(p + "attention.query.weight", L.wq);
    out.emplace_back(p + "attention.query.bias", L.bq);
    out.emplace_back(p + "attention.key.weight", L.wk);
    out.emplace_back(p + "attention.key.bias", L.bk);
    out.emplace_back(p + "attention.value.weight", L.wv);
    out.emplace_back(p + "attention.value.bias", L.bv);
    out.emplace_back(p + "attention.output.weight", L.wo);
    out.emplace_back(p + "attention.output.bias", L.bo);
    out.emplace_back(p + "attention.norm.gain", L.attn_norm_gain);
    out.emplace_back(p + "attention.norm.bias", L.attn_norm_bias);
    out.emplace_back(p + "ffn.in.weight", L.ff_in_w);
    out.emplace_back(p + "ffn.in.bias", L.ff_in_b);
    out.emplace_back(p + "ffn.out.weight", L.ff_out_w);
    out.emplace_back(p + "ffn.out.bias", L.ff_out_b);
    out.emplace_back(p + "ffn.norm.gain", L.ff_norm_gain);
    out.emplace_back(p + "ffn.norm.bias", L.ff_norm_bias);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> Parameters::named_head() const {
  return {{"head.0.weight", head.w1}, {"head.0.bias", head.b1}, {"head.1.weight", head.w2},
          {"head.1.bias", head.b2},   {"head.2.weight", head.w3}, {"head.2.bias", head.b3}};
}

std::vector<std::pair<std::string, Tensor>> Parameters::named() const {
  auto out = named_encoder();
  for (auto& p : named_head()) out.push_back(std::move(p));
  return out;
}

namespace {

// Builds parameters in parameter_shapes() order from a per-tensor factory.
template <typename Factory>
Parameters build(const ModelConfig& config, Factory&& make) {
  config.validate();
  auto shapes = parameter_shapes(config);
  std::size_t i = 0;
  auto next = [&] {
    const auto& [name, shape] = shapes[i++];
    return make(name, shape);
  };
  Parameters p;
  p.token_embedding = next();
  p.position_embedding = next();
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerParameters L;
    L.wq = next(); L.bq = next();
    L.wk = next(); L.bk = next();
    L.wv = next(); L.bv = next();
    L.wo = next(); L.bo = next();
    L.attn_norm_gain = next(); L.attn_norm_bias = next();
    L.ff_in_w = next(); L.ff_in_b = next();
    L.ff_out_w = next(); L.ff_out_b = next();
    L.ff_norm_gain = next(); L.ff_norm_bias = next();
    p.layers.push_back(std::move(L));
  }
  p.head.w1 = next(); p.head.b1 = next();
  p.head.w2 = next(); p.head.b2 = next();
  p.head.w3 = next(); p.head.b3 = next();
  return p;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Parameters Parameters::initialize(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, config.init_std);
  return build(config, [&](const std::string& name, const tensor::Shape& shape) {
    auto t = Tensor::zeros(shape, true);
    auto data = t.data();
    if (ends_with(name, ".gain")) {
      std::fill(data.begin(), data.end(), Real{1});
    } else if (!ends_with(name, ".bias")) {
      for (auto& v : data) v = static_cast<Real>(normal(rng));
    }
    return t;
  });
}

Parameters Parameters::zeros(const ModelConfig& config) {
  return build(config, [](const std::string&, const tensor::Shape& shape) { return Tensor::zeros(shape, true); });
}

Parameters Parameters::clone() const {
  Parameters copy = *this;
  auto fresh = [](const Tensor& x) {
    Tensor c(x.shape(), std::vector<Real>(x.data().begin(), x.data().end()), x.requires_grad());
    return c;
  };
  copy.token_embedding = fresh(token_embedding);
  copy.position_embedding = fresh(position_embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = copy.layers[l];
    const auto& S = layers[l];
    L = {fresh(S.wq), fresh(S.bq), fresh(S.wk), fresh(S.bk), fresh(S.wv), fresh(S.bv),
         fresh(S.wo), fresh(S.bo), fresh(S.attn_norm_gain), fresh(S.attn_norm_bias),
         fresh(S.ff_in_w), fresh(S.ff_in_b), fresh(S.ff_out_w), fresh(S.ff_out_b),
         fresh(S.ff_norm_gain), fresh(S.ff_norm_bias)};
  }
  copy.head = {fresh(head.w1), fresh(head.b1), fresh(head.w2),
               fresh(head.b2), fresh(head.w3), fresh(head.b3)};
  return copy;
}

Model::Model(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(Parameters::initialize(config_, seed)) {
  apply_freeze();
}

Model::Model(ModelConfig config, Parameters parameters)
    : config_(std::move(config)), params_(std::move(parameters)) {
  config_.validate();
  auto expected = parameter_shapes(config_);
  auto actual = params_.named();
  if (expected.size() != actual.size()) throw ShapeError("parameter count does not match config");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i].first != actual[i].first || expected[i].second != actual[i].second.shape()) {
      throw ShapeError("parameter " + actual[i].first + " has shape " +
                       tensor::to_string(actual[i].second.shape()) + ", expected " +
                       tensor::to_string(expected[i].second));
    }
  }
  apply_freeze();
}

void Model::apply_freeze() {
  for (auto& [name, t] : params_.named_encoder()) {
    Tensor handle = t;
    handle.set_requires_grad(!config_.freeze_encoder);
  }
  for (auto& [name, t] : params_.named_head()) {
    Tensor handle = t;
    handle.set_requires_grad(true);
  }
}

std::vector<std::pair<std::string, Tensor>> Model::trainable() const {
  return config_.freeze_encoder ? params_.named_head() : params_.named();
}

EncoderOutput Model::encode(std::span<const int> ids, std::span<const std::uint8_t> attention_mask,
                            const ForwardOptions& options) const {
  if (ids.size() != attention_mask.size()) {
    throw ShapeError("encode: " + std::to_string(ids.size()) + " ids with " +
                     std::to_string(attention_mask.size()) + " mask entries");
  }
  if (ids.empty() || ids.size() > config_.max_len) {
    throw ShapeError("encode: sequence length " + std::to_string(ids.size()) +
                     " outside [1, " + std::to_string(config_.max_len) + "]");
  }
  std::size_t len = ids.size();
  if (options.trim_padding) {
    while (len > 0 && attention_mask[len - 1] == 0) --len;
  }
  if (len == 0) throw InvalidArgument("encode: no attended tokens");
  const auto seq_ids = ids.first(len);
  const auto mask = attention_mask.first(len);

  const std::size_t n_heads = config_.n_heads, dh = config_.head_dim();
  const auto scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));

  std::vector<std::size_t> positions(len);
  for (std::size_t i = 0; i < len; ++i) positions[i] = i;

  EncoderOutput out;
  Tensor x = t::add(t::embedding(params_.token_embedding, seq_ids),
                    t::gather_rows(params_.position_embedding, positions));
  out.hidden.push_back(x);

  if (options.capture_attention) {
    AttentionStack stack;
    stack.n_layers = config_.n_layers;
    stack.n_heads = n_heads;
    stack.seq_len = len;
    out.attention = std::move(stack);
  }

  for (const auto& L : params_.layers) {
    Tensor q = t::linear(x, L.wq, L.bq);
    Tensor k = t::linear(x, L.wk, L.bk);
    Tensor v = t::linear(x, L.wv, L.bv);
    std::vector<Tensor> contexts;
    contexts.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
      Tensor qh = n_heads == 1 ? q : t::slice_cols(q, h * dh, dh);
      Tensor kh = n_heads == 1 ? k : t::slice_cols(k, h * dh, dh);
      Tensor vh = n_heads == 1 ? v : t::slice_cols(v, h * dh, dh);
      Tensor probs = t::softmax_rows(t::scale(t::matmul_nt(qh, kh), scale), mask);
      if (out.attention) {
        const auto w = probs.data();
        out.attention->matrices.push_back({len, std::vector<Real>(w.begin(), w.end())});
      }
      contexts.push_back(t::matmul(probs, vh));
    }
    Tensor context = n_heads == 1 ? contexts.front() : t::concat_cols(contexts);
    Tensor attended = t::linear(context, L.wo, L.bo);
    x = t::layer_norm(t::add(x, attended), L.attn_norm_gain, L.attn_norm_bias, config_.layer_norm_eps);
    Tensor ff = t::linear(t::relu(t::linear(x, L.ff_in_w, L.ff_in_b)), L.ff_out_w, L.ff_out_b);
    x = t::layer_norm(t::add(x, ff), L.ff_norm_gain, L.ff_norm_bias, config_.layer_norm_eps);
    out.hidden.push_back(x);
  }
  return out;
}

EncoderOutput Model::encode(const tokenizer::MaskedExample& example, const ForwardOptions& options) const {
  return encode(example.input_ids, example.attention_mask, options);
}

Tensor Model::head(const Tensor& hidden, bool training, tensor::Rng& rng) const {
  if (hidden.cols() != config_.d_model) {
    throw ShapeError("head: hidden width " + std::to_string(hidden.cols()) + " but d_model is " +
                     std::to_string(config_.d_model));
  }
  const auto& H = params_.head;
  Tensor h1 = t::dropout(t::relu(t::linear(hidden, H.w1, H.b1)), config_.dropout, training, rng);
  Tensor h2 = t::dropout(t::relu(t::linear(h1, H.w2, H.b2)), config_.dropout, training, rng);
  return t::linear(h2, H.w3, H.b3);
}

Model::MaskedLogits Model::masked_logits(const tokenizer::MaskedExample& example, bool training,
                                         tensor::Rng& rng) const {
  if (example.mask_positions.empty()) {
    throw InvalidArgument("example " + example.source_id + " has no masked positions");
  }
  ForwardOptions opts;
  opts.training = training;
  auto enc = encode(example, opts);
  Tensor rows = t::gather_rows(enc.final_hidden(), example.mask_positions);
  MaskedLogits out{head(rows, training, rng), {}};
  out.labels.reserve(example.mask_positions.size());
  for (auto p : example.mask_positions) out.labels.push_back(example.label_ids[p]);
  return out;
}

LossResult masked_cross_entropy(const Tensor& logits, std::span<const int> labels, double normalizer) {
  std::size_t n = 0;
  for (int l : labels) n += l != tokenizer::kIgnore;
  if (n == 0) throw InvalidArgument("masked_cross_entropy: every label is IGNORE");
  return {t::cross_entropy(logits, labels, tokenizer::kIgnore, normalizer), n};
}

TokenTally count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t c = logits.cols();
  if (labels.size() != logits.rows()) {
    throw ShapeError("count_correct: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.rows()) + " rows");
  }
  TokenTally tally;
  const auto z = logits.data();
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] == tokenizer::kIgnore) continue;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (z[r * c + j] > z[r * c + best]) best = j;
    }
    ++tally.total;
    tally.correct += static_cast<int>(best) == labels[r];
  }
  return tally;
}

double masked_accuracy(const Tensor& logits, std::span<const int> labels) {
  auto tally = count_correct(logits, labels);
  if (tally.total == 0) throw InvalidArgument("masked_accuracy: every label is IGNORE");
  return static_cast<double>(tally.correct) / static_cast<double>(tally.total);
}

}  // namespace gpcrbert::model
