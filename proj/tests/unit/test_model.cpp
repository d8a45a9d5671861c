#include <gtest/gtest.h>

#include <cmath>

#include "gpcrbert/error.hpp"
#include "gpcrbert/gradcheck.hpp"
#include "gpcrbert/model.hpp"
#include "helpers.hpp"

using namespace gpcrbert;
using namespace gpcrbert::model;

namespace {

ModelConfig small() {
  ModelConfig c = ModelConfig::tiny();
  c.max_len = 24;
  return c;
}

tokenizer::MaskedExample random_example(std::mt19937_64& rng, std::size_t max_len, std::size_t len) {
  auto seq = testutil::random_sequence(rng, len);
  auto pair = corpus::make_masked_pair({"r", "c", seq, {}}, {testutil::uniform(rng, 0, len - 1)});
  return tokenizer::encode(pair, {.max_len = max_len});
}

}  // namespace

TEST(Model, Presets) {
  auto d = ModelConfig::desk();
  EXPECT_EQ(d.n_layers, 4u);
  EXPECT_EQ(d.n_heads, 4u);
  EXPECT_EQ(d.d_model, 128u);
  EXPECT_EQ(d.d_ff, 512u);
  EXPECT_EQ(d.max_len, 372u);
  auto t = ModelConfig::tiny();
  EXPECT_EQ(t.n_layers, 2u);
  EXPECT_EQ(t.n_heads, 2u);
  EXPECT_EQ(t.d_model, 16u);
  EXPECT_EQ(t.max_len, 12u);
  auto p = ModelConfig::full_scale();
  EXPECT_EQ(p.n_layers, 30u);
  EXPECT_EQ(p.n_heads, 16u);
  EXPECT_EQ(p.d_model, 1024u);
  EXPECT_EQ(p.d_ff, 4096u);
  EXPECT_NO_THROW(p.validate());
}

TEST(Model, ConfigValidationAndKeyValues) {
  ModelConfig c;
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), InvalidArgument);
  auto t = ModelConfig::tiny();
  EXPECT_EQ(ModelConfig::from_key_values(t.to_key_values()), t);
  auto preset = ModelConfig::from_key_values({{"preset", "tiny"}, {"n_layers", "3"}});
  EXPECT_EQ(preset.n_layers, 3u);
  EXPECT_EQ(preset.d_model, 16u);
  EXPECT_THROW(ModelConfig::from_key_values({{"n_layer", "3"}}), ParseError);
}

TEST(Model, ParameterNamesMatchShapes) {
  auto c = ModelConfig::tiny();
  auto params = Parameters::initialize(c, 1);
  auto named = params.named();
  auto shapes = parameter_shapes(c);
  ASSERT_EQ(named.size(), shapes.size());
  for (std::size_t i = 0; i < named.size(); ++i) {
    EXPECT_EQ(named[i].first, shapes[i].first);
    EXPECT_EQ(named[i].second.shape(), shapes[i].second);
  }
  EXPECT_EQ(named.size(), params.named_encoder().size() + params.named_head().size());
}

TEST(Model, InitializationStatistics) {
  auto params = Parameters::initialize(ModelConfig::desk(), 5);
  double s = 0, s2 = 0;
  const auto w = params.layers[0].ff_in_w.data();
  for (auto v : w) {
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(w.size());
  EXPECT_NEAR(s / n, 0.0, 1e-3);
  EXPECT_NEAR(std::sqrt(s2 / n), 0.02, 1e-3);
  for (auto v : params.layers[0].bq.data()) EXPECT_EQ(v, 0);
  for (auto v : params.layers[0].attn_norm_gain.data()) EXPECT_EQ(v, 1);
}

TEST(Model, AttentionRowsAreDistributions) {
  // Rows sum to 1 over attended columns and are exactly 0 on padding.
  const auto cfg = small();
  Model base(cfg, 3);
  Model probed(cfg, 3);
  gradcheck::probe_initialize(probed.parameters(), 4);
  testutil::for_all(120, 31, [&](std::mt19937_64& rng, std::size_t i) {
    const auto& m = i % 2 ? probed : base;
    auto ex = random_example(rng, cfg.max_len, testutil::uniform(rng, 1, cfg.max_len - 1));
    auto enc = m.encode(ex, {.capture_attention = true, .trim_padding = false});
    ASSERT_TRUE(enc.attention);
    const auto& att = *enc.attention;
    ASSERT_EQ(att.matrices.size(), cfg.n_layers * cfg.n_heads);
    for (const auto& mat : att.matrices) {
      ASSERT_EQ(mat.size, cfg.max_len);
      for (std::size_t q = 0; q < mat.size; ++q) {
        double total = 0;
        for (std::size_t k = 0; k < mat.size; ++k) {
          if (ex.attention_mask[k]) {
            total += mat.at(q, k);
          } else {
            ASSERT_EQ(mat.at(q, k), 0.0f);
          }
        }
        ASSERT_NEAR(total, 1.0, 1e-5);
      }
    }
  });
}

TEST(Model, TrimmingPaddingKeepsOutputs) {
  const auto cfg = small();
  Model m(cfg, 8);
  gradcheck::probe_initialize(m.parameters(), 9);
  testutil::for_all(100, 32, [&](std::mt19937_64& rng, std::size_t) {
    auto ex = random_example(rng, cfg.max_len, testutil::uniform(rng, 1, cfg.max_len - 1));
    auto full = m.encode(ex, {.trim_padding = false});
    auto trimmed = m.encode(ex, {});
    const auto n = ex.real_length();
    ASSERT_EQ(trimmed.final_hidden().rows(), n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < cfg.d_model; ++c) {
        ASSERT_NEAR(full.final_hidden().at(r, c), trimmed.final_hidden().at(r, c), 1e-4);
      }
    }
  });
}

TEST(Model, UniformLogitsGiveLogVocab) {
  auto logits = tensor::Tensor::zeros({5, 30});
  std::vector<int> labels{5, 6, tokenizer::kIgnore, 29, 0};
  auto r = masked_cross_entropy(logits, labels);
  EXPECT_EQ(r.n_supervised, 4u);
  EXPECT_NEAR(r.loss.item(), std::log(30.0), 1e-4);
  std::vector<int> none(5, tokenizer::kIgnore);
  EXPECT_THROW(masked_cross_entropy(logits, none), InvalidArgument);
}

TEST(Model, ZeroHeadGivesUniformLoss) {
  auto cfg = small();
  Model m(cfg, 1);
  for (auto& [name, t] : m.parameters().named_head()) {
    auto handle = t;
    for (auto& v : handle.data()) v = 0;
  }
  std::mt19937_64 rng(2);
  auto ex = random_example(rng, cfg.max_len, 10);
  tensor::Rng drop(0);
  auto out = m.masked_logits(ex, false, drop);
  EXPECT_NEAR(masked_cross_entropy(out.logits, out.labels).loss.item(), std::log(30.0), 1e-5);
}

TEST(Model, ArgmaxTiesGoToLowerId) {
  tensor::Tensor logits({2, 4}, {1, 3, 3, 0, 2, 2, 2, 2});
  std::vector<int> first{1, 0};
  std::vector<int> second{2, 3};
  EXPECT_EQ(count_correct(logits, first).correct, 2u);
  EXPECT_EQ(count_correct(logits, second).correct, 0u);
  EXPECT_DOUBLE_EQ(masked_accuracy(logits, first), 1.0);
}

TEST(Model, MaskedLogitsNeedMasks) {
  auto cfg = small();
  Model m(cfg, 1);
  auto ex = tokenizer::encode_sequence("q", "MKLV", {.max_len = cfg.max_len});
  tensor::Rng rng(0);
  EXPECT_THROW(m.masked_logits(ex, false, rng), InvalidArgument);
  auto q = tokenizer::encode_sequence("q", "MJLJ", {.max_len = cfg.max_len});
  auto out = m.masked_logits(q, false, rng);
  EXPECT_EQ(out.logits.rows(), 2u);
  EXPECT_EQ(out.logits.cols(), 30u);
}

TEST(Model, EvalModeIsDeterministicTrainingModeIsNot) {
  auto cfg = small();
  Model m(cfg, 1);
  gradcheck::probe_initialize(m.parameters(), 1);
  std::mt19937_64 g(1);
  auto ex = random_example(g, cfg.max_len, 12);
  tensor::Rng a(1), b(2);
  auto e1 = m.masked_logits(ex, false, a), e2 = m.masked_logits(ex, false, b);
  auto t1 = m.masked_logits(ex, true, a), t2 = m.masked_logits(ex, true, b);
  bool same_eval = true, same_train = true;
  for (std::size_t i = 0; i < e1.logits.size(); ++i) {
    same_eval &= e1.logits.data()[i] == e2.logits.data()[i];
    same_train &= t1.logits.data()[i] == t2.logits.data()[i];
  }
  EXPECT_TRUE(same_eval);
  EXPECT_FALSE(same_train);
}

TEST(Model, FreezeLeavesEncoderUntracked) {
  auto cfg = small();
  cfg.freeze_encoder = true;
  Model m(cfg, 1);
  EXPECT_EQ(m.trainable().size(), m.parameters().named_head().size());
  for (auto& [name, t] : m.parameters().named_encoder()) EXPECT_FALSE(t.requires_grad()) << name;
  std::mt19937_64 g(1);
  auto ex = random_example(g, cfg.max_len, 8);
  tensor::Rng rng(0);
  auto out = m.masked_logits(ex, false, rng);
  tensor::backward(masked_cross_entropy(out.logits, out.labels).loss);
  for (auto& [name, t] : m.parameters().named_encoder()) EXPECT_FALSE(t.has_grad()) << name;
  EXPECT_TRUE(m.parameters().head.w1.has_grad());
}

TEST(Model, EncodeRejectsBadShapes) {
  Model m(small(), 1);
  std::vector<int> ids(30, 5);
  std::vector<std::uint8_t> mask(30, 1);
  EXPECT_THROW(m.encode(ids, mask), ShapeError);
  std::vector<int> two{2, 5};
  std::vector<std::uint8_t> one{1};
  EXPECT_THROW(m.encode(two, one), ShapeError);
  std::vector<std::uint8_t> zero{0, 0};
  EXPECT_THROW(m.encode(two, zero), InvalidArgument);
}
