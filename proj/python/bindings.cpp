#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "gpcrbert/baselines.hpp"
#include "gpcrbert/checkpoint.hpp"
#include "gpcrbert/corpus.hpp"
#include "gpcrbert/error.hpp"
#include "gpcrbert/gradcheck.hpp"
#include "gpcrbert/model.hpp"
#include "gpcrbert/tokenizer.hpp"
#include "gpcrbert/trainer.hpp"
#include "gpcrbert/tsne.hpp"

namespace py = pybind11;
using namespace gpcrbert;

namespace {

text::KeyValues to_key_values(const py::dict& d) {
  text::KeyValues kv;
  for (auto [k, v] : d) kv[py::str(k)] = py::str(v);
  return kv;
}

model::ModelConfig make_config(const std::string& preset, const py::dict& overrides) {
  auto kv = to_key_values(overrides);
  kv["preset"] = preset;
  return model::ModelConfig::from_key_values(kv);
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

tokenizer::MaskedExample query(const model::Model& m, const std::string& sequence) {
  tokenizer::EncodeOptions enc;
  enc.max_len = m.config().max_len;
  return tokenizer::encode_sequence("query", upper(sequence), enc);
}

std::vector<tokenizer::MaskedExample> load_pairs(const std::filesystem::path& path, std::size_t max_len) {
  tokenizer::EncodeOptions enc;
  enc.max_len = max_len;
  return tokenizer::encode_all(corpus::read_pairs_csv(path), enc);
}

// Residue probabilities (rows = 'J' positions, columns = vocabulary ids).
py::array_t<double> predict(const model::Model& m, const std::string& sequence) {
  auto ex = query(m, sequence);
  if (ex.mask_positions.empty()) throw InvalidArgument("the sequence has no 'J' to predict");
  tensor::NoGradGuard no_grad;
  tensor::Rng unused(0);
  auto logits = m.masked_logits(ex, false, unused).logits;
  py::array_t<double> out({logits.rows(), logits.cols()});
  auto p = out.mutable_unchecked<2>();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double peak = -INFINITY, sum = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) peak = std::max(peak, static_cast<double>(logits.at(r, c)));
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      sum += p(r, c) = std::exp(static_cast<double>(logits.at(r, c)) - peak);
    }
    for (std::size_t c = 0; c < logits.cols(); ++c) p(r, c) /= sum;
  }
  return out;
}

// [layers, heads, n, n] at the full padded length.
py::array_t<double> attention(const model::Model& m, const std::string& sequence) {
  auto ex = query(m, sequence);
  tensor::NoGradGuard no_grad;
  model::ForwardOptions fo;
  fo.capture_attention = true;
  fo.trim_padding = false;
  const auto st = *m.encode(ex, fo).attention;
  py::array_t<double> out({st.n_layers, st.n_heads, st.seq_len, st.seq_len});
  auto a = out.mutable_unchecked<4>();
  for (std::size_t l = 0; l < st.n_layers; ++l)
    for (std::size_t h = 0; h < st.n_heads; ++h)
      for (std::size_t q = 0; q < st.seq_len; ++q)
        for (std::size_t k = 0; k < st.seq_len; ++k) a(l, h, q, k) = st.at(l, h).at(q, k);
  return out;
}

py::dict summary(const trainer::TrainResult& r) {
  py::dict d;
  const auto put = [&](const char* name, const trainer::MeanStd& ms) { d[name] = py::make_tuple(ms.mean, ms.std); };
  put("train_loss", r.train_loss);
  put("train_accuracy", r.train_accuracy);
  put("test_loss", r.test_loss);
  put("test_accuracy", r.test_accuracy);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core of gpcrbert";
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  m.attr("IGNORE") = tokenizer::kIgnore;

  m.def("vocab", [] {
    const auto& v = tokenizer::Vocab::standard();
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(v.token(static_cast<int>(i)));
    return out;
  });
  m.def("vocab_hash", [] { return tokenizer::Vocab::standard().hash(); });
  m.def(
      "encode_sequence",
      [](const std::string& sequence, std::size_t max_len) {
        tokenizer::EncodeOptions enc;
        enc.max_len = max_len;
        auto ex = tokenizer::encode_sequence("query", upper(sequence), enc);
        py::dict d;
        d["input_ids"] = ex.input_ids;
        d["attention_mask"] = std::vector<int>(ex.attention_mask.begin(), ex.attention_mask.end());
        d["mask_positions"] = ex.mask_positions;
        return d;
      },
      py::arg("sequence"), py::arg("max_len") = 372, "Token ids with [CLS] first; 'J' becomes [MASK].");
  m.def("decode", [](const std::vector<int>& ids) { return tokenizer::decode(ids); });

  py::class_<model::Model>(m, "Model")
      .def(py::init([](const std::string& preset, std::uint64_t seed, const py::dict& overrides) {
             return model::Model(make_config(preset, overrides), seed);
           }),
           py::arg("preset") = "desk", py::arg("seed") = 0, py::arg("overrides") = py::dict())
      .def_static("load", &checkpoint::load_model, py::arg("path"))
      .def("save",
           [](const model::Model& self, const std::filesystem::path& path) {
             checkpoint::write_checkpoint(path, self.parameters(), self.config());
           })
      .def_property_readonly("config", [](const model::Model& self) { return self.config().to_key_values(); })
      .def("predict", &predict, py::arg("sequence"), "Softmax rows for each 'J' in the sequence.")
      .def("attention", &attention, py::arg("sequence"))
      .def(
          "evaluate",
          [](const model::Model& self, const std::filesystem::path& pairs_csv) {
            auto r = trainer::evaluate(self, load_pairs(pairs_csv, self.config().max_len));
            return py::make_tuple(r.loss, r.accuracy, r.n_tokens);
          },
          py::arg("pairs_csv"));

  m.def(
      "gradcheck",
      [](const std::string& preset, std::uint64_t seed, std::size_t max_entries) {
        gradcheck::Options o;
        o.seed = seed;
        o.max_entries_per_tensor = max_entries;
        auto r = gradcheck::run(make_config(preset, py::dict()), o);
        py::dict d;
        d["max_rel_error"] = r.max_rel_error;
        d["tolerance"] = r.tolerance;
        d["passed"] = r.passed;
        return d;
      },
      py::arg("preset") = "tiny", py::arg("seed") = 1, py::arg("max_entries") = 0);

  m.def(
      "train",
      [](const std::filesystem::path& pairs_csv, const std::string& preset, const py::dict& model_overrides,
         const py::dict& train_config) {
        auto mc = make_config(preset, model_overrides);
        auto tc = trainer::TrainConfig::from_key_values(to_key_values(train_config));
        trainer::TrainResult r;
        {
          py::gil_scoped_release release;
          r = trainer::train(mc, tc, load_pairs(pairs_csv, mc.max_len));
        }
        std::ostringstream csv;
        trainer::write_metrics_csv(csv, r);
        return py::make_tuple(std::move(r.models.front()), csv.str(), summary(r));
      },
      py::arg("pairs_csv"), py::arg("preset") = "desk", py::arg("model_overrides") = py::dict(),
      py::arg("train_config") = py::dict(), "Returns (run-0 model, metrics CSV, summary dict).");

  m.def(
      "tsne",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> x, double perplexity,
         std::size_t iterations, std::uint64_t seed) {
        if (x.ndim() != 2) throw ShapeError("tsne: expected a 2-D array");
        tsne::Matrix mx(static_cast<std::size_t>(x.shape(0)), static_cast<std::size_t>(x.shape(1)));
        std::copy(x.data(), x.data() + x.size(), mx.data.begin());
        tsne::TsneConfig cfg;
        cfg.perplexity = perplexity;
        cfg.iterations = iterations;
        cfg.seed = seed;
        auto r = tsne::tsne(mx, cfg);
        py::array_t<double> coords({r.coords.rows, r.coords.cols});
        std::copy(r.coords.data.begin(), r.coords.data.end(), coords.mutable_data());
        return py::make_tuple(coords, r.kl);
      },
      py::arg("x"), py::arg("perplexity") = 15.0, py::arg("iterations") = 1000, py::arg("seed") = 0,
      "Returns (coords, KL per step).");

  m.def(
      "svm_baseline",
      [](const std::filesystem::path& pairs_csv, std::size_t max_len, double split_ratio, std::uint64_t seed,
         double lambda, std::size_t steps) {
        auto split = corpus::split_dataset(load_pairs(pairs_csv, max_len), split_ratio, seed);
        auto train_x = baselines::svm_instances(split.train);
        auto test_x = baselines::svm_instances(split.test);
        baselines::SvmConfig cfg;
        cfg.seed = seed;
        cfg.lambda = lambda;
        cfg.steps = steps;
        auto svm = baselines::svm_train(train_x, baselines::instance_dim(max_len), cfg);
        std::vector<int> train_labels, test_labels;
        for (const auto& x : train_x) train_labels.push_back(x.label);
        for (const auto& x : test_x) test_labels.push_back(x.label);
        auto majority = baselines::majority_baseline(train_labels);
        py::dict d;
        d["train_accuracy"] = baselines::svm_accuracy(svm, train_x);
        d["test_accuracy"] = baselines::svm_accuracy(svm, test_x);
        d["majority_test_accuracy"] = baselines::majority_accuracy(majority, test_labels);
        return d;
      },
      py::arg("pairs_csv"), py::arg("max_len") = 372, py::arg("split_ratio") = 0.75, py::arg("seed") = 42,
      py::arg("lam") = 1e-4, py::arg("steps") = 20000);

  m.def(
      "read_container_header",
      [](const std::filesystem::path& path) {
        auto c = checkpoint::read_container(path);
        py::dict d;
        d["kind"] = c.kind;
        d["config"] = c.config;
        d["vocab_hash"] = c.vocab_hash;
        std::vector<std::string> names;
        for (const auto& t : c.tensors) names.push_back(t.name);
        d["tensors"] = names;
        return d;
      },
      py::arg("path"));
}
