#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "gpcrbert/baselines.hpp"
#include "gpcrbert/checkpoint.hpp"
#include "gpcrbert/corpus.hpp"
#include "gpcrbert/gradcheck.hpp"
#include "gpcrbert/interpret.hpp"
#include "gpcrbert/model.hpp"
#include "gpcrbert/svg.hpp"
#include "gpcrbert/text.hpp"
#include "gpcrbert/tokenizer.hpp"
#include "gpcrbert/trainer.hpp"
#include "gpcrbert/tsne.hpp"

namespace gpcrbert::cli {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Writes through a temporary sibling and renames, so a failed command never
// leaves a half-written artifact behind.
template <typename Fn>
void write_file(const fs::path& path, Fn&& fill) {
  if (path.empty()) throw Error("empty output path");
  fs::path tmp = path;
  tmp += ".tmp";
  try {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    fill(out);
    out.close();
    if (!out) throw Error("cannot write " + path.string());
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ignored;
    fs::remove(tmp, ignored);
    throw;
  }
}

std::vector<corpus::ProteinRecord> load_corpus(const fs::path& path, const std::string& format) {
  if (!fs::exists(path)) throw Error("no such file: " + path.string());
  corpus::CorpusFormat f = corpus::guess_format(path);
  if (!format.empty()) {
    auto named = corpus::format_from_name(format);
    if (!named) throw InvalidArgument("unknown corpus format '" + format + "' (csv or fasta)");
    f = *named;
  }
  return corpus::parse_corpus(path, f);
}

model::ModelConfig load_model_config(const std::string& spec, const std::string& fallback) {
  const std::string& s = spec.empty() ? fallback : spec;
  if (!fs::exists(s)) {
    if (s == "desk") return model::ModelConfig::desk();
    if (s == "tiny") return model::ModelConfig::tiny();
    if (s == "full" || s == "full_scale") return model::ModelConfig::full_scale();
    throw Error("no such model config file or preset: " + s);
  }
  return model::ModelConfig::from_key_values(text::read_key_values(s));
}

std::vector<tokenizer::MaskedExample> load_examples(const fs::path& data, std::size_t max_len) {
  if (!fs::exists(data)) throw Error("no such file: " + data.string());
  tokenizer::EncodeOptions enc;
  enc.max_len = max_len;
  auto examples = tokenizer::encode_all(corpus::read_pairs_csv(data), enc);
  if (examples.empty()) throw InvalidArgument(data.string() + " holds no pairs");
  return examples;
}

std::map<std::string, std::size_t> class_counts(const std::vector<corpus::RawMaskedPair>& pairs) {
  std::map<std::string, std::size_t> counts;
  for (const auto& p : pairs) ++counts[p.receptor_class];
  return counts;
}

void report_pairs(std::ostream& out, std::size_t n_records, const std::vector<corpus::RawMaskedPair>& pairs) {
  out << n_records << " records after filtering\n" << pairs.size() << " pairs\n";
  for (const auto& [cls, n] : class_counts(pairs)) out << "  " << cls << ": " << n << '\n';
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked-residue transformer toolkit for receptor sequences", "gpcrbert"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // prepare
  std::string input, format, output, motif;
  std::size_t max_len = 370;
  auto* prepare = app.add_subcommand("prepare", "Corpus to motif-masked pairs CSV");
  prepare->add_option("--input", input, "Corpus (CSV id,receptor_class,sequence or FASTA)")->required();
  prepare->add_option("--format", format, "csv or fasta; guessed from the extension by default");
  prepare->add_option("--motif", motif, "npxxy, cwxp or edry")->required();
  prepare->add_option("--out", output, "Pairs CSV to write")->required();
  prepare->add_option("--max-len", max_len, "Drop sequences longer than this")->capture_default_str();

  // prepare-span
  std::size_t span_start = 100, span_count = 5;
  auto* prepare_span = app.add_subcommand("prepare-span", "Corpus to contiguous-span masked pairs CSV");
  prepare_span->add_option("--input", input)->required();
  prepare_span->add_option("--format", format);
  prepare_span->add_option("--start", span_start, "0-based first masked residue")->capture_default_str();
  prepare_span->add_option("--count", span_count, "Number of masked residues")->capture_default_str();
  prepare_span->add_option("--out", output)->required();
  prepare_span->add_option("--max-len", max_len)->capture_default_str();

  // stats
  std::size_t bin_width = 10;
  std::string histogram_out, classes_out;
  auto* stats = app.add_subcommand("stats", "Length histogram and class counts");
  stats->add_option("--input", input)->required();
  stats->add_option("--format", format);
  stats->add_option("--bin-width", bin_width)->capture_default_str();
  stats->add_option("--histogram", histogram_out, "Write the histogram CSV here");
  stats->add_option("--classes", classes_out, "Write the class counts CSV here");

  // train
  std::string data, model_config, train_config, metrics_out, summary_out;
  std::size_t runs = 3;
  std::uint64_t seed = 42;
  std::size_t epochs = 0;
  bool verbose = false;
  auto* train = app.add_subcommand("train", "Train from scratch and write the run-0 checkpoint");
  train->add_option("--data", data, "Pairs CSV")->required();
  train->add_option("--model-config", model_config, "key = value file or preset (desk, tiny, full_scale)");
  train->add_option("--train-config", train_config, "key = value file");
  train->add_option("--runs", runs)->capture_default_str();
  train->add_option("--seed", seed)->capture_default_str();
  train->add_option("--epochs", epochs, "Override the train config epoch count");
  train->add_option("--out", output, "Checkpoint path")->required();
  train->add_option("--metrics", metrics_out, "Metrics CSV (default: <out>.metrics.csv)");
  train->add_option("--summary", summary_out, "Summary text (default: <out>.summary.txt)");
  train->add_flag("--verbose", verbose, "Print every epoch");

  // eval
  std::string ckpt;
  auto* eval = app.add_subcommand("eval", "Loss and accuracy of a checkpoint on a pairs CSV");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--data", data)->required();

  // predict
  std::string sequence;
  std::size_t top = 5;
  auto* predict = app.add_subcommand("predict", "Top residues for every 'J' in a sequence");
  predict->add_option("--ckpt", ckpt)->required();
  predict->add_option("--sequence", sequence)->required();
  predict->add_option("--top", top)->capture_default_str();

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Interpretability reports");
  analyze->require_subcommand(1);

  std::size_t k = 5, heatmap_index = 0;
  int layer = -1;
  bool include_cls = false;
  std::string annotations, heatmap_svg, repetition_out;
  auto* attention = analyze->add_subcommand("attention", "Top-k attended residues per head and masked position");
  attention->add_option("--ckpt", ckpt)->required();
  attention->add_option("--data", data)->required();
  attention->add_option("--k", k)->capture_default_str();
  attention->add_option("--layer", layer, "Negative values count from the last layer")->capture_default_str();
  attention->add_flag("--include-cls", include_cls, "Allow [CLS] among the top-k");
  attention->add_option("--annotations", annotations, "CSV id,seq_index,bw_label");
  attention->add_option("--out", output, "Report CSV (default: stdout)");
  attention->add_option("--repetition", repetition_out, "Per-class repetition table CSV");
  attention->add_option("--heatmap-svg", heatmap_svg, "Heatmap of one example");
  attention->add_option("--heatmap-index", heatmap_index, "Row of --data to plot")->capture_default_str();

  std::string svg_out;
  tsne::TsneConfig tsne_cfg;
  auto* tsne_cmd = analyze->add_subcommand("tsne", "[CLS] embeddings projected with t-SNE");
  tsne_cmd->add_option("--ckpt", ckpt)->required();
  tsne_cmd->add_option("--input", input)->required();
  tsne_cmd->add_option("--format", format);
  tsne_cmd->add_option("--out", output, "Coordinates CSV")->required();
  tsne_cmd->add_option("--svg", svg_out);
  tsne_cmd->add_option("--perplexity", tsne_cfg.perplexity)->capture_default_str();
  tsne_cmd->add_option("--iterations", tsne_cfg.iterations)->capture_default_str();
  tsne_cmd->add_option("--learning-rate", tsne_cfg.learning_rate)->capture_default_str();
  tsne_cmd->add_option("--seed", tsne_cfg.seed)->capture_default_str();

  std::string report, mutagenesis;
  std::size_t window = 5;
  auto* mutagenesis_cmd = analyze->add_subcommand("mutagenesis", "Cross-reference a report with mutagenesis data");
  mutagenesis_cmd->add_option("--report", report)->required();
  mutagenesis_cmd->add_option("--annotations", annotations)->required();
  mutagenesis_cmd->add_option("--mutagenesis", mutagenesis, "CSV class,bw,effect[,note]")->required();
  mutagenesis_cmd->add_option("--window", window)->capture_default_str();
  mutagenesis_cmd->add_option("--input", input, "Corpus supplying classes and residues");
  mutagenesis_cmd->add_option("--format", format);
  mutagenesis_cmd->add_option("--out", output, "Match CSV (default: stdout)");

  // baseline
  auto* baseline = app.add_subcommand("baseline", "Reference models");
  baseline->require_subcommand(1);
  baselines::SvmConfig svm_cfg;
  double split_ratio = 0.75;
  std::size_t svm_max_len = 372;
  auto* svm = baseline->add_subcommand("svm", "One-vs-rest linear SVM on one-hot features");
  svm->add_option("--data", data)->required();
  svm->add_option("--lambda", svm_cfg.lambda)->capture_default_str();
  svm->add_option("--steps", svm_cfg.steps)->capture_default_str();
  svm->add_option("--seed", seed)->capture_default_str();
  svm->add_option("--split-ratio", split_ratio)->capture_default_str();
  svm->add_option("--max-len", svm_max_len, "Token length of the encoding")->capture_default_str();
  svm->add_option("--out", output, "Write the model container here");

  // gradcheck
  gradcheck::Options gc;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  grad->add_option("--model-config", model_config, "key = value file or preset")->capture_default_str();
  grad->add_option("--seed", gc.seed)->capture_default_str();
  grad->add_option("--max-entries", gc.max_entries_per_tensor, "Entries sampled per tensor (0 = all)");

  // vocab
  auto* vocab = app.add_subcommand("vocab", "Vocabulary utilities");
  vocab->require_subcommand(1);
  auto* vocab_dump = vocab->add_subcommand("dump", "Print index,token");
  vocab_dump->add_option("--out", output);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (prepare->parsed()) {
      auto kind = corpus::motif_from_name(motif);
      if (!kind) throw InvalidArgument("unknown motif '" + motif + "' (npxxy, cwxp or edry)");
      auto records = corpus::filter_corpus(load_corpus(input, format), max_len);
      auto pairs = corpus::build_motif_dataset(records, *kind);
      write_file(output, [&](std::ostream& o) { corpus::write_pairs_csv(o, pairs); });
      report_pairs(out, records.size(), pairs);
    } else if (prepare_span->parsed()) {
      auto records = corpus::filter_corpus(load_corpus(input, format), max_len);
      auto pairs = corpus::build_span_dataset(records, span_start, span_count);
      write_file(output, [&](std::ostream& o) { corpus::write_pairs_csv(o, pairs); });
      report_pairs(out, records.size(), pairs);
    } else if (stats->parsed()) {
      auto records = load_corpus(input, format);
      auto s = corpus::corpus_stats(records, bin_width);
      out << records.size() << " records\n";
      if (!histogram_out.empty()) {
        write_file(histogram_out, [&](std::ostream& o) { corpus::write_histogram_csv(o, s); });
      } else {
        corpus::write_histogram_csv(out, s);
      }
      if (!classes_out.empty()) {
        write_file(classes_out, [&](std::ostream& o) { corpus::write_class_counts_csv(o, s); });
      } else {
        corpus::write_class_counts_csv(out, s);
      }
    } else if (train->parsed()) {
      auto mc = load_model_config(model_config, "desk");
      trainer::TrainConfig tc;
      if (!train_config.empty()) tc = trainer::TrainConfig::from_key_values(text::read_key_values(train_config));
      tc.seed = seed;
      tc.n_runs = runs;
      if (train->count("--epochs") > 0) tc.epochs = epochs;
      tc.validate();
      auto examples = load_examples(data, mc.max_len);
      trainer::EpochCallback progress;
      if (verbose) {
        progress = [&](const trainer::RunMetrics& r, const trainer::EpochMetrics& e) {
          out << "run " << r.run << " epoch " << e.epoch << " loss " << fmt(e.train_loss) << " acc "
              << fmt(e.train_accuracy) << " lr " << fmt(e.lr) << '\n';
        };
      }
      auto result = trainer::train(mc, tc, examples, progress);
      const std::string metrics_path = metrics_out.empty() ? output + ".metrics.csv" : metrics_out;
      const std::string summary_path = summary_out.empty() ? output + ".summary.txt" : summary_out;
      write_file(output, [&](std::ostream& o) {
        checkpoint::write_checkpoint(o, result.models.front().parameters(), mc);
      });
      write_file(metrics_path, [&](std::ostream& o) { trainer::write_metrics_csv(o, result); });
      write_file(summary_path, [&](std::ostream& o) { trainer::write_summary(o, result); });
      trainer::write_summary(out, result);
    } else if (eval->parsed()) {
      auto m = checkpoint::load_model(ckpt);
      auto r = trainer::evaluate(m, load_examples(data, m.config().max_len));
      out << "loss " << fmt(r.loss) << "\naccuracy " << fmt(r.accuracy) << "\ntokens " << r.n_tokens << '\n';
    } else if (predict->parsed()) {
      auto m = checkpoint::load_model(ckpt);
      tokenizer::EncodeOptions enc;
      enc.max_len = m.config().max_len;
      std::transform(sequence.begin(), sequence.end(), sequence.begin(),
                     [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
      auto ex = tokenizer::encode_sequence("query", sequence, enc);
      if (ex.mask_positions.empty()) throw InvalidArgument("the sequence has no 'J' to predict");
      tensor::NoGradGuard no_grad;
      tensor::Rng unused(0);
      auto logits = m.masked_logits(ex, false, unused).logits;
      const auto& v = tokenizer::Vocab::standard();
      for (std::size_t r = 0; r < ex.mask_positions.size(); ++r) {
        std::vector<double> p(logits.cols());
        double peak = -INFINITY, sum = 0.0;
        for (std::size_t c = 0; c < p.size(); ++c) peak = std::max(peak, static_cast<double>(logits.at(r, c)));
        for (std::size_t c = 0; c < p.size(); ++c) sum += p[c] = std::exp(static_cast<double>(logits.at(r, c)) - peak);
        std::vector<int> ids;
        for (int id = tokenizer::kFirstResidue; id < tokenizer::kVocabSize; ++id) ids.push_back(id);
        std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return p[a] > p[b]; });
        out << "mask at " << ex.mask_positions[r] - 1 << ':';
        for (std::size_t i = 0; i < std::min(top, ids.size()); ++i) {
          out << ' ' << v.residue(ids[i]) << ' ' << fmt(p[static_cast<std::size_t>(ids[i])] / sum, "%.4f");
        }
        out << '\n';
      }
    } else if (attention->parsed()) {
      auto m = checkpoint::load_model(ckpt);
      tokenizer::EncodeOptions enc;
      enc.max_len = m.config().max_len;
      auto pairs = corpus::read_pairs_csv(data);
      auto examples = tokenizer::encode_all(pairs, enc);
      interpret::TopKOptions opts{k, layer, include_cls};
      std::vector<interpret::ReportRow> rows;
      std::map<std::string, std::string> sequences, classes;
      for (std::size_t i = 0; i < examples.size(); ++i) {
        auto part = interpret::top_k_attention(m, examples[i], opts);
        rows.insert(rows.end(), part.begin(), part.end());
        sequences[examples[i].source_id] = interpret::true_sequence(examples[i]);
        classes[examples[i].source_id] = pairs[i].receptor_class;
      }
      if (!annotations.empty()) interpret::annotate(rows, interpret::read_annotations_csv(annotations));
      if (output.empty()) {
        interpret::write_report_csv(out, rows);
      } else {
        write_file(output, [&](std::ostream& o) { interpret::write_report_csv(o, rows); });
        out << rows.size() << " report rows\n";
      }
      if (!repetition_out.empty()) {
        auto table = interpret::repetition_table(rows, sequences, classes);
        write_file(repetition_out, [&](std::ostream& o) { interpret::write_repetition_csv(o, table); });
      }
      if (!heatmap_svg.empty()) {
        if (heatmap_index >= examples.size()) throw InvalidArgument("--heatmap-index beyond the data");
        const auto& ex = examples[heatmap_index];
        auto heads = interpret::attention_heatmap(m, ex, layer);
        svg::HeatmapOptions hopts;
        hopts.title = ex.source_id + " layer " + std::to_string(layer);
        write_file(heatmap_svg, [&](std::ostream& o) { svg::write_heatmap(o, heads, hopts); });
      }
    } else if (tsne_cmd->parsed()) {
      auto m = checkpoint::load_model(ckpt);
      auto emb = interpret::extract_cls(m, load_corpus(input, format));
      for (const auto& id : emb.skipped) err << "warning: skipped " << id << " (does not tokenize)\n";
      auto result = tsne::tsne(emb.matrix, tsne_cfg);
      write_file(output, [&](std::ostream& o) {
        o << "id,class,x,y\n";
        for (std::size_t i = 0; i < emb.ids.size(); ++i) {
          o << emb.ids[i] << ',' << emb.classes[i] << ',' << fmt(result.coords(i, 0), "%.9g") << ','
            << fmt(result.coords(i, 1), "%.9g") << '\n';
        }
      });
      if (!svg_out.empty()) {
        write_file(svg_out, [&](std::ostream& o) { svg::write_scatter(o, result.coords, emb.classes, "[CLS] t-SNE"); });
      }
      out << emb.ids.size() << " points, KL " << fmt(result.kl.front()) << " -> " << fmt(result.kl.back())
          << ", nearest-centroid purity " << fmt(tsne::nearest_centroid_purity(result.coords, emb.classes)) << '\n';
    } else if (mutagenesis_cmd->parsed()) {
      auto rows = interpret::read_report_csv(report);
      interpret::MatchContext ctx;
      if (!input.empty()) {
        for (const auto& r : load_corpus(input, format)) {
          ctx.classes[r.id] = r.receptor_class;
          ctx.sequences[r.id] = r.sequence;
        }
      }
      auto matches = interpret::mutagenesis_match(rows, interpret::read_annotations_csv(annotations),
                                                  interpret::read_mutagenesis_csv(mutagenesis), window, ctx);
      if (output.empty()) {
        interpret::write_match_csv(out, matches);
      } else {
        write_file(output, [&](std::ostream& o) { interpret::write_match_csv(o, matches); });
        std::size_t exact = 0, near = 0;
        for (const auto& m : matches) {
          exact += m.kind == interpret::MatchKind::kExact;
          near += m.kind == interpret::MatchKind::kNear;
        }
        out << matches.size() << " entries, " << exact << " exact, " << near << " nearby\n";
      }
    } else if (svm->parsed()) {
      auto examples = load_examples(data, svm_max_len);
      auto split = corpus::split_dataset(examples, split_ratio, seed);
      auto train_x = baselines::svm_instances(split.train);
      auto test_x = baselines::svm_instances(split.test);
      svm_cfg.seed = seed;
      auto model = baselines::svm_train(train_x, baselines::instance_dim(svm_max_len), svm_cfg);
      std::vector<int> train_labels, test_labels;
      for (const auto& x : train_x) train_labels.push_back(x.label);
      for (const auto& x : test_x) test_labels.push_back(x.label);
      auto majority = baselines::majority_baseline(train_labels);
      out << "train_accuracy " << fmt(baselines::svm_accuracy(model, train_x)) << '\n'
          << "test_accuracy " << fmt(baselines::svm_accuracy(model, test_x)) << '\n'
          << "majority_residue " << tokenizer::Vocab::standard().token(majority.label) << '\n'
          << "majority_test_accuracy " << fmt(baselines::majority_accuracy(majority, test_labels)) << '\n';
      if (!output.empty()) {
        write_file(output, [&](std::ostream& o) { checkpoint::write_container(o, baselines::to_container(model)); });
      }
    } else if (grad->parsed()) {
      auto mc = load_model_config(model_config, "tiny");
      auto r = gradcheck::run(mc, gc);
      for (const auto& p : r.parameters) {
        out << "  " << p.name << " rel err " << fmt(p.rel_error, "%.3e") << '\n';
      }
      out << (r.passed ? "PASS" : "FAIL") << ", max rel err " << fmt(r.max_rel_error, "%.3e")
          << (r.passed ? " < tol " : " >= tol ") << fmt(r.tolerance, "%.0e") << '\n';
      return r.passed ? 0 : 1;
    } else if (vocab_dump->parsed()) {
      if (output.empty()) {
        tokenizer::Vocab::standard().dump_csv(out);
      } else {
        write_file(output, [&](std::ostream& o) { tokenizer::Vocab::standard().dump_csv(o); });
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace gpcrbert::cli
