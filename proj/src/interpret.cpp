#include "gpcrbert/interpret.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <regex>
#include <set>
#include <tuple>

#include "gpcrbert/error.hpp"
#include "gpcrbert/text.hpp"

namespace gpcrbert::interpret {

namespace {

std::size_t resolve_layer(const model::ModelConfig& config, int layer) {
  const long n = static_cast<long>(config.n_layers);
  const long l = layer < 0 ? n + layer : layer;
  if (l < 0 || l >= n) {
    throw InvalidArgument("layer " + std::to_string(layer) + " outside a " + std::to_string(n) + "-layer model");
  }
  return static_cast<std::size_t>(l);
}

std::vector<std::string> csv_fields(const std::string& line, std::size_t expected, std::size_t line_no) {
  auto fields = text::split(line, ',');
  if (fields.size() != expected) {
    throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(expected) +
                     " fields, got " + std::to_string(fields.size()));
  }
  return fields;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

}  // namespace

ClsEmbeddings extract_cls(const model::Model& model, const std::vector<corpus::ProteinRecord>& records) {
  tensor::NoGradGuard no_grad;
  ClsEmbeddings out;
  const std::size_t d = model.config().d_model;
  tokenizer::EncodeOptions enc;
  enc.max_len = model.config().max_len;
  std::vector<double> rows;
  for (const auto& r : records) {
    tokenizer::MaskedExample ex;
    try {
      ex = tokenizer::encode_sequence(r.id, r.sequence, enc);
    } catch (const Error&) {
      out.skipped.push_back(r.id);
      continue;
    }
    auto enc_out = model.encode(ex);
    const auto h = enc_out.final_hidden().data();
    rows.insert(rows.end(), h.begin(), h.begin() + static_cast<std::ptrdiff_t>(d));
    out.ids.push_back(r.id);
    out.classes.push_back(r.receptor_class);
  }
  out.matrix.rows = out.ids.size();
  out.matrix.cols = d;
  out.matrix.data = std::move(rows);
  return out;
}

std::vector<RankedColumn> top_k_row(std::span<const Real> row, std::span<const std::uint8_t> attention_mask,
                                    std::size_t query, std::size_t k, bool include_cls) {
  if (row.size() > attention_mask.size()) {
    throw ShapeError("top_k_row: row of " + std::to_string(row.size()) + " with " +
                     std::to_string(attention_mask.size()) + " mask entries");
  }
  std::vector<RankedColumn> eligible;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (attention_mask[j] == 0 || j == query || (j == 0 && !include_cls)) continue;
    eligible.push_back({j, row[j]});
  }
  if (eligible.size() < k) {
    throw InvalidArgument("top_k_row: only " + std::to_string(eligible.size()) + " eligible columns for k = " +
                          std::to_string(k));
  }
  std::stable_sort(eligible.begin(), eligible.end(),
                   [](const RankedColumn& a, const RankedColumn& b) { return a.weight > b.weight; });
  eligible.resize(k);
  return eligible;
}

std::string true_sequence(const tokenizer::MaskedExample& example) {
  const auto& vocab = tokenizer::Vocab::standard();
  std::string seq;
  for (std::size_t i = 1; i < example.length() && example.attention_mask[i]; ++i) {
    int id = example.input_ids[i];
    if (id == tokenizer::kSep) break;
    if (id == tokenizer::kMask && example.label_ids[i] >= tokenizer::kFirstResidue) id = example.label_ids[i];
    seq.push_back(id >= tokenizer::kFirstResidue ? vocab.residue(id) : id == tokenizer::kMask ? 'J' : 'X');
  }
  return seq;
}

std::vector<ReportRow> top_k_attention(const model::Model& model, const tokenizer::MaskedExample& example,
                                       const TopKOptions& options) {
  if (example.mask_positions.empty()) throw InvalidArgument("top_k_attention: example has no masked position");
  const std::size_t layer = resolve_layer(model.config(), options.layer);
  tensor::NoGradGuard no_grad;
  model::ForwardOptions fwd;
  fwd.capture_attention = true;
  const auto out = model.encode(example, fwd);
  const auto& stack = *out.attention;
  const std::string seq = true_sequence(example);
  std::vector<ReportRow> rows;
  for (std::size_t h = 0; h < stack.n_heads; ++h) {
    const auto& m = stack.at(layer, h);
    for (auto q : example.mask_positions) {
      ReportRow row;
      row.id = example.source_id;
      row.head = h + 1;
      row.mask_pos = q - 1;
      const auto ranked = top_k_row(m.row(q), example.attention_mask, q, options.k, options.include_cls);
      for (std::size_t r = 0; r < ranked.size(); ++r) {
        ReportEntry e;
        e.rank = r + 1;
        e.seq_index = static_cast<long>(ranked[r].token) - 1;
        e.residue = e.seq_index < 0 ? "[CLS]" : std::string(1, seq[static_cast<std::size_t>(e.seq_index)]);
        e.weight = ranked[r].weight;
        row.entries.push_back(e);
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

Annotations read_annotations_csv(std::istream& in) {
  Annotations out;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = text::trim(line);
    if (line.empty()) continue;
    auto f = csv_fields(line, 3, line_no);
    if (!header) {
      if (f[0] != "id" || f[1] != "seq_index" || f[2] != "bw_label") {
        throw ParseError("annotations: expected header `id,seq_index,bw_label`");
      }
      header = true;
      continue;
    }
    out[f[0]][text::parse_size(f[1], "seq_index on line " + std::to_string(line_no))] = f[2];
  }
  return out;
}

Annotations read_annotations_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_annotations_csv(in);
}

void annotate(std::vector<ReportRow>& rows, const Annotations& annotations) {
  for (auto& row : rows) {
    auto it = annotations.find(row.id);
    if (it == annotations.end()) continue;
    for (auto& e : row.entries) {
      if (e.seq_index < 0) continue;
      auto bw = it->second.find(static_cast<std::size_t>(e.seq_index));
      if (bw != it->second.end()) e.bw = bw->second;
    }
  }
}

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  out << "id,head,mask_pos,rank,seq_index,residue,weight,bw\n";
  char weight[32];
  for (const auto& row : rows) {
    for (const auto& e : row.entries) {
      std::snprintf(weight, sizeof weight, "%.9g", static_cast<double>(e.weight));
      out << row.id << ',' << row.head << ',' << row.mask_pos << ',' << e.rank << ',' << e.seq_index << ','
          << e.residue << ',' << weight << ',' << e.bw << '\n';
    }
  }
}

std::vector<ReportRow> read_report_csv(std::istream& in) {
  std::vector<ReportRow> rows;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    auto f = csv_fields(line, 8, line_no);
    if (!header) {
      if (f[0] != "id" || f[1] != "head" || f[7] != "bw") {
        throw ParseError("report: expected header `id,head,mask_pos,rank,seq_index,residue,weight,bw`");
      }
      header = true;
      continue;
    }
    const std::string where = " on line " + std::to_string(line_no);
    const auto head = text::parse_size(f[1], "head" + where);
    const auto mask_pos = text::parse_size(f[2], "mask_pos" + where);
    if (rows.empty() || rows.back().id != f[0] || rows.back().head != head || rows.back().mask_pos != mask_pos) {
      rows.push_back({f[0], head, mask_pos, {}});
    }
    ReportEntry e;
    e.rank = text::parse_size(f[3], "rank" + where);
    e.seq_index = static_cast<long>(text::parse_int(f[4], "seq_index" + where));
    if (f[5].empty()) throw ParseError("empty residue" + where);
    e.residue = f[5];
    e.weight = static_cast<Real>(text::parse_double(f[6], "weight" + where));
    e.bw = f[7];
    rows.back().entries.push_back(e);
  }
  if (!header) throw ParseError("report: empty file");
  return rows;
}

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_report_csv(in);
}

std::string residue_window(std::string_view sequence, std::size_t index, std::size_t width) {
  if (index >= sequence.size()) return {};
  return std::string(sequence.substr(index, width));
}

std::vector<RepetitionRow> repetition_table(const std::vector<ReportRow>& rows,
                                            const std::map<std::string, std::string>& sequences,
                                            const std::map<std::string, std::string>& classes) {
  // (class, head, window) -> ids
  std::map<std::tuple<std::string, std::size_t, std::string>, std::set<std::string>> seen;
  for (const auto& row : rows) {
    auto seq = sequences.find(row.id);
    if (seq == sequences.end()) continue;
    auto cls = classes.find(row.id);
    const std::string receptor_class = cls == classes.end() ? std::string() : cls->second;
    for (const auto& e : row.entries) {
      if (e.seq_index < 0) continue;
      auto w = residue_window(seq->second, static_cast<std::size_t>(e.seq_index));
      if (w.empty()) continue;
      seen[{receptor_class, row.head, w}].insert(row.id);
    }
  }
  std::vector<RepetitionRow> out;
  for (const auto& [key, ids] : seen) {
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), ids.size()});
  }
  std::stable_sort(out.begin(), out.end(), [](const RepetitionRow& a, const RepetitionRow& b) {
    if (a.receptor_class != b.receptor_class) return a.receptor_class < b.receptor_class;
    if (a.head != b.head) return a.head < b.head;
    return a.repetition > b.repetition;
  });
  return out;
}

void write_repetition_csv(std::ostream& out, const std::vector<RepetitionRow>& rows) {
  out << "class,head,window,repetition\n";
  for (const auto& r : rows) {
    out << r.receptor_class << ',' << r.head << ',' << r.window << ',' << r.repetition << '\n';
  }
}

std::vector<model::AttentionMatrix> attention_heatmap(const model::Model& model,
                                                      const tokenizer::MaskedExample& example, int layer) {
  const std::size_t l = resolve_layer(model.config(), layer);
  tensor::NoGradGuard no_grad;
  model::ForwardOptions fwd;
  fwd.capture_attention = true;
  fwd.trim_padding = false;
  auto out = model.encode(example, fwd);
  std::vector<model::AttentionMatrix> heads;
  for (std::size_t h = 0; h < out.attention->n_heads; ++h) heads.push_back(out.attention->at(l, h));
  return heads;
}

bool is_bw_label(std::string_view bw) {
  static const std::regex pattern(R"(^(\d+\.\d+|\d+x\d+|H8(\.\d+)?|[IE]CL\d(\.\d+)?)$)");
  return std::regex_match(bw.begin(), bw.end(), pattern);
}

std::vector<MutagenesisRecord> read_mutagenesis_csv(std::istream& in) {
  std::vector<MutagenesisRecord> out;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = text::trim(line);
    if (line.empty()) continue;
    auto f = text::split(line, ',');
    if (f.size() != 3 && f.size() != 4) {
      throw ParseError("mutagenesis line " + std::to_string(line_no) + ": expected `class,bw,effect[,note]`");
    }
    if (!header) {
      if (f[0] != "class" || f[1] != "bw" || f[2] != "effect") {
        throw ParseError("mutagenesis: expected header `class,bw,effect[,note]`");
      }
      header = true;
      continue;
    }
    if (!is_bw_label(f[1])) {
      throw ParseError("mutagenesis line " + std::to_string(line_no) + ": '" + f[1] + "' is not a BW label");
    }
    out.push_back({f[0], f[1], f[2], f.size() == 4 ? f[3] : std::string()});
  }
  return out;
}

std::vector<MutagenesisRecord> read_mutagenesis_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_mutagenesis_csv(in);
}

std::vector<MutagenesisMatch> mutagenesis_match(const std::vector<ReportRow>& rows,
                                                const Annotations& annotations,
                                                const std::vector<MutagenesisRecord>& records,
                                                std::size_t window, const MatchContext& context) {
  static const std::map<std::size_t, std::string> kNoAnnotations;
  std::vector<MutagenesisMatch> out;
  for (const auto& row : rows) {
    auto ann_it = annotations.find(row.id);
    const auto& ann = ann_it == annotations.end() ? kNoAnnotations : ann_it->second;
    auto cls_it = context.classes.find(row.id);
    auto seq_it = context.sequences.find(row.id);

    // Effects recorded for a BW label in this entry's class, joined by ';'.
    auto effects_for = [&](const std::string& bw) {
      std::string joined;
      for (const auto& r : records) {
        if (r.bw != bw) continue;
        if (cls_it != context.classes.end() && r.receptor_class != cls_it->second) continue;
        if (!joined.empty()) joined += ';';
        joined += r.effect;
      }
      return joined;
    };
    auto residue_at = [&](long index) -> std::string {
      if (seq_it == context.sequences.end() || index < 0 ||
          static_cast<std::size_t>(index) >= seq_it->second.size()) {
        return {};
      }
      return std::string(1, seq_it->second[static_cast<std::size_t>(index)]) + " ";
    };

    for (const auto& e : row.entries) {
      MutagenesisMatch m;
      m.id = row.id;
      m.head = row.head;
      m.mask_pos = row.mask_pos;
      m.rank = e.rank;
      m.seq_index = e.seq_index;
      m.residue = e.residue;
      auto own = e.seq_index < 0 ? ann.end() : ann.find(static_cast<std::size_t>(e.seq_index));
      m.bw = own == ann.end() ? "unknown" : own->second;
      m.description = "no match";
      if (own != ann.end()) {
        const auto effects = effects_for(own->second);
        if (!effects.empty()) {
          m.kind = MatchKind::kExact;
          m.description = "exact " + e.residue + " " + own->second + " (" + effects + ")";
        }
      }
      for (std::size_t d = 1; m.kind == MatchKind::kNone && e.seq_index >= 0 && d <= window; ++d) {
        // The residue before the entry is tried first, so the entry reads "d after" it.
        for (long candidate : {e.seq_index - static_cast<long>(d), e.seq_index + static_cast<long>(d)}) {
          if (candidate < 0) continue;
          auto it = ann.find(static_cast<std::size_t>(candidate));
          if (it == ann.end()) continue;
          const auto effects = effects_for(it->second);
          if (effects.empty()) continue;
          m.kind = MatchKind::kNear;
          m.offset = e.seq_index - candidate;
          m.description = std::to_string(d) + (m.offset > 0 ? " after " : " before ") + residue_at(candidate) +
                          it->second + " (" + effects + ")";
          break;
        }
      }
      out.push_back(std::move(m));
    }
  }
  return out;
}

void write_match_csv(std::ostream& out, const std::vector<MutagenesisMatch>& matches) {
  out << "id,head,mask_pos,rank,seq_index,residue,bw,match\n";
  for (const auto& m : matches) {
    out << m.id << ',' << m.head << ',' << m.mask_pos << ',' << m.rank << ',' << m.seq_index << ',' << m.residue
        << ',' << m.bw << ',' << m.description << '\n';
  }
}

}  // namespace gpcrbert::interpret
