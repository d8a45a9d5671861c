#pragma once

// Attention and embedding analyses on a trained model.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gpcrbert/corpus.hpp"
#include "gpcrbert/model.hpp"
#include "gpcrbert/tokenizer.hpp"
#include "gpcrbert/tsne.hpp"

namespace gpcrbert::interpret {

struct ClsEmbeddings {
  tsne::Matrix matrix;  // one row of width d_model per embedded record
  std::vector<std::string> ids;
  std::vector<std::string> classes;
  std::vector<std::string> skipped;  // ids that could not be tokenized
};

// Final-layer hidden state at the [CLS] position, eval mode.
ClsEmbeddings extract_cls(const model::Model& model, const std::vector<corpus::ProteinRecord>& records);

struct RankedColumn {
  std::size_t token = 0;
  Real weight = 0;
};

// The k largest weights of one attention row, excluding [PAD] columns
// (attention_mask 0), the query column and, unless include_cls, column 0.
// Ties go to the lower column. Throws when fewer than k columns are eligible.
std::vector<RankedColumn> top_k_row(std::span<const Real> row, std::span<const std::uint8_t> attention_mask,
                                    std::size_t query, std::size_t k, bool include_cls = false);

struct TopKOptions {
  std::size_t k = 5;
  int layer = -1;  // negative counts from the end
  bool include_cls = false;
};

struct ReportEntry {
  std::size_t rank = 0;     // 1-based
  long seq_index = 0;       // 0-based residue index; -1 for [CLS]
  std::string residue;      // one letter, or [CLS]
  Real weight = 0;
  std::string bw;           // empty when not annotated
};

struct ReportRow {
  std::string id;
  std::size_t head = 0;      // 1-based
  std::size_t mask_pos = 0;  // 0-based sequence index of the masked query
  std::vector<ReportEntry> entries;
};

// Original residues of an example: masked inputs are filled from the labels.
std::string true_sequence(const tokenizer::MaskedExample& example);

std::vector<ReportRow> top_k_attention(const model::Model& model, const tokenizer::MaskedExample& example,
                                       const TopKOptions& options = {});

// Fills `bw` of every entry from per-id annotations.
using Annotations = std::map<std::string, std::map<std::size_t, std::string>>;
Annotations read_annotations_csv(std::istream& in);
Annotations read_annotations_csv(const std::filesystem::path& path);
void annotate(std::vector<ReportRow>& rows, const Annotations& annotations);

// `id,head,mask_pos,rank,seq_index,residue,weight,bw`
void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows);
std::vector<ReportRow> read_report_csv(std::istream& in);
std::vector<ReportRow> read_report_csv(const std::filesystem::path& path);

// Six-residue window starting at `index` (truncated at the sequence end).
std::string residue_window(std::string_view sequence, std::size_t index, std::size_t width = 6);

struct RepetitionRow {
  std::string receptor_class;
  std::size_t head = 0;
  std::string window;
  std::size_t repetition = 0;  // distinct sequences of the class
};

// For every (class, head, window): how many sequences of the class have the
// window in that head's top-k. `sequences` and `classes` are keyed by id.
std::vector<RepetitionRow> repetition_table(const std::vector<ReportRow>& rows,
                                            const std::map<std::string, std::string>& sequences,
                                            const std::map<std::string, std::string>& classes);
void write_repetition_csv(std::ostream& out, const std::vector<RepetitionRow>& rows);

// Per-head attention of one layer at full padded length, exactly as captured
// by the encoder.
std::vector<model::AttentionMatrix> attention_heatmap(const model::Model& model,
                                                      const tokenizer::MaskedExample& example, int layer = -1);

struct MutagenesisRecord {
  std::string receptor_class;
  std::string bw;
  std::string effect;
  std::string note;
};

bool is_bw_label(std::string_view bw);

// CSV `class,bw,effect[,note]`.
std::vector<MutagenesisRecord> read_mutagenesis_csv(std::istream& in);
std::vector<MutagenesisRecord> read_mutagenesis_csv(const std::filesystem::path& path);

enum class MatchKind { kExact, kNear, kNone };

struct MutagenesisMatch {
  std::string id;
  std::size_t head = 0;
  std::size_t mask_pos = 0;
  std::size_t rank = 0;
  long seq_index = 0;
  std::string residue;
  std::string bw;  // "unknown" when not annotated
  MatchKind kind = MatchKind::kNone;
  long offset = 0;  // entry index minus matched residue index
  std::string description;
};

struct MatchContext {
  // Optional per-id receptor class and sequence, from the corpus.
  std::map<std::string, std::string> classes;
  std::map<std::string, std::string> sequences;
};

// Exact BW hit, else the nearest annotated residue within +-window positions
// whose BW label has a mutagenesis record ("k before/after"), else no match.
// Records are restricted to the entry's class when the class is known.
std::vector<MutagenesisMatch> mutagenesis_match(const std::vector<ReportRow>& rows,
                                                const Annotations& annotations,
                                                const std::vector<MutagenesisRecord>& records,
                                                std::size_t window = 5, const MatchContext& context = {});

// `id,head,mask_pos,rank,seq_index,residue,bw,match`
void write_match_csv(std::ostream& out, const std::vector<MutagenesisMatch>& matches);

}  // namespace gpcrbert::interpret
