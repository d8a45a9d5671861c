#pragma once

// Receptor-sequence ingestion and motif/span masking.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gpcrbert::corpus {

// Character used to hide residues in raw masked pairs. It is not part of the
// amino-acid alphabet, so it never collides with real data.
inline constexpr char kMaskChar = 'J';

struct ProteinRecord {
  std::string id;
  std::string receptor_class;
  std::string sequence;
  // 0-based sequence index -> Ballesteros-Weinstein label, e.g. "6.47".
  std::map<std::size_t, std::string> bw_annotations;
};

// Upper-case letters except 'J'.
bool is_residue(char c);

// Throws ParseError naming the record id and the offending offset.
void validate_record(const ProteinRecord& record);

enum class CorpusFormat { kCsv, kFasta };

std::optional<CorpusFormat> format_from_name(std::string_view name);
// Picks by extension (.fa/.fasta/.faa -> FASTA), CSV otherwise.
CorpusFormat guess_format(const std::filesystem::path& path);

// CSV: header `id,receptor_class,sequence`. FASTA: `>id|receptor_class`.
// Sequences are upper-cased, then validated.
std::vector<ProteinRecord> parse_corpus(std::istream& in, CorpusFormat format);
std::vector<ProteinRecord> parse_corpus(const std::filesystem::path& path, CorpusFormat format);

void write_corpus_csv(std::ostream& out, const std::vector<ProteinRecord>& records);

// Keeps records whose length is at most max_len, in input order.
std::vector<ProteinRecord> filter_corpus(const std::vector<ProteinRecord>& records,
                                         std::size_t max_len = 370);

enum class MotifKind { kNPxxY, kCWxP, kEDRY };

std::string_view motif_name(MotifKind kind);
std::optional<MotifKind> motif_from_name(std::string_view name);

// One pattern slot: the set of residues accepted there; empty = wildcard.
struct MotifSlot {
  std::string accepted;
};

struct MotifPattern {
  MotifKind kind;
  std::vector<MotifSlot> slots;
  std::vector<std::size_t> mask_offsets;
};

const MotifPattern& motif_pattern(MotifKind kind);

// Accepted range of start / length for a hit.
struct MotifWindow {
  double lo = 0.0;
  double hi = 1.0;
};

MotifWindow default_window(MotifKind kind);

struct MotifHit {
  MotifKind kind;
  std::size_t start = 0;
  std::vector<std::size_t> mask_positions;
  double position_fraction = 0.0;
};

bool matches_at(std::string_view sequence, const MotifPattern& pattern, std::size_t start);

// Last match of the pattern whose start fraction lies in the window.
std::optional<MotifHit> locate_motif(const ProteinRecord& record, MotifKind kind, MotifWindow window);
std::optional<MotifHit> locate_motif(const ProteinRecord& record, MotifKind kind);

struct RawMaskedPair {
  std::string source_id;
  std::string receptor_class;
  std::string input_seq;  // kMaskChar at masked positions
  std::string label_seq;  // truth at masked positions, kMaskChar elsewhere
  std::vector<std::size_t> mask_positions;
};

RawMaskedPair make_masked_pair(const ProteinRecord& record, std::vector<std::size_t> positions);

std::vector<RawMaskedPair> build_motif_dataset(const std::vector<ProteinRecord>& records,
                                               MotifKind kind);
std::vector<RawMaskedPair> build_motif_dataset(const std::vector<ProteinRecord>& records,
                                               MotifKind kind, MotifWindow window);

// Masks [start, start + count) in every record long enough to hold the span.
std::vector<RawMaskedPair> build_span_dataset(const std::vector<ProteinRecord>& records,
                                              std::size_t start, std::size_t count);

// Pairs CSV: `source_id,receptor_class,input_seq,label_seq`. Mask positions are
// recovered from the 'J' characters of the input.
void write_pairs_csv(std::ostream& out, const std::vector<RawMaskedPair>& pairs);
std::vector<RawMaskedPair> read_pairs_csv(std::istream& in);
std::vector<RawMaskedPair> read_pairs_csv(const std::filesystem::path& path);

template <typename T>
struct Split {
  std::vector<T> train;
  std::vector<T> test;
};

// Deterministic Fisher-Yates permutation of 0..n-1 driven by a 64-bit Mersenne
// Twister; the same (n, seed) gives the same permutation on every platform.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

// Train gets floor(n * ratio) items of the seeded permutation, test the rest.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n,
                                                                            double ratio,
                                                                            std::uint64_t seed);

template <typename T>
Split<T> split_dataset(const std::vector<T>& items, double ratio, std::uint64_t seed) {
  auto [train_idx, test_idx] = split_indices(items.size(), ratio, seed);
  Split<T> out;
  out.train.reserve(train_idx.size());
  out.test.reserve(test_idx.size());
  for (auto i : train_idx) out.train.push_back(items[i]);
  for (auto i : test_idx) out.test.push_back(items[i]);
  return out;
}

struct HistogramBin {
  std::size_t lo = 0;
  std::size_t hi = 0;
  std::size_t count = 0;
};

struct CorpusStats {
  std::vector<HistogramBin> length_histogram;
  // Sorted by descending count, then class name.
  std::vector<std::pair<std::string, std::size_t>> class_counts;
};

CorpusStats corpus_stats(const std::vector<ProteinRecord>& records, std::size_t bin_width = 10);

void write_histogram_csv(std::ostream& out, const CorpusStats& stats);
void write_class_counts_csv(std::ostream& out, const CorpusStats& stats);

// Annotation CSV `id,seq_index,bw_label`; entries attach to records by id.
// Returns the number of annotations applied.
std::size_t attach_annotations(std::vector<ProteinRecord>& records, std::istream& in);

struct SyntheticCorpusOptions {
  std::size_t n_records = 16;
  std::size_t n_classes = 4;
  std::size_t min_length = 48;
  std::size_t max_length = 64;
  std::uint64_t seed = 7;
};

// GPCR-like toy corpus: random background residues with one E/DRY, CWxP and
// NPxxY occurrence placed inside the default windows. Each class has its own
// motif variants and a class signature 8-mer near the N-terminus, so the
// masked residues are predictable from context.
std::vector<ProteinRecord> synthetic_motif_corpus(const SyntheticCorpusOptions& options);

}  // namespace gpcrbert::corpus
