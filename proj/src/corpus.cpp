#include "gpcrbert/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "gpcrbert/error.hpp"
#include "gpcrbert/text.hpp"

namespace gpcrbert::corpus {

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::vector<ProteinRecord> parse_csv(std::istream& in) {
  std::vector<ProteinRecord> records;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = text::trim(line);
    if (line.empty()) continue;
    auto fields = text::split(line, ',');
    if (!header_seen) {
      header_seen = true;
      if (fields.size() != 3 || text::trim(fields[0]) != "id" ||
          text::trim(fields[1]) != "receptor_class" || text::trim(fields[2]) != "sequence") {
        throw ParseError("line " + std::to_string(line_no) +
                         ": expected header `id,receptor_class,sequence`");
      }
      continue;
    }
    if (fields.size() != 3) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 3 fields, found " +
                       std::to_string(fields.size()));
    }
    ProteinRecord r{text::trim(fields[0]), text::trim(fields[1]), upper(text::trim(fields[2])), {}};
    if (r.id.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty id");
    validate_record(r);
    records.push_back(std::move(r));
  }
  if (!header_seen) throw ParseError("line 1: missing header `id,receptor_class,sequence`");
  return records;
}

std::vector<ProteinRecord> parse_fasta(std::istream& in) {
  std::vector<ProteinRecord> records;
  std::string line;
  std::size_t line_no = 0;
  auto finish = [&] {
    if (!records.empty()) validate_record(records.back());
  };
  while (std::getline(in, line)) {
    ++line_no;
    line = text::trim(line);
    if (line.empty()) continue;
    if (line.front() == '>') {
      finish();
      auto header = line.substr(1);
      auto bar = header.find('|');
      if (bar == std::string::npos) {
        throw ParseError("line " + std::to_string(line_no) + ": FASTA header must be `>id|class`");
      }
      ProteinRecord r;
      r.id = text::trim(header.substr(0, bar));
      r.receptor_class = text::trim(header.substr(bar + 1));
      if (r.id.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty id");
      records.push_back(std::move(r));
      continue;
    }
    if (records.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": sequence data before first header");
    }
    for (char c : line) {
      if (!std::isspace(static_cast<unsigned char>(c))) {
        records.back().sequence.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
      }
    }
  }
  finish();
  return records;
}

}  // namespace

bool is_residue(char c) { return c >= 'A' && c <= 'Z' && c != kMaskChar; }

void validate_record(const ProteinRecord& record) {
  if (record.sequence.empty()) throw ParseError("record " + record.id + ": empty sequence");
  for (std::size_t i = 0; i < record.sequence.size(); ++i) {
    if (!is_residue(record.sequence[i])) {
      throw ParseError("record " + record.id + ": illegal character '" +
                       std::string(1, record.sequence[i]) + "' at offset " + std::to_string(i));
    }
  }
  for (const auto& [index, label] : record.bw_annotations) {
    if (index >= record.sequence.size()) {
      throw ParseError("record " + record.id + ": annotation index " + std::to_string(index) +
                       " beyond sequence length " + std::to_string(record.sequence.size()));
    }
  }
}

std::optional<CorpusFormat> format_from_name(std::string_view name) {
  if (name == "csv") return CorpusFormat::kCsv;
  if (name == "fasta") return CorpusFormat::kFasta;
  return std::nullopt;
}

CorpusFormat guess_format(const std::filesystem::path& path) {
  auto ext = upper(path.extension().string());
  if (ext == ".FA" || ext == ".FASTA" || ext == ".FAA") return CorpusFormat::kFasta;
  return CorpusFormat::kCsv;
}

std::vector<ProteinRecord> parse_corpus(std::istream& in, CorpusFormat format) {
  return format == CorpusFormat::kCsv ? parse_csv(in) : parse_fasta(in);
}

std::vector<ProteinRecord> parse_corpus(const std::filesystem::path& path, CorpusFormat format) {
  auto in = open_input(path);
  return parse_corpus(in, format);
}

void write_corpus_csv(std::ostream& out, const std::vector<ProteinRecord>& records) {
  out << "id,receptor_class,sequence\n";
  for (const auto& r : records) out << r.id << ',' << r.receptor_class << ',' << r.sequence << '\n';
}

std::vector<ProteinRecord> filter_corpus(const std::vector<ProteinRecord>& records,
                                         std::size_t max_len) {
  std::vector<ProteinRecord> kept;
  std::copy_if(records.begin(), records.end(), std::back_inserter(kept),
               [max_len](const ProteinRecord& r) { return r.sequence.size() <= max_len; });
  return kept;
}

std::string_view motif_name(MotifKind kind) {
  switch (kind) {
    case MotifKind::kNPxxY: return "npxxy";
    case MotifKind::kCWxP: return "cwxp";
    case MotifKind::kEDRY: return "edry";
  }
  return "?";
}

std::optional<MotifKind> motif_from_name(std::string_view name) {
  auto lowered = std::string(name);
  for (auto& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lowered == "npxxy") return MotifKind::kNPxxY;
  if (lowered == "cwxp") return MotifKind::kCWxP;
  if (lowered == "edry" || lowered == "e/dry") return MotifKind::kEDRY;
  return std::nullopt;
}

const MotifPattern& motif_pattern(MotifKind kind) {
  static const MotifPattern npxxy{MotifKind::kNPxxY, {{"N"}, {"P"}, {""}, {""}, {"Y"}}, {2, 3}};
  static const MotifPattern cwxp{MotifKind::kCWxP, {{"C"}, {"W"}, {""}, {"P"}}, {2}};
  static const MotifPattern edry{MotifKind::kEDRY, {{"ED"}, {"R"}, {"Y"}}, {0}};
  switch (kind) {
    case MotifKind::kNPxxY: return npxxy;
    case MotifKind::kCWxP: return cwxp;
    case MotifKind::kEDRY: return edry;
  }
  throw InvalidArgument("unknown motif kind");
}

MotifWindow default_window(MotifKind kind) {
  switch (kind) {
    case MotifKind::kEDRY: return {0.25, 0.60};
    case MotifKind::kCWxP: return {0.50, 0.90};
    case MotifKind::kNPxxY: return {0.70, 1.00};
  }
  return {};
}

bool matches_at(std::string_view sequence, const MotifPattern& pattern, std::size_t start) {
  if (start + pattern.slots.size() > sequence.size()) return false;
  for (std::size_t k = 0; k < pattern.slots.size(); ++k) {
    const auto& accepted = pattern.slots[k].accepted;
    if (!accepted.empty() && accepted.find(sequence[start + k]) == std::string::npos) return false;
  }
  return true;
}

std::optional<MotifHit> locate_motif(const ProteinRecord& record, MotifKind kind, MotifWindow window) {
  if (!(window.lo >= 0.0 && window.lo < window.hi && window.hi <= 1.0)) {
    throw InvalidArgument("motif window must satisfy 0 <= lo < hi <= 1");
  }
  const auto& pattern = motif_pattern(kind);
  const auto& seq = record.sequence;
  if (seq.size() < pattern.slots.size()) return std::nullopt;
  for (std::size_t s = seq.size() - pattern.slots.size() + 1; s-- > 0;) {
    const double fraction = static_cast<double>(s) / static_cast<double>(seq.size());
    if (fraction < window.lo || fraction > window.hi) continue;
    if (!matches_at(seq, pattern, s)) continue;
    MotifHit hit{kind, s, {}, fraction};
    for (auto off : pattern.mask_offsets) hit.mask_positions.push_back(s + off);
    return hit;
  }
  return std::nullopt;
}

std::optional<MotifHit> locate_motif(const ProteinRecord& record, MotifKind kind) {
  return locate_motif(record, kind, default_window(kind));
}

RawMaskedPair make_masked_pair(const ProteinRecord& record, std::vector<std::size_t> positions) {
  RawMaskedPair pair;
  pair.source_id = record.id;
  pair.receptor_class = record.receptor_class;
  pair.input_seq = record.sequence;
  pair.label_seq.assign(record.sequence.size(), kMaskChar);
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  for (auto p : positions) {
    if (p >= record.sequence.size()) {
      throw InvalidArgument("mask position " + std::to_string(p) + " beyond " + record.id);
    }
    pair.input_seq[p] = kMaskChar;
    pair.label_seq[p] = record.sequence[p];
  }
  pair.mask_positions = std::move(positions);
  return pair;
}

std::vector<RawMaskedPair> build_motif_dataset(const std::vector<ProteinRecord>& records,
                                               MotifKind kind, MotifWindow window) {
  std::vector<RawMaskedPair> pairs;
  for (const auto& r : records) {
    if (auto hit = locate_motif(r, kind, window)) pairs.push_back(make_masked_pair(r, hit->mask_positions));
  }
  return pairs;
}

std::vector<RawMaskedPair> build_motif_dataset(const std::vector<ProteinRecord>& records,
                                               MotifKind kind) {
  return build_motif_dataset(records, kind, default_window(kind));
}

std::vector<RawMaskedPair> build_span_dataset(const std::vector<ProteinRecord>& records,
                                              std::size_t start, std::size_t count) {
  if (count == 0) throw InvalidArgument("span count must be at least 1");
  std::vector<RawMaskedPair> pairs;
  for (const auto& r : records) {
    if (r.sequence.size() < start + count) continue;
    std::vector<std::size_t> positions(count);
    for (std::size_t i = 0; i < count; ++i) positions[i] = start + i;
    pairs.push_back(make_masked_pair(r, std::move(positions)));
  }
  return pairs;
}

void write_pairs_csv(std::ostream& out, const std::vector<RawMaskedPair>& pairs) {
  out << "source_id,receptor_class,input_seq,label_seq\n";
  for (const auto& p : pairs) {
    out << p.source_id << ',' << p.receptor_class << ',' << p.input_seq << ',' << p.label_seq << '\n';
  }
}

std::vector<RawMaskedPair> read_pairs_csv(std::istream& in) {
  std::vector<RawMaskedPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = text::trim(line);
    if (line.empty()) continue;
    auto fields = text::split(line, ',');
    if (!header_seen) {
      header_seen = true;
      if (fields.size() != 4 || fields[0] != "source_id") {
        throw ParseError("line " + std::to_string(line_no) +
                         ": expected header `source_id,receptor_class,input_seq,label_seq`");
      }
      continue;
    }
    if (fields.size() != 4) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 4 fields, found " +
                       std::to_string(fields.size()));
    }
    RawMaskedPair p{fields[0], fields[1], upper(fields[2]), upper(fields[3]), {}};
    if (p.input_seq.size() != p.label_seq.size() || p.input_seq.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": input and label lengths differ");
    }
    for (std::size_t i = 0; i < p.input_seq.size(); ++i) {
      const bool masked = p.input_seq[i] == kMaskChar;
      const bool labelled = p.label_seq[i] != kMaskChar;
      if (masked != labelled) {
        throw ParseError("line " + std::to_string(line_no) + ": mask/label mismatch at offset " +
                         std::to_string(i));
      }
      if (!masked && !is_residue(p.input_seq[i])) {
        throw ParseError("line " + std::to_string(line_no) + ": illegal character at offset " +
                         std::to_string(i));
      }
      if (labelled && !is_residue(p.label_seq[i])) {
        throw ParseError("line " + std::to_string(line_no) + ": illegal label at offset " +
                         std::to_string(i));
      }
      if (masked) p.mask_positions.push_back(i);
    }
    pairs.push_back(std::move(p));
  }
  if (!header_seen) throw ParseError("line 1: missing pairs header");
  return pairs;
}

std::vector<RawMaskedPair> read_pairs_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_pairs_csv(in);
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    // Unbiased draw from [0, i) by rejection.
    const std::uint64_t bound = static_cast<std::uint64_t>(i);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t draw;
    do {
      draw = rng();
    } while (draw >= limit);
    std::swap(order[i - 1], order[static_cast<std::size_t>(draw % bound)]);
  }
  return order;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n,
                                                                            double ratio,
                                                                            std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("cannot split an empty dataset");
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("split ratio must lie in (0, 1)");
  auto order = seeded_permutation(n, seed);
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio));
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return {std::move(train), std::move(test)};
}

CorpusStats corpus_stats(const std::vector<ProteinRecord>& records, std::size_t bin_width) {
  if (bin_width == 0) throw InvalidArgument("histogram bin width must be positive");
  CorpusStats stats;
  if (records.empty()) return stats;
  std::size_t lo = records.front().sequence.size(), hi = lo;
  std::map<std::string, std::size_t> classes;
  for (const auto& r : records) {
    lo = std::min(lo, r.sequence.size());
    hi = std::max(hi, r.sequence.size());
    ++classes[r.receptor_class];
  }
  const std::size_t first = lo / bin_width, last = hi / bin_width;
  for (std::size_t b = first; b <= last; ++b) {
    stats.length_histogram.push_back({b * bin_width, (b + 1) * bin_width, 0});
  }
  for (const auto& r : records) ++stats.length_histogram[r.sequence.size() / bin_width - first].count;
  stats.class_counts.assign(classes.begin(), classes.end());
  std::stable_sort(stats.class_counts.begin(), stats.class_counts.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return stats;
}

void write_histogram_csv(std::ostream& out, const CorpusStats& stats) {
  out << "bin_lo,bin_hi,count\n";
  for (const auto& b : stats.length_histogram) out << b.lo << ',' << b.hi << ',' << b.count << '\n';
}

void write_class_counts_csv(std::ostream& out, const CorpusStats& stats) {
  out << "class,count\n";
  for (const auto& [name, count] : stats.class_counts) out << name << ',' << count << '\n';
}

std::size_t attach_annotations(std::vector<ProteinRecord>& records, std::istream& in) {
  std::map<std::string, ProteinRecord*> by_id;
  for (auto& r : records) by_id[r.id] = &r;
  std::string line;
  std::size_t line_no = 0, applied = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = text::trim(line);
    if (line.empty()) continue;
    auto fields = text::split(line, ',');
    if (!header_seen) {
      header_seen = true;
      if (fields.size() != 3 || fields[0] != "id") {
        throw ParseError("line " + std::to_string(line_no) + ": expected header `id,seq_index,bw_label`");
      }
      continue;
    }
    if (fields.size() != 3) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 3 fields");
    }
    auto it = by_id.find(fields[0]);
    if (it == by_id.end()) continue;
    const auto index = text::parse_size(fields[1], "seq_index on line " + std::to_string(line_no));
    if (index >= it->second->sequence.size()) {
      throw ParseError("line " + std::to_string(line_no) + ": seq_index " + std::to_string(index) +
                       " beyond sequence " + fields[0]);
    }
    it->second->bw_annotations[index] = fields[2];
    ++applied;
  }
  return applied;
}

std::vector<ProteinRecord> synthetic_motif_corpus(const SyntheticCorpusOptions& options) {
  if (options.n_classes == 0 || options.min_length < 24 || options.max_length < options.min_length) {
    throw InvalidArgument("synthetic corpus needs classes and lengths >= 24");
  }
  // Background residues avoid the motif anchors so every motif occurs once.
  static constexpr std::string_view kBackground = "AGILMQSTVFHK";
  static constexpr std::string_view kVariable = "AILMFVTSGQ";
  std::mt19937_64 rng(options.seed);
  auto pick = [&](std::string_view from) {
    return from[std::uniform_int_distribution<std::size_t>(0, from.size() - 1)(rng)];
  };

  struct ClassProfile {
    std::string signature;
    char edry_first;
    char cwxp_x;
    char npxxy_x1;
    char npxxy_x2;
  };
  std::vector<ClassProfile> profiles;
  for (std::size_t c = 0; c < options.n_classes; ++c) {
    ClassProfile p;
    for (int k = 0; k < 8; ++k) p.signature.push_back(pick(kBackground));
    p.edry_first = c % 2 == 0 ? 'D' : 'E';
    p.cwxp_x = kVariable[c % kVariable.size()];
    p.npxxy_x1 = kVariable[(3 * c + 1) % kVariable.size()];
    p.npxxy_x2 = kVariable[(5 * c + 2) % kVariable.size()];
    profiles.push_back(std::move(p));
  }

  std::vector<ProteinRecord> records;
  for (std::size_t i = 0; i < options.n_records; ++i) {
    const std::size_t c = i % options.n_classes;
    const auto& profile = profiles[c];
    const std::size_t len =
        std::uniform_int_distribution<std::size_t>(options.min_length, options.max_length)(rng);
    std::string seq(len, 'A');
    for (auto& ch : seq) ch = pick(kBackground);
    auto place = [&](double fraction, std::string_view motif) {
      const auto at = static_cast<std::size_t>(fraction * static_cast<double>(len));
      std::copy(motif.begin(), motif.end(), seq.begin() + static_cast<std::ptrdiff_t>(at));
    };
    place(0.05, profile.signature);
    place(0.40, std::string{profile.edry_first, 'R', 'Y'});
    place(0.70, std::string{'C', 'W', profile.cwxp_x, 'P'});
    place(0.85, std::string{'N', 'P', profile.npxxy_x1, profile.npxxy_x2, 'Y'});
    ProteinRecord r;
    r.id = "SYN" + std::to_string(i);
    r.receptor_class = "class" + std::to_string(c);
    r.sequence = std::move(seq);
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace gpcrbert::corpus
