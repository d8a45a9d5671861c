#pragma once

// Fixed 30-token protein vocabulary and [CLS]/[MASK]/[PAD] encoding.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gpcrbert/corpus.hpp"

namespace gpcrbert::tokenizer {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kCls = 2;
inline constexpr int kSep = 3;
inline constexpr int kMask = 4;
inline constexpr int kFirstResidue = 5;
inline constexpr int kVocabSize = 30;
// Label value for positions excluded from loss and accuracy.
inline constexpr int kIgnore = -100;

class Vocab {
 public:
  static const Vocab& standard();

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const;
  std::optional<int> id_of(std::string_view token) const;
  std::optional<int> residue_id(char residue) const;
  // Residue letter for ids >= kFirstResidue.
  char residue(int id) const;
  // FNV-1a 64 over the newline-joined token table.
  std::uint64_t hash() const;

  void dump_csv(std::ostream& out) const;

 private:
  Vocab();
  std::vector<std::string> tokens_;
  std::array<int, 256> residue_ids_{};
};

struct EncodeOptions {
  std::size_t max_len = 372;
  bool append_sep = false;
};

struct MaskedExample {
  std::string source_id;
  std::vector<int> input_ids;
  std::vector<int> label_ids;
  std::vector<std::uint8_t> attention_mask;
  // Token indices (sequence index + 1) of the [MASK] tokens.
  std::vector<std::size_t> mask_positions;

  std::size_t length() const { return input_ids.size(); }
  // Number of leading tokens with attention 1.
  std::size_t real_length() const;
};

MaskedExample encode(const corpus::RawMaskedPair& pair, const EncodeOptions& options = {});
std::vector<MaskedExample> encode_all(const std::vector<corpus::RawMaskedPair>& pairs,
                                      const EncodeOptions& options = {});

// Plain sequence; any 'J' becomes [MASK] with no label (prediction queries).
MaskedExample encode_sequence(std::string_view id, std::string_view sequence,
                              const EncodeOptions& options = {});

// Drops [PAD]/[CLS]/[SEP], renders [MASK] as 'J' and [UNK] as 'X'.
std::string decode(std::span<const int> ids);

}  // namespace gpcrbert::tokenizer
