#include "gpcrbert/tokenizer.hpp"

#include <ostream>

#include "gpcrbert/error.hpp"

namespace gpcrbert::tokenizer {

namespace {

constexpr std::string_view kResidueOrder = "LAGVESIKRDTPNQFYMHCWXUBZO";

}  // namespace

Vocab::Vocab() {
  tokens_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  residue_ids_.fill(-1);
  for (char c : kResidueOrder) {
    residue_ids_[static_cast<unsigned char>(c)] = static_cast<int>(tokens_.size());
    tokens_.emplace_back(1, c);
  }
}

const Vocab& Vocab::standard() {
  static const Vocab vocab;
  return vocab;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw InvalidArgument("token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocab::id_of(std::string_view token) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] == token) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::optional<int> Vocab::residue_id(char residue) const {
  int id = residue_ids_[static_cast<unsigned char>(residue)];
  if (id < 0) return std::nullopt;
  return id;
}

char Vocab::residue(int id) const {
  if (id < kFirstResidue || id >= kVocabSize) {
    throw InvalidArgument("token id " + std::to_string(id) + " is not a residue");
  }
  return tokens_[static_cast<std::size_t>(id)][0];
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& t : tokens_) {
    for (char c : t) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 1099511628211ULL;
  }
  return h;
}

void Vocab::dump_csv(std::ostream& out) const {
  out << "index,token\n";
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << i << ',' << tokens_[i] << '\n';
}

std::size_t MaskedExample::real_length() const {
  std::size_t n = 0;
  while (n < attention_mask.size() && attention_mask[n] != 0) ++n;
  return n;
}

MaskedExample encode(const corpus::RawMaskedPair& pair, const EncodeOptions& options) {
  const auto& vocab = Vocab::standard();
  const std::size_t seq_len = pair.input_seq.size();
  const std::size_t needed = seq_len + 1 + (options.append_sep ? 1 : 0);
  if (pair.label_seq.size() != seq_len) {
    throw InvalidArgument(pair.source_id + ": input and label lengths differ");
  }
  if (needed > options.max_len) {
    throw InvalidArgument(pair.source_id + ": sequence of length " + std::to_string(seq_len) +
                          " does not fit max_len " + std::to_string(options.max_len));
  }
  MaskedExample ex;
  ex.source_id = pair.source_id;
  ex.input_ids.assign(options.max_len, kPad);
  ex.label_ids.assign(options.max_len, kIgnore);
  ex.attention_mask.assign(options.max_len, 0);
  ex.input_ids[0] = kCls;
  ex.attention_mask[0] = 1;
  for (std::size_t i = 0; i < seq_len; ++i) {
    const std::size_t t = i + 1;
    ex.attention_mask[t] = 1;
    const char c = pair.input_seq[i];
    if (c == corpus::kMaskChar) {
      auto label = vocab.residue_id(pair.label_seq[i]);
      if (!label) {
        throw InvalidArgument(pair.source_id + ": masked offset " + std::to_string(i) +
                              " has no residue label");
      }
      ex.input_ids[t] = kMask;
      ex.label_ids[t] = *label;
      ex.mask_positions.push_back(t);
      continue;
    }
    auto id = vocab.residue_id(c);
    if (!id) {
      throw InvalidArgument(pair.source_id + ": character '" + std::string(1, c) + "' at offset " +
                            std::to_string(i) + " is not in the vocabulary");
    }
    if (pair.label_seq[i] != corpus::kMaskChar) {
      throw InvalidArgument(pair.source_id + ": label present at unmasked offset " + std::to_string(i));
    }
    ex.input_ids[t] = *id;
  }
  if (options.append_sep) {
    ex.input_ids[seq_len + 1] = kSep;
    ex.attention_mask[seq_len + 1] = 1;
  }
  return ex;
}

std::vector<MaskedExample> encode_all(const std::vector<corpus::RawMaskedPair>& pairs,
                                      const EncodeOptions& options) {
  std::vector<MaskedExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode(p, options));
  return out;
}

MaskedExample encode_sequence(std::string_view id, std::string_view sequence,
                              const EncodeOptions& options) {
  corpus::RawMaskedPair pair;
  pair.source_id = std::string(id);
  pair.input_seq = std::string(sequence);
  pair.label_seq.assign(sequence.size(), corpus::kMaskChar);
  std::vector<std::size_t> masked;
  for (std::size_t i = 0; i < pair.input_seq.size(); ++i) {
    if (pair.input_seq[i] == corpus::kMaskChar) {
      masked.push_back(i + 1);
      pair.input_seq[i] = 'X';
    }
  }
  auto ex = encode(pair, options);
  for (auto t : masked) ex.input_ids[t] = kMask;
  ex.mask_positions = std::move(masked);
  return ex;
}

std::string decode(std::span<const int> ids) {
  const auto& vocab = Vocab::standard();
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= kVocabSize) {
      throw InvalidArgument("decode: id " + std::to_string(id) + " outside [0, 30)");
    }
    switch (id) {
      case kPad:
      case kCls:
      case kSep: break;
      case kMask: out.push_back(corpus::kMaskChar); break;
      case kUnk: out.push_back('X'); break;
      default: out.push_back(vocab.residue(id));
    }
  }
  return out;
}

}  // namespace gpcrbert::tokenizer
