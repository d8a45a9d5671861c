#pragma once

// Binary tensor container shared by model checkpoints and SVM models.
//
// Layout: "GBRT", u32 LE version, u64 LE header length, UTF-8 header, then a
// float32 LE payload. Header lines are
//   @kind <kind>
//   @config <key> <value>
//   @vocab_hash <16 hex digits>
//   <name> f32 <d0,d1,...> <byte offset into the payload>
// and tensors are laid out contiguously in header order, so the encoding of a
// given container is unique.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gpcrbert/error.hpp"
#include "gpcrbert/model.hpp"
#include "gpcrbert/text.hpp"

namespace gpcrbert::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

enum class ErrorCode {
  kIo = 1,
  kBadMagic,
  kUnsupportedVersion,
  kTruncatedHeader,
  kMalformedHeader,
  kTruncatedPayload,
  kOverlappingOffsets,
  kNonFinite,
  kMismatch,
};

const char* code_name(ErrorCode code);

class CheckpointError : public Error {
 public:
  CheckpointError(ErrorCode code, const std::string& message);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct NamedTensor {
  std::string name;
  tensor::Shape shape;
  std::vector<float> values;
};

struct Container {
  std::string kind;
  text::KeyValues config;
  std::uint64_t vocab_hash = 0;
  std::vector<NamedTensor> tensors;
};

void write_container(std::ostream& out, const Container& container);
void write_container(const std::filesystem::path& path, const Container& container);
Container read_container(std::istream& in);
Container read_container(const std::filesystem::path& path);

struct Checkpoint {
  model::ModelConfig config;
  model::Parameters parameters;
};

void write_checkpoint(std::ostream& out, const model::Parameters& params, const model::ModelConfig& config);
void write_checkpoint(const std::filesystem::path& path, const model::Parameters& params,
                      const model::ModelConfig& config);
// Rejects containers whose tensors or vocabulary differ from what the stored
// config implies.
Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint(const std::filesystem::path& path);

model::Model load_model(const std::filesystem::path& path);

}  // namespace gpcrbert::checkpoint
