#include "gpcrbert/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "gpcrbert/tokenizer.hpp"

namespace gpcrbert::checkpoint {

namespace {

constexpr char kMagic[4] = {'G', 'B', 'R', 'T'};
constexpr const char* kModelKind = "model";

static_assert(std::numeric_limits<float>::is_iec559);

template <typename T>
void put_le(std::string& buf, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

bool has_space(const std::string& s) {
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') return true;
  }
  return s.empty();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

[[noreturn]] void fail(ErrorCode code, const std::string& msg) { throw CheckpointError(code, msg); }

std::uint64_t parse_u64(const std::string& s, int base, ErrorCode code, const std::string& what) {
  if (s.empty()) fail(code, what + ": empty number");
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), &end, base);
  if (errno != 0 || end != s.c_str() + s.size() || s[0] == '-' || s[0] == '+') {
    fail(code, what + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

const char* code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kUnsupportedVersion: return "unsupported version";
    case ErrorCode::kTruncatedHeader: return "truncated header";
    case ErrorCode::kMalformedHeader: return "malformed header";
    case ErrorCode::kTruncatedPayload: return "truncated payload";
    case ErrorCode::kOverlappingOffsets: return "overlapping offsets";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kMismatch: return "content mismatch";
  }
  return "unknown";
}

CheckpointError::CheckpointError(ErrorCode code, const std::string& message)
    : Error(std::string(code_name(code)) + ": " + message), code_(code) {}

void write_container(std::ostream& out, const Container& c) {
  std::string header;
  if (has_space(c.kind)) fail(ErrorCode::kMalformedHeader, "kind must be a non-empty word");
  header += "@kind " + c.kind + "\n";
  for (const auto& [key, value] : c.config) {
    if (has_space(key) || has_space(value)) {
      fail(ErrorCode::kMalformedHeader, "config entry '" + key + "' contains whitespace");
    }
    header += "@config " + key + " " + value + "\n";
  }
  header += "@vocab_hash " + hex64(c.vocab_hash) + "\n";
  std::uint64_t offset = 0;
  for (const auto& t : c.tensors) {
    if (has_space(t.name) || t.name[0] == '@') fail(ErrorCode::kMalformedHeader, "bad tensor name '" + t.name + "'");
    if (t.shape.empty()) fail(ErrorCode::kMalformedHeader, "tensor '" + t.name + "' has no shape");
    if (tensor::element_count(t.shape) != t.values.size()) {
      fail(ErrorCode::kMalformedHeader, "tensor '" + t.name + "' has " + std::to_string(t.values.size()) +
                                            " values for shape " + tensor::to_string(t.shape));
    }
    for (float v : t.values) {
      if (!std::isfinite(v)) fail(ErrorCode::kNonFinite, "tensor '" + t.name + "'");
    }
    header += t.name + " f32 ";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
      if (i) header += ',';
      header += std::to_string(t.shape[i]);
    }
    header += " " + std::to_string(offset) + "\n";
    offset += 4 * t.values.size();
  }

  std::string buf(kMagic, kMagic + 4);
  put_le<std::uint32_t>(buf, kFormatVersion);
  put_le<std::uint64_t>(buf, header.size());
  buf += header;
  buf.reserve(buf.size() + offset);
  for (const auto& t : c.tensors) {
    for (float v : t.values) put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(v));
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorCode::kIo, "write failed");
}

void write_container(const std::filesystem::path& path, const Container& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  write_container(out, c);
  out.close();
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
}

Container read_container(std::istream& in) {
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorCode::kBadMagic, "not a GBRT file");
  if (bytes.size() < 16) fail(ErrorCode::kTruncatedHeader, "file ends inside the preamble");
  const auto version = get_le<std::uint32_t>(p + 4);
  if (version != kFormatVersion) {
    fail(ErrorCode::kUnsupportedVersion, "version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(p + 8);
  if (header_len > bytes.size() - 16) fail(ErrorCode::kTruncatedHeader, "header length exceeds file size");
  const std::string header = bytes.substr(16, header_len);
  const std::size_t payload_start = 16 + header_len;
  const std::size_t payload_size = bytes.size() - payload_start;

  Container c;
  bool saw_kind = false, saw_hash = false;
  std::uint64_t expected_offset = 0;
  std::istringstream lines(header);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    const std::string where = "header line " + std::to_string(line_no);
    auto fields = text::split(line, ' ');
    if (line.empty()) fail(ErrorCode::kMalformedHeader, where + ": empty line");
    if (fields[0] == "@kind" && fields.size() == 2 && !saw_kind) {
      c.kind = fields[1];
      saw_kind = true;
    } else if (fields[0] == "@config" && fields.size() == 3) {
      if (!c.config.emplace(fields[1], fields[2]).second) {
        fail(ErrorCode::kMalformedHeader, where + ": duplicate config key '" + fields[1] + "'");
      }
    } else if (fields[0] == "@vocab_hash" && fields.size() == 2 && !saw_hash) {
      if (fields[1].size() != 16) fail(ErrorCode::kMalformedHeader, where + ": vocab hash must be 16 hex digits");
      c.vocab_hash = parse_u64(fields[1], 16, ErrorCode::kMalformedHeader, where);
      saw_hash = true;
    } else if (fields[0][0] != '@' && fields.size() == 4) {
      if (fields[1] != "f32") fail(ErrorCode::kMalformedHeader, where + ": unsupported dtype '" + fields[1] + "'");
      NamedTensor t;
      t.name = fields[0];
      for (const auto& d : text::split(fields[2], ',')) {
        t.shape.push_back(parse_u64(d, 10, ErrorCode::kMalformedHeader, where));
      }
      const auto offset = parse_u64(fields[3], 10, ErrorCode::kMalformedHeader, where);
      if (offset < expected_offset) {
        fail(ErrorCode::kOverlappingOffsets, "tensor '" + t.name + "' starts at " + std::to_string(offset) +
                                                 " inside the previous tensor (ends at " +
                                                 std::to_string(expected_offset) + ")");
      }
      if (offset > expected_offset) {
        fail(ErrorCode::kMalformedHeader, "gap before tensor '" + t.name + "'");
      }
      std::size_t n = 1;
      for (auto d : t.shape) n = (d != 0 && n > payload_size / d) ? payload_size + 1 : n * d;
      if (n > (payload_size - std::min<std::uint64_t>(offset, payload_size)) / 4) {
        fail(ErrorCode::kTruncatedPayload, "tensor '" + t.name + "' " + tensor::to_string(t.shape) +
                                               " at offset " + std::to_string(offset) + ", payload has " +
                                               std::to_string(payload_size));
      }
      expected_offset = offset + 4 * n;
      t.values.resize(n);
      const unsigned char* src = p + payload_start + offset;
      for (std::size_t i = 0; i < n; ++i) {
        t.values[i] = std::bit_cast<float>(get_le<std::uint32_t>(src + 4 * i));
        if (!std::isfinite(t.values[i])) fail(ErrorCode::kNonFinite, "tensor '" + t.name + "'");
      }
      c.tensors.push_back(std::move(t));
    } else {
      fail(ErrorCode::kMalformedHeader, where + ": cannot parse '" + line + "'");
    }
  }
  if (!saw_kind || !saw_hash) fail(ErrorCode::kMalformedHeader, "missing @kind or @vocab_hash line");
  if (!header.empty() && header.back() != '\n') fail(ErrorCode::kMalformedHeader, "header must end with a newline");
  if (expected_offset != payload_size) {
    fail(ErrorCode::kMalformedHeader, std::to_string(payload_size - expected_offset) + " trailing payload bytes");
  }
  return c;
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  return read_container(in);
}

void write_checkpoint(std::ostream& out, const model::Parameters& params, const model::ModelConfig& config) {
  Container c;
  c.kind = kModelKind;
  c.config = config.to_key_values();
  c.vocab_hash = tokenizer::Vocab::standard().hash();
  for (const auto& [name, t] : params.named()) {
    NamedTensor nt;
    nt.name = name;
    nt.shape = t.shape();
    nt.values.assign(t.data().begin(), t.data().end());
    c.tensors.push_back(std::move(nt));
  }
  write_container(out, c);
}

void write_checkpoint(const std::filesystem::path& path, const model::Parameters& params,
                      const model::ModelConfig& config) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  write_checkpoint(out, params, config);
  out.close();
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
}

Checkpoint read_checkpoint(std::istream& in) {
  auto c = read_container(in);
  if (c.kind != kModelKind) fail(ErrorCode::kMismatch, "container kind is '" + c.kind + "', expected model");
  if (c.vocab_hash != tokenizer::Vocab::standard().hash()) {
    fail(ErrorCode::kMismatch, "vocabulary hash " + hex64(c.vocab_hash) + " does not match this build");
  }
  model::ModelConfig config;
  try {
    config = model::ModelConfig::from_key_values(c.config);
  } catch (const Error& e) {
    fail(ErrorCode::kMismatch, e.what());
  }
  const auto shapes = model::parameter_shapes(config);
  if (shapes.size() != c.tensors.size()) {
    fail(ErrorCode::kMismatch, std::to_string(c.tensors.size()) + " tensors, config implies " +
                                   std::to_string(shapes.size()));
  }
  auto params = model::Parameters::zeros(config);
  auto named = params.named();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& t = c.tensors[i];
    if (t.name != shapes[i].first || t.shape != shapes[i].second) {
      fail(ErrorCode::kMismatch, "tensor " + std::to_string(i) + " is '" + t.name + "' " +
                                     tensor::to_string(t.shape) + ", expected '" + shapes[i].first + "' " +
                                     tensor::to_string(shapes[i].second));
    }
    auto dst = named[i].second.data();
    for (std::size_t j = 0; j < t.values.size(); ++j) dst[j] = static_cast<Real>(t.values[j]);
  }
  return {config, params};
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  return read_checkpoint(in);
}

model::Model load_model(const std::filesystem::path& path) {
  auto ckpt = read_checkpoint(path);
  return model::Model(ckpt.config, std::move(ckpt.parameters));
}

}  // namespace gpcrbert::checkpoint
