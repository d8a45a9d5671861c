#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

namespace testutil {

inline constexpr std::string_view kAminoAcids = "ACDEFGHIKLMNPQRSTVWY";

// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    std::uniform_int_distribution<std::uint64_t> d;
    path_ = std::filesystem::temp_directory_path() / ("gpcrbert_test_" + std::to_string(d(rd)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, std::string_view content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

inline std::string random_sequence(std::mt19937_64& rng, std::size_t length,
                                   std::string_view alphabet = kAminoAcids) {
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string s(length, 'A');
  for (auto& c : s) c = alphabet[pick(rng)];
  return s;
}

inline std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Runs body(rng, case_index) for `cases` independently seeded generators.
template <typename F>
void for_all(std::size_t cases, std::uint64_t seed, F&& body) {
  for (std::size_t i = 0; i < cases; ++i) {
    std::mt19937_64 rng(seed * 7919 + i);
    body(rng, i);
  }
}

}  // namespace testutil
