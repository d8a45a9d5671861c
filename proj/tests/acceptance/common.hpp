#pragma once

#include <chrono>
#include <cstdio>
#include <exception>
#include <functional>
#include <string>

namespace acceptance {

struct Outcome {
  bool passed = false;
  std::string detail;
};

class Runner {
 public:
  // Prints exactly one PASS/FAIL line; an exception counts as a failure.
  void check(const std::string& id, const std::string& title, const std::function<Outcome()>& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %s %s: %s (%.1f s)\n", o.passed ? "PASS" : "FAIL", id.c_str(), title.c_str(),
                o.detail.c_str(), s);
    std::fflush(stdout);
    failures_ += o.passed ? 0 : 1;
  }
  int failures() const { return failures_; }

 private:
  int failures_ = 0;
};

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace acceptance
