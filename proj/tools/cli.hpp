#pragma once

#include <iosfwd>

namespace gpcrbert::cli {

// Runs one command line; returns the process exit status. Never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gpcrbert::cli
