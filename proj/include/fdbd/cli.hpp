#pragma once

#include <string>
#include <vector>

#include "fdbd/scoring.hpp"

namespace fdbd::cli {

/// Parses "mode" or "mode:percentile" (none, react, ash_s, scale; default
/// percentiles 80, 90, 90). Throws UsageError on anything else.
scoring::ShapingConfig parse_shaping(const std::string& spec);

/// Splits a comma-separated list, dropping empty items.
std::vector<std::string> split_list(const std::string& csv);

/// Entry point behind main(). Exit codes: 0 success, 1 usage errors,
/// 2 data/runtime errors, 3 verification failures.
int run(int argc, const char* const* argv);

inline int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace fdbd::cli
