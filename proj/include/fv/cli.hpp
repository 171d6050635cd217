#pragma once
// Command-line front end: dataset synthesis, training, evaluation, soft-vote
// ensembles, member-count ablations, and attention-map dumps.

#include <string>
#include <vector>

namespace fv {

// Runs one subcommand. `args` excludes the program name, e.g.
// {"synth", "--classes", "2", ...}. Returns the process exit code:
// 0 success, 1 runtime failure, 2 usage error. Failures print a single
// `error: ...` line to stderr.
int dispatch(const std::vector<std::string>& args);

// argv-style adapter for main().
int dispatch(int argc, const char* const* argv);

}  // namespace fv
