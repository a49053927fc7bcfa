// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Subcommands: gen-data, pretrain, adapt, eval,
// ablate, rank-sweep.
//
// Options come from `--config FILE` (flat key=value, keys are long flag names
// without the dashes) and from the command line; the command line wins. The
// output directory defaults to $ADVLORA_OUT, then ./advlora_out. Every run
// writes <command>.cfg (the resolved options, re-runnable with --config) and
// manifest_<command>.json (config plus SHA-256 of inputs and outputs).

#pragma once

#include <iosfwd>
#include <map>
#include <string>

namespace advlora::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kOutputEnv = "ADVLORA_OUT";

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Parses flat key=value text. '#' starts a comment; blank lines are skipped.
// Throws UsageError on a malformed line or a repeated key.
std::map<std::string, std::string> parse_config(const std::string& text);

std::string sha256_hex(const std::string& bytes);

}  // namespace advlora::cli
