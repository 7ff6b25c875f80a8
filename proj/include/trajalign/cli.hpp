#pragma once

// Command-line front end: config parsing and validation, one subcommand per
// pipeline phase, report emission.
//
// Subcommands: demos, sft, run, eval, score, report.
// Exit codes: 0 success, 2 config error, 3 missing artifact, 4 runtime
// failure.

#include <string>
#include <vector>

#include "trajalign/pipeline.hpp"

namespace trajalign::cli {

// Parses a flat JSON config file into a RunConfig (missing file -> throws
// MissingArtifact; malformed -> ParseError).
pipeline::RunConfig load_run_config(const std::string& path);

// Applies one --set key=value override. Unknown keys throw ConfigError.
void apply_override(pipeline::RunConfig& cfg, const std::string& key, const std::string& value);

int cmd_demos(const pipeline::RunConfig& cfg);
int cmd_sft(const pipeline::RunConfig& cfg);
int cmd_run(const pipeline::RunConfig& cfg);
int cmd_eval(const pipeline::RunConfig& cfg);
int cmd_score(const pipeline::RunConfig& cfg);
int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_path);

// Full argv-style entry point used by the binary and by tests.
int dispatch(const std::vector<std::string>& args);

}  // namespace trajalign::cli
