#ifndef DUCH_TOOLS_COMMANDS_HPP_
#define DUCH_TOOLS_COMMANDS_HPP_

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "duch/eval.hpp"
#include "duch/trainer.hpp"

namespace duch::cli {

inline constexpr std::string_view kRunConfigFormat = "duch-run/1";

/// Everything needed to reproduce a run: training and evaluation settings,
/// the dataset manifest and the output directory.
struct RunConfig {
  TrainConfig train;
  EvalConfig eval;
  std::string dataset;
  std::string out;
};

std::string to_json(const RunConfig& cfg);
RunConfig run_config_from_json(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

// Output root for commands run without --out: $DUCH_OUT_ROOT, else "runs".
std::filesystem::path default_out_root();

enum ExitCode : int { ok = 0, runtime_error = 1, usage_error = 2 };

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace duch::cli

#endif  // DUCH_TOOLS_COMMANDS_HPP_
