#ifndef EFMCA_CLI_COMMANDS_HPP
#define EFMCA_CLI_COMMANDS_HPP

#include <ostream>

#include "cli/run_config.hpp"

namespace efmca::cli {

struct Runtime {
  unsigned workers = 0;  // 0: EFMCA_WORKERS or 1
  bool timing = false;
};

void cmd_gen_bars(const RunConfig& cfg, const Runtime& rt, std::ostream& out);
void cmd_train(const RunConfig& cfg, const Runtime& rt, std::ostream& out);
void cmd_eval_bars(const RunConfig& cfg, const Runtime& rt, std::ostream& out);
void cmd_denoise(const RunConfig& cfg, const Runtime& rt, std::ostream& out);
void cmd_select_noise(const RunConfig& cfg, const Runtime& rt, std::ostream& out);

/// Parses argv, runs one subcommand and maps failures to exit codes:
/// 0 success, 2 usage, 3 data/domain, 4 capacity.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace efmca::cli

#endif  // EFMCA_CLI_COMMANDS_HPP
