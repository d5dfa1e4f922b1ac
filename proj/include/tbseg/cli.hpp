#ifndef TBSEG_CLI_HPP
#define TBSEG_CLI_HPP

#include <ostream>
#include <string>
#include <vector>

namespace tbseg::cli {

enum ExitCode : int {
    kSuccess = 0,
    kCheckFailed = 1,
    kUsageError = 2,
    kNumericError = 3,
};

/// Parses `args` (without the program name) and runs the selected
/// subcommand. Results go to `out`, logs and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tbseg::cli

#endif  // TBSEG_CLI_HPP
