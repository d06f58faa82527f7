// SPDX-License-Identifier: Apache-2.0

#ifndef CRB_CLI_HPP
#define CRB_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace crb
{

// Runs the command line `args` (without the program name). Returns the process exit code:
// 0 success, 2 configuration or usage error, 3 numerical failure, 4 artifact mismatch.
int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

}  // namespace crb

#endif  // CRB_CLI_HPP
