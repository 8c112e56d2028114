#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cdn::cli {

/// Runs one `cdn` invocation. args excludes the program name.
/// Exit codes: 0 success, 1 failure, 2 usage error, 3 training divergence.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cdn::cli
