// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dos::cli {

/// Exit codes: 0 success, 1 error, 2 evaluation finished with excluded images.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dos::cli
