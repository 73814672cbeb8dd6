#pragma once

#include <ostream>

namespace ridg {

// Entry point of the `ridg` tool. Returns 0 on success, 1 on a runtime
// failure and 2 on a usage or configuration error; failures print a single
// "ridg: error: ..." line to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err);

}  // namespace ridg
