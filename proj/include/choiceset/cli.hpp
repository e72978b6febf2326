#pragma once

#include <ostream>
#include <string>

namespace choiceset {

/// Exit codes of cmd_dispatch.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;

/// Runs one of simulate, identify, estimate, mc, demand, check. Usage and
/// input errors return 1, failures inside the numerical routines return 2.
int cmd_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// `git describe` of the build tree.
std::string build_version();

}  // namespace choiceset
