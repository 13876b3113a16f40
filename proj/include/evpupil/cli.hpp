#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace evpupil::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

/// `args` excludes the program name. Usage and diagnostics go to `err`,
/// reports to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace evpupil::cli
