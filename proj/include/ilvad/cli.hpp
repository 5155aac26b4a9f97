#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace ilvad::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// args[0] is the program name. Subcommands: saliency, enhance, generate,
// render, compare.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace ilvad::cli
