#pragma once

// Command-line front end. Subcommands train-teacher, rollout, distill, eval
// and analyze run their single stage; run executes the stages listed in the
// config. All accept --config <file> and repeatable --set key=value.

#include <iosfwd>
#include <string>
#include <vector>

namespace t3d {

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace t3d
