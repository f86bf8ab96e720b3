#pragma once

#include <ostream>

namespace multimix {

// `multimix <train|eval|synth|grid|report> [--config PATH] [--override KEY=VALUE ...] [--out DIR]`
// Returns the process exit status: 0 ok, 2 usage, 3 input/artifact, 4 divergence.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace multimix
