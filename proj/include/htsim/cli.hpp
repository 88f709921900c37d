#pragma once

namespace htsim {

// Entry point behind the htsim binary; also callable in-process from tests.
// Exit codes: 0 ok, 2 config error, 3 format error, 4 runtime error.
int cli_main(int argc, const char* const* argv);

}  // namespace htsim
