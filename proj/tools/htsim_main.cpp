#include "htsim/cli.hpp"

int main(int argc, char** argv) { return htsim::cli_main(argc, argv); }
