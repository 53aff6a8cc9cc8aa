#include "hgp/cli.hpp"

int main(int argc, char** argv) { return hgp::cli::run_cli(argc, argv); }
