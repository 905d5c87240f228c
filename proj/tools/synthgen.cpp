#include "synthgen/cli.hpp"

int main(int argc, char** argv) { return synthgen::run_subcommand(argc, argv); }
