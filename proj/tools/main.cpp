#include "prunelab/cli.hpp"

int main(int argc, char** argv) { return prunelab::run_cli(argc, argv); }
