#include "fairgen/cli.hpp"

int main(int argc, char** argv) { return fairgen::cli::run(argc, argv); }
