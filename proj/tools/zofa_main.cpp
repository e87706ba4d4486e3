#include <iostream>

#include "zofa/cli.hpp"

int main(int argc, char** argv) { return zofa::cli::run_cli(argc, argv, std::cout, std::cerr); }
