#include <iostream>

#include "multimix/cli.hpp"

int main(int argc, char** argv) { return multimix::run_cli(argc, argv, std::cout, std::cerr); }
