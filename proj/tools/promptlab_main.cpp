#include <iostream>

#include "promptlab/cli.hpp"

int main(int argc, char** argv) { return promptlab::run_cli(argc, argv, std::cout, std::cerr); }
