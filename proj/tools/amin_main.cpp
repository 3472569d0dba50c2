#include <iostream>

#include "amin/cli.hpp"

int main(int argc, char** argv) { return amin::run_cli(argc, argv, std::cout, std::cerr); }
