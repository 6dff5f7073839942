#include <iostream>

#include "stsa/cli.hpp"

int main(int argc, char** argv) { return stsa::run_cli(argc, argv, std::cout, std::cerr); }
