#include <iostream>

#include "pacm/cli.hpp"

int main(int argc, char** argv) { return pacm::run_cli(argc, argv, std::cout, std::cerr); }
