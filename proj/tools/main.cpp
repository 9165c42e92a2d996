#include "polylean/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return polylean::cli::run(argc, argv, std::cout, std::cerr); }
