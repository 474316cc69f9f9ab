#include <iostream>

#include "cotmisr/cli.hpp"

int main(int argc, char** argv) { return cotmisr::cli::run(argc, argv, std::cout, std::cerr); }
