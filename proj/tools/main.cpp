#include <iostream>

#include "fkbridge/cli.hpp"

int main(int argc, char** argv) { return fkbridge::cli::run(argc, argv, std::cout, std::cerr); }
