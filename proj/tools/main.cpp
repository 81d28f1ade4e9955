#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return structmap::cli::run(argc, argv, std::cout, std::cerr); }
