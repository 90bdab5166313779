#include <iostream>

#include "eduseg/cli.hpp"

int main(int argc, char** argv) { return eduseg::cli::run(argc, argv, std::cout, std::cerr); }
