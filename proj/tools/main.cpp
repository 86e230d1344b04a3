#include <iostream>

#include "egomem/cli.hpp"

int main(int argc, char** argv) { return egomem::cli::run(argc, argv, std::cin, std::cout, std::cerr); }
