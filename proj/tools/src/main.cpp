#include <iostream>

#include "hyspec_cli/app.hpp"

int main(int argc, char** argv) { return hyspec::cli::run_cli(argc, argv, std::cout, std::cerr); }
