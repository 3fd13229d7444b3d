#include <iostream>

#include "annot/cli.hpp"

int main(int argc, char** argv) { return annot::cli_dispatch(argc, argv, std::cout, std::cerr); }
