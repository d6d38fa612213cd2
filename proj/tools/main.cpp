#include <iostream>

#include "mvadv/cli.hpp"

int main(int argc, char** argv) { return mvadv::run_cli(argc, argv, std::cout, std::cerr); }
