#include <iostream>

#include "groupdecode/cli.hpp"

int main(int argc, char** argv) { return gdec::run_cli(argc, argv, std::cout, std::cerr); }
