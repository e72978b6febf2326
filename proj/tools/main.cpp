#include <iostream>

#include "choiceset/cli.hpp"

int main(int argc, char** argv) { return choiceset::cmd_dispatch(argc, argv, std::cout, std::cerr); }
