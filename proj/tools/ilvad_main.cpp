#include <iostream>
#include <string>
#include <vector>

#include "ilvad/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return ilvad::cli::run(args, std::cout, std::cerr);
}
