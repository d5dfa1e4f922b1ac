#include <iostream>
#include <string>
#include <vector>

#include "tbseg/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return tbseg::cli::run(args, std::cout, std::cerr);
}
