#include <iostream>

#include "hglm_cli/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return hglm::cli::run(args, std::cout, std::cerr);
}
