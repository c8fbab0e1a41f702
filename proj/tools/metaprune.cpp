#include <iostream>
#include <string>
#include <vector>

#include "metaprune/cli/commands.hpp"

int main(int argc, char** argv) {
    metaprune::cli::install_signal_handlers();
    std::vector<std::string> args(argv, argv + argc);
    return metaprune::cli::run_cli(args, std::cout, std::cerr);
}
