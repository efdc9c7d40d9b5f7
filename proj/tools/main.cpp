#include <iostream>

#include "cxdi/cli.hpp"

int main(int argc, char** argv) {
    return cxdi::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
