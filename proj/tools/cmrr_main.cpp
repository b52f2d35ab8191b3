#include <iostream>
#include <string>
#include <vector>

#include "cmrr/cli.hpp"

int main(int argc, char** argv) {
    return cmrr::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
