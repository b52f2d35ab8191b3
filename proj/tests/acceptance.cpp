// Runs every acceptance criterion and prints one pass/fail line each.
#include <cstdlib>
#include <iostream>
#include <string>

#include "cmrr/suite.hpp"

int main(int argc, char** argv) {
    cmrr::SuiteOptions opt;
    opt.out_dir = argc > 1 ? argv[1] : "acceptance_out";
    if (const char* seed = std::getenv("CMRR_SEED")) opt.seed = std::stoull(seed);
    int failed = 0;
    for (const auto& r : cmrr::run_acceptance(opt)) {
        std::cout << cmrr::format_result(r) << std::endl;
        failed += r.passed ? 0 : 1;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
