#include <doctest.h>

#include "cmrr/suite.hpp"
#include "helpers.hpp"

TEST_SUITE("suite") {

TEST_CASE("a damaged checkpoint fails the trained-quality criterion") {
    testutil::TempDir dir("suite");
    cmrr::SuiteOptions opt;
    opt.out_dir = dir.path();
    opt.only = {5};
    opt.train_steps = 20;
    opt.corrupt_checkpoint = true;
    const auto results = cmrr::run_acceptance(opt);
    REQUIRE(results.size() == 1);
    CHECK(results[0].id == 5);
    CHECK_FALSE(results[0].passed);
    CHECK(results[0].detail.find("checkpoint") != std::string::npos);
}

}  // TEST_SUITE
