#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace cmrr {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct SuiteOptions {
    std::uint64_t seed = 1;
    std::filesystem::path out_dir = "reproduce_out";
    std::set<int> only;                        // empty: every criterion
    bool corrupt_checkpoint = false;           // damage the saved checkpoint before it is reloaded
    std::optional<std::size_t> train_steps;    // override of the default training budget
};

// Desk-scale acceptance pipeline: generate -> train -> evaluate -> bench, one result per criterion.
std::vector<CriterionResult> run_acceptance(const SuiteOptions& options);

// Deterministic artifacts of one joint training run (checkpoint, rankings, report) written under dir.
void write_reproducible_artifacts(std::uint64_t seed, const std::filesystem::path& dir,
                                  std::optional<std::size_t> train_steps = std::nullopt);

std::string format_result(const CriterionResult& r);

}  // namespace cmrr
