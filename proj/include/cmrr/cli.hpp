#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "cmrr/corpus.hpp"
#include "cmrr/model.hpp"
#include "cmrr/pipeline.hpp"
#include "cmrr/train.hpp"

namespace cmrr {

// Resolved run configuration: built-in defaults < key=value file < command-line flags.
class RunConfig {
public:
    RunConfig();

    // Throws ValidationError for unknown keys.
    void set(const std::string& key, const std::string& value, const std::string& source);
    void load_file(const std::filesystem::path& path);

    const std::string& get(const std::string& key) const;
    bool is_default(const std::string& key) const;
    double get_double(const std::string& key) const;
    std::size_t get_size(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    std::vector<std::size_t> get_size_list(const std::string& key) const;

    PlantedSpec planted() const;
    ModelConfig model(std::uint32_t feature_dim) const;
    TrainConfig train() const;
    CoopConfig coop() const;

    // "key=value" lines in key order, each followed by "  # <source>" when with_sources is set.
    std::string dump(bool with_sources) const;

private:
    struct Entry {
        std::string value;
        std::string source;
    };
    std::map<std::string, Entry> entries_;
};

// Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cmrr
