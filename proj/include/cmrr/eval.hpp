#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmrr/corpus.hpp"
#include "cmrr/model.hpp"
#include "cmrr/pipeline.hpp"

namespace cmrr {

enum class Direction {
    ImageRetrieval,  // caption query -> images
    TextRetrieval,   // image query -> captions
};

const char* to_string(Direction d);

using GoldMap = std::map<std::uint32_t, std::vector<std::uint32_t>>;  // query -> relevant targets

struct EvalTask {
    Direction direction = Direction::ImageRetrieval;
    std::vector<std::uint32_t> queries;
    std::vector<std::uint32_t> targets;
    GoldMap gold;

    // Every query needs at least one gold target inside `targets`, and modalities must line up.
    void validate(const Corpus& corpus) const;
};

// All queries of one modality against all items of the other; queries without gold are skipped.
EvalTask make_task(const Corpus& corpus, Direction direction);

// Hit if any gold target appears within the first M entries.
double recall_at_m(std::span<const Ranking> rankings, const GoldMap& gold, std::size_t m);

EvalTask augment_with_distractors(const EvalTask& task, std::span<const std::uint32_t> distractor_ids);

enum class Strategy { BE, CE, Coop };

const char* to_string(Strategy s);
Strategy parse_strategy(const std::string& text);

struct StrategyConfig {
    Strategy strategy = Strategy::Coop;
    CoopConfig coop;
    std::size_t top_m = 10;  // ranking depth kept per query
};

struct RecallTriple {
    double r1 = 0.0;
    double r5 = 0.0;
    double r10 = 0.0;
};

// Arithmetic mean of R@{1,5,10} over both directions.
double mean_recall(const RecallTriple& image_retrieval, const RecallTriple& text_retrieval);

struct DirectionReport {
    Direction direction = Direction::ImageRetrieval;
    RecallTriple recall;
    std::vector<Ranking> rankings;
    std::vector<std::size_t> first_gold_rank;  // 1-based per query; 0 when no gold was returned
    Counters counters;
    double seconds = 0.0;

    double recall_at(std::size_t m) const;
};

struct EvalReport {
    StrategyConfig strategy;
    std::optional<DirectionReport> image_retrieval;
    std::optional<DirectionReport> text_retrieval;
};

// Throws ValidationError if a direction is missing.
double mean_recall(const EvalReport& report);

DirectionReport evaluate(const ModelParams& params, const Corpus& corpus, const EvalTask& task,
                         const StrategyConfig& strategy);
EvalReport evaluate(const ModelParams& params, const Corpus& corpus, const StrategyConfig& strategy);
EvalReport evaluate(const ModelParams& params, const Corpus& corpus, const EvalTask& image_retrieval,
                    const EvalTask& text_retrieval, const StrategyConfig& strategy);

struct BenchRow {
    Strategy strategy = Strategy::BE;
    std::size_t n = 0;
    double median_seconds = 0.0;
    Counters counters_per_query;
};

struct BenchConfig {
    std::vector<std::size_t> corpus_sizes{1000, 10000, 50000};
    std::vector<Strategy> strategies{Strategy::BE, Strategy::Coop, Strategy::CE};
    std::size_t repeats = 5;
    std::size_t k = 20;
    std::size_t tokens_per_item = 4;
    double noise_sigma = 0.1;
    std::uint64_t seed = 1;
};

// Times single-query retrieval (text -> image) over pre-encoded planted collections.
std::vector<BenchRow> bench_latency(const ModelParams& params, const BenchConfig& config);

// Least-squares slope of median latency against N for one strategy.
double latency_slope(std::span<const BenchRow> rows, Strategy strategy);

}  // namespace cmrr
