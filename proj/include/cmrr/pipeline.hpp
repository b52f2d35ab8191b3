#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmrr/corpus.hpp"
#include "cmrr/index.hpp"
#include "cmrr/model.hpp"

namespace cmrr {

struct Counters {
    std::uint64_t encode_calls = 0;
    std::uint64_t cross_score_calls = 0;

    Counters& operator+=(const Counters& o) {
        encode_calls += o.encode_calls;
        cross_score_calls += o.cross_score_calls;
        return *this;
    }
    bool operator==(const Counters&) const = default;
};

struct RankEntry {
    std::uint32_t id = 0;
    std::optional<double> be_score;  // cosine
    std::optional<double> ce_score;  // probability
    double final_score = 0.0;

    bool operator==(const RankEntry&) const = default;
};

struct Ranking {
    std::uint32_t query_id = 0;
    std::vector<RankEntry> entries;
    Counters counters;

    bool operator==(const Ranking&) const = default;
};

enum class FusionKind { CEOnly, Add, NormAdd };

struct Fusion {
    FusionKind kind = FusionKind::CEOnly;
    double lambda = 0.0;  // weight on the bi-encoder score

    // "ce", "add:<lambda>" or "normadd:<lambda>".
    static Fusion parse(const std::string& text);
    std::string to_string() const;
    void validate() const;

    bool operator==(const Fusion&) const = default;
};

struct CoopConfig {
    std::size_t k = 20;
    Fusion fusion;

    void validate() const;
};

// Final scores over aligned candidate lists. ce_probs must already be probabilities.
std::vector<double> fuse_scores(const Fusion& fusion, std::span<const double> be_scores, std::span<const double> ce_probs);

// Bi-encoder: one query encode plus an index scan.
Ranking retrieve_be(const Item& query, const EmbeddingIndex& index, const ModelParams& params, std::size_t top_m);

// Cross-encoder over every target, ranked by logit.
Ranking retrieve_ce(const Item& query, const Corpus& corpus, std::span<const std::uint32_t> target_ids,
                    const ModelParams& params, std::size_t top_m);

// Bi-encoder top-k candidates reranked by the cross-encoder; never leaves the candidate set.
Ranking retrieve_coop(const Item& query, const EmbeddingIndex& index, const Corpus& corpus, const ModelParams& params,
                      const CoopConfig& config, std::size_t top_m);

}  // namespace cmrr
