#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <unordered_set>
#include <vector>

#include "cmrr/corpus.hpp"
#include "cmrr/model.hpp"

namespace cmrr {

struct ScoredId {
    std::uint32_t id = 0;
    double score = 0.0;

    bool operator==(const ScoredId&) const = default;
};

// Strict ranking order: higher score first, ties by ascending id.
inline bool ranks_before(const ScoredId& a, const ScoredId& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
}

// Unit-norm embeddings in one contiguous row-major N x E block.
class EmbeddingIndex {
public:
    static constexpr double kNormFloor = 1e-12;

    EmbeddingIndex() = default;
    explicit EmbeddingIndex(std::size_t dim) : dim_(dim) {}

    // Normalizes and appends; throws ValidationError on a near-zero vector or duplicate id.
    void add(std::uint32_t id, std::span<const double> embedding);

    std::size_t size() const { return ids_.size(); }
    std::size_t dim() const { return dim_; }
    const std::vector<std::uint32_t>& ids() const { return ids_; }
    std::span<const float> row(std::size_t i) const { return {vectors_.data() + i * dim_, dim_}; }

    // Vector payload plus id storage, in bytes.
    std::size_t memory_bytes() const { return vectors_.size() * sizeof(float) + ids_.size() * sizeof(std::uint32_t); }

    bool operator==(const EmbeddingIndex&) const = default;

private:
    friend EmbeddingIndex deserialize_index(std::span<const std::uint8_t> bytes);

    std::size_t dim_ = 0;
    std::vector<std::uint32_t> ids_;
    std::unordered_set<std::uint32_t> id_set_;
    std::vector<float> vectors_;
};

EmbeddingIndex build_index(const ModelParams& params, std::span<const Item> items);
EmbeddingIndex build_index(const ModelParams& params, const Corpus& corpus, std::span<const std::uint32_t> ids);

// Exact scan; returns min(k, N) entries in ranks_before order.
std::vector<ScoredId> topk(const EmbeddingIndex& index, std::span<const double> query, std::size_t k);

// Same results as topk per query; rows are split into `shards` contiguous ranges scanned in parallel.
std::vector<std::vector<ScoredId>> topk_batch(const EmbeddingIndex& index, const std::vector<std::vector<double>>& queries,
                                              std::size_t k, std::size_t shards);

std::vector<std::uint8_t> serialize_index(const EmbeddingIndex& index);
EmbeddingIndex deserialize_index(std::span<const std::uint8_t> bytes);
void save_index(const EmbeddingIndex& index, const std::filesystem::path& path);
EmbeddingIndex load_index(const std::filesystem::path& path);

}  // namespace cmrr
