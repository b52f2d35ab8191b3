#include "cmrr/index.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>
#include <unordered_set>

#include "cmrr/binary_io.hpp"
#include "cmrr/error.hpp"

namespace cmrr {

namespace {

constexpr char kIndexMagic[] = "CMRI";
constexpr std::uint16_t kIndexVersion = 1;

std::vector<float> normalized_query(std::span<const double> query, std::size_t dim) {
    if (query.size() != dim) {
        throw ValidationError("query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                              std::to_string(dim));
    }
    double sq = 0.0;
    for (double v : query) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!(norm >= EmbeddingIndex::kNormFloor)) throw ValidationError("zero-norm query");
    std::vector<float> q(dim);
    for (std::size_t i = 0; i < dim; ++i) q[i] = static_cast<float>(query[i] / norm);
    return q;
}

// Bounded heap whose top is the worst retained entry.
void scan_range(const EmbeddingIndex& index, const std::vector<float>& q, std::size_t begin, std::size_t end,
                std::size_t k, std::vector<ScoredId>& heap) {
    heap.clear();
    const std::size_t dim = index.dim();
    const auto& ids = index.ids();
    for (std::size_t i = begin; i < end; ++i) {
        const float* row = index.row(i).data();
        float dot = 0.0f;
        for (std::size_t j = 0; j < dim; ++j) dot += row[j] * q[j];
        const ScoredId cand{ids[i], static_cast<double>(dot)};
        if (heap.size() < k) {
            heap.push_back(cand);
            std::push_heap(heap.begin(), heap.end(), ranks_before);
        } else if (ranks_before(cand, heap.front())) {
            std::pop_heap(heap.begin(), heap.end(), ranks_before);
            heap.back() = cand;
            std::push_heap(heap.begin(), heap.end(), ranks_before);
        }
    }
}

}  // namespace

void EmbeddingIndex::add(std::uint32_t id, std::span<const double> embedding) {
    if (embedding.size() != dim_) {
        throw ValidationError("embedding dimension " + std::to_string(embedding.size()) + " for id " +
                              std::to_string(id) + " does not match index dimension " + std::to_string(dim_));
    }
    if (id_set_.contains(id)) throw ValidationError("duplicate index id " + std::to_string(id));
    double sq = 0.0;
    for (double v : embedding) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!(norm >= kNormFloor)) throw ValidationError("near-zero embedding for item " + std::to_string(id));
    ids_.push_back(id);
    id_set_.insert(id);
    for (double v : embedding) vectors_.push_back(static_cast<float>(v / norm));
}

EmbeddingIndex build_index(const ModelParams& params, std::span<const Item> items) {
    EmbeddingIndex out(params.config().embed_dim);
    for (const Item& it : items) out.add(it.id, encode(params, it));
    return out;
}

EmbeddingIndex build_index(const ModelParams& params, const Corpus& corpus, std::span<const std::uint32_t> ids) {
    EmbeddingIndex out(params.config().embed_dim);
    for (std::uint32_t id : ids) out.add(id, encode(params, corpus.item(id)));
    return out;
}

std::vector<ScoredId> topk(const EmbeddingIndex& index, std::span<const double> query, std::size_t k) {
    if (k == 0) throw ValidationError("k must be >= 1");
    const auto q = normalized_query(query, index.dim());
    std::vector<ScoredId> heap;
    heap.reserve(std::min(k, index.size()));
    scan_range(index, q, 0, index.size(), k, heap);
    std::sort(heap.begin(), heap.end(), ranks_before);
    return heap;
}

std::vector<std::vector<ScoredId>> topk_batch(const EmbeddingIndex& index, const std::vector<std::vector<double>>& queries,
                                              std::size_t k, std::size_t shards) {
    if (k == 0) throw ValidationError("k must be >= 1");
    if (shards == 0) throw ValidationError("shards must be >= 1");
    std::vector<std::vector<float>> qs;
    qs.reserve(queries.size());
    for (const auto& q : queries) qs.push_back(normalized_query(q, index.dim()));

    const std::size_t n = index.size();
    shards = std::max<std::size_t>(1, std::min(shards, n));
    // partial[s][q]: shard-local top-k
    std::vector<std::vector<std::vector<ScoredId>>> partial(shards, std::vector<std::vector<ScoredId>>(qs.size()));
    auto run_shard = [&](std::size_t s) {
        const std::size_t begin = n * s / shards;
        const std::size_t end = n * (s + 1) / shards;
        for (std::size_t qi = 0; qi < qs.size(); ++qi) scan_range(index, qs[qi], begin, end, k, partial[s][qi]);
    };
    if (shards == 1) {
        run_shard(0);
    } else {
        std::vector<std::jthread> workers;
        workers.reserve(shards);
        for (std::size_t s = 0; s < shards; ++s) workers.emplace_back(run_shard, s);
    }

    std::vector<std::vector<ScoredId>> out(qs.size());
    for (std::size_t qi = 0; qi < qs.size(); ++qi) {
        auto& merged = out[qi];
        for (std::size_t s = 0; s < shards; ++s) merged.insert(merged.end(), partial[s][qi].begin(), partial[s][qi].end());
        std::sort(merged.begin(), merged.end(), ranks_before);
        if (merged.size() > k) merged.resize(k);
    }
    return out;
}

std::vector<std::uint8_t> serialize_index(const EmbeddingIndex& index) {
    ByteWriter w;
    w.magic({kIndexMagic, 4});
    w.u16(kIndexVersion);
    w.u32(static_cast<std::uint32_t>(index.dim()));
    w.u32(static_cast<std::uint32_t>(index.size()));
    for (std::uint32_t id : index.ids()) w.u32(id);
    for (std::size_t i = 0; i < index.size(); ++i) {
        for (float v : index.row(i)) w.f32(v);
    }
    return w.bytes();
}

EmbeddingIndex deserialize_index(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic({kIndexMagic, 4});
    if (const auto v = r.u16(); v != kIndexVersion) throw ParseError("unsupported index version " + std::to_string(v));
    const std::uint32_t dim = r.u32();
    const std::uint32_t n = r.u32();
    if (dim == 0) throw ParseError("malformed index header: dimension 0");
    EmbeddingIndex index(dim);
    index.ids_.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t id = r.u32();
        if (!index.id_set_.insert(id).second) throw ParseError("duplicate index id " + std::to_string(id));
        index.ids_.push_back(id);
    }
    index.vectors_.reserve(std::size_t{n} * dim);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::size_t row_at = r.offset();
        double sq = 0.0;
        for (std::uint32_t j = 0; j < dim; ++j) {
            const float v = r.f32();
            sq += static_cast<double>(v) * v;
            index.vectors_.push_back(v);
        }
        if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
            throw ParseError("index row at byte offset " + std::to_string(row_at) + " is not unit norm");
        }
    }
    r.expect_end();
    return index;
}

void save_index(const EmbeddingIndex& index, const std::filesystem::path& path) {
    write_file(path, serialize_index(index));
}

EmbeddingIndex load_index(const std::filesystem::path& path) { return deserialize_index(read_file(path)); }

}  // namespace cmrr
