#include "cmrr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cmrr/error.hpp"

namespace cmrr {

namespace {

// Pairs a query with a target in (image, caption) order.
double pair_logit(const ModelParams& params, const Item& query, const Item& target) {
    return query.modality == Modality::Image ? logit(params, query, target) : logit(params, target, query);
}

void check_top_m(std::size_t top_m) {
    if (top_m == 0) throw ValidationError("top_m must be >= 1");
}

// Sorts entries by key descending, ties by ascending id, and keeps top_m.
void order_entries(std::vector<RankEntry>& entries, const std::vector<double>& keys, std::size_t top_m) {
    std::vector<std::size_t> order(entries.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return keys[a] != keys[b] ? keys[a] > keys[b] : entries[a].id < entries[b].id;
    });
    std::vector<RankEntry> sorted;
    sorted.reserve(std::min(top_m, order.size()));
    for (std::size_t i = 0; i < order.size() && i < top_m; ++i) sorted.push_back(entries[order[i]]);
    entries = std::move(sorted);
}

std::vector<double> min_max_normalize(std::span<const double> s) {
    std::vector<double> out(s.size(), 0.0);
    if (s.empty()) return out;
    const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
    if (*hi == *lo) return out;
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = (s[i] - *lo) / (*hi - *lo);
    return out;
}

}  // namespace

Fusion Fusion::parse(const std::string& text) {
    Fusion f;
    if (text == "ce") return f;
    const auto colon = text.find(':');
    const std::string kind = text.substr(0, colon);
    if (colon == std::string::npos || (kind != "add" && kind != "normadd")) {
        throw ValidationError("invalid fusion \"" + text + "\"; expected ce, add:<lambda> or normadd:<lambda>");
    }
    f.kind = kind == "add" ? FusionKind::Add : FusionKind::NormAdd;
    try {
        std::size_t used = 0;
        const std::string num = text.substr(colon + 1);
        f.lambda = std::stod(num, &used);
        if (used != num.size()) throw std::invalid_argument(num);
    } catch (const std::exception&) {
        throw ValidationError("invalid fusion weight in \"" + text + "\"");
    }
    f.validate();
    return f;
}

std::string Fusion::to_string() const {
    if (kind == FusionKind::CEOnly) return "ce";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s:%.17g", kind == FusionKind::Add ? "add" : "normadd", lambda);
    return buf;
}

void Fusion::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("fusion lambda must lie in [0,1]");
}

void CoopConfig::validate() const {
    if (k == 0) throw ValidationError("k must be >= 1");
    fusion.validate();
}

std::vector<double> fuse_scores(const Fusion& fusion, std::span<const double> be, std::span<const double> ce) {
    if (be.size() != ce.size()) throw ValidationError("fuse_scores: score lists differ in length");
    std::vector<double> out(ce.begin(), ce.end());
    switch (fusion.kind) {
        case FusionKind::CEOnly:
            break;
        case FusionKind::Add:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = fusion.lambda * be[i] + (1.0 - fusion.lambda) * ce[i];
            break;
        case FusionKind::NormAdd: {
            const auto nb = min_max_normalize(be);
            const auto nc = min_max_normalize(ce);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = fusion.lambda * nb[i] + (1.0 - fusion.lambda) * nc[i];
            break;
        }
    }
    return out;
}

Ranking retrieve_be(const Item& query, const EmbeddingIndex& index, const ModelParams& params, std::size_t top_m) {
    check_top_m(top_m);
    Ranking r;
    r.query_id = query.id;
    const auto q = encode(params, query);
    r.counters.encode_calls = 1;
    for (const ScoredId& s : topk(index, q, top_m)) r.entries.push_back({s.id, s.score, std::nullopt, s.score});
    return r;
}

Ranking retrieve_ce(const Item& query, const Corpus& corpus, std::span<const std::uint32_t> target_ids,
                    const ModelParams& params, std::size_t top_m) {
    check_top_m(top_m);
    if (target_ids.empty()) throw ValidationError("retrieve_ce needs at least one target");
    Ranking r;
    r.query_id = query.id;
    std::vector<double> keys;
    keys.reserve(target_ids.size());
    r.entries.reserve(target_ids.size());
    for (std::uint32_t id : target_ids) {
        const double z = pair_logit(params, query, corpus.item(id));
        ++r.counters.cross_score_calls;
        const double p = sigmoid(z);
        r.entries.push_back({id, std::nullopt, p, p});
        keys.push_back(z);
    }
    order_entries(r.entries, keys, top_m);
    return r;
}

Ranking retrieve_coop(const Item& query, const EmbeddingIndex& index, const Corpus& corpus, const ModelParams& params,
                      const CoopConfig& config, std::size_t top_m) {
    check_top_m(top_m);
    config.validate();
    Ranking r;
    r.query_id = query.id;
    const auto q = encode(params, query);
    r.counters.encode_calls = 1;
    const auto candidates = topk(index, q, config.k);

    std::vector<double> be(candidates.size()), logits(candidates.size()), probs(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        be[i] = candidates[i].score;
        logits[i] = pair_logit(params, query, corpus.item(candidates[i].id));
        ++r.counters.cross_score_calls;
        probs[i] = sigmoid(logits[i]);
    }
    const auto fused = fuse_scores(config.fusion, be, probs);
    for (std::size_t i = 0; i < candidates.size(); ++i) r.entries.push_back({candidates[i].id, be[i], probs[i], fused[i]});
    // CE-only ranks by logit so saturated probabilities still order correctly.
    order_entries(r.entries, config.fusion.kind == FusionKind::CEOnly ? logits : fused, top_m);
    return r;
}

}  // namespace cmrr
