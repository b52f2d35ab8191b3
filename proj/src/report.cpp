#include "cmrr/report.hpp"

#include <cstdio>

namespace cmrr {

using nlohmann::json;

json to_json(const Counters& c) {
    return {{"encode_calls", c.encode_calls}, {"cross_score_calls", c.cross_score_calls}};
}

json to_json(const Ranking& r) {
    json entries = json::array();
    for (const RankEntry& e : r.entries) {
        json j = {{"id", e.id}, {"final_score", e.final_score}};
        j["be_score"] = e.be_score ? json(*e.be_score) : json(nullptr);
        j["ce_score"] = e.ce_score ? json(*e.ce_score) : json(nullptr);
        entries.push_back(std::move(j));
    }
    return {{"query_id", r.query_id}, {"entries", std::move(entries)}, {"counters", to_json(r.counters)}};
}

namespace {

json direction_json(const DirectionReport& d, bool include_timings) {
    json j = {{"direction", to_string(d.direction)},
              {"queries", d.first_gold_rank.size()},
              {"r1", d.recall.r1},
              {"r5", d.recall.r5},
              {"r10", d.recall.r10},
              {"first_gold_rank", d.first_gold_rank},
              {"counters", to_json(d.counters)}};
    if (include_timings) j["seconds"] = d.seconds;
    return j;
}

}  // namespace

json to_json(const EvalReport& report, bool include_timings) {
    json j;
    j["strategy"] = {{"mode", to_string(report.strategy.strategy)},
                     {"k", report.strategy.coop.k},
                     {"fusion", report.strategy.coop.fusion.to_string()},
                     {"top_m", report.strategy.top_m}};
    Counters total;
    if (report.image_retrieval) {
        j["image_retrieval"] = direction_json(*report.image_retrieval, include_timings);
        total += report.image_retrieval->counters;
    }
    if (report.text_retrieval) {
        j["text_retrieval"] = direction_json(*report.text_retrieval, include_timings);
        total += report.text_retrieval->counters;
    }
    j["mR"] = report.image_retrieval && report.text_retrieval ? json(mean_recall(report)) : json(nullptr);
    j["counters"] = to_json(total);
    return j;
}

json to_json(std::span<const BenchRow> rows) {
    json out = json::array();
    for (const BenchRow& r : rows) {
        out.push_back({{"strategy", to_string(r.strategy)},
                       {"n", r.n},
                       {"median_seconds", r.median_seconds},
                       {"counters_per_query", to_json(r.counters_per_query)}});
    }
    return out;
}

json to_json(const HistoryRecord& rec) {
    json j = {{"step", rec.step}, {"loss", rec.loss}, {"lr", rec.lr}};
    if (rec.dev_mr) j["dev_mR"] = *rec.dev_mr;
    return j;
}

std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace cmrr
