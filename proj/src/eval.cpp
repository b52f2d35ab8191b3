#include "cmrr/eval.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <unordered_map>

#include "cmrr/error.hpp"
#include "cmrr/index.hpp"

namespace cmrr {

namespace {

Modality query_modality(Direction d) { return d == Direction::ImageRetrieval ? Modality::Caption : Modality::Image; }

std::size_t first_gold_rank(const Ranking& r, const std::vector<std::uint32_t>& gold) {
    for (std::size_t i = 0; i < r.entries.size(); ++i) {
        if (std::find(gold.begin(), gold.end(), r.entries[i].id) != gold.end()) return i + 1;
    }
    return 0;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

const char* to_string(Direction d) { return d == Direction::ImageRetrieval ? "image_retrieval" : "text_retrieval"; }

const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::BE: return "be";
        case Strategy::CE: return "ce";
        case Strategy::Coop: return "coop";
    }
    return "?";
}

Strategy parse_strategy(const std::string& text) {
    if (text == "be") return Strategy::BE;
    if (text == "ce") return Strategy::CE;
    if (text == "coop") return Strategy::Coop;
    throw ValidationError("unknown strategy \"" + text + "\"; expected be, ce or coop");
}

void EvalTask::validate(const Corpus& corpus) const {
    const Modality qm = query_modality(direction);
    const Modality tm = qm == Modality::Image ? Modality::Caption : Modality::Image;
    std::set<std::uint32_t> target_set(targets.begin(), targets.end());
    if (target_set.size() != targets.size()) throw ValidationError("duplicate target ids in task");
    for (std::uint32_t t : targets) {
        if (corpus.item(t).modality != tm) throw ValidationError("target " + std::to_string(t) + " has wrong modality");
    }
    for (std::uint32_t q : queries) {
        if (corpus.item(q).modality != qm) throw ValidationError("query " + std::to_string(q) + " has wrong modality");
        auto it = gold.find(q);
        if (it == gold.end() || it->second.empty()) throw ValidationError("query " + std::to_string(q) + " has no gold target");
        bool present = false;
        for (std::uint32_t g : it->second) present |= target_set.contains(g);
        if (!present) throw ValidationError("no gold target of query " + std::to_string(q) + " is among the targets");
    }
}

EvalTask make_task(const Corpus& corpus, Direction direction) {
    EvalTask task;
    task.direction = direction;
    const Modality qm = query_modality(direction);
    task.targets = corpus.ids_of(qm == Modality::Image ? Modality::Caption : Modality::Image);
    for (const GoldPair& g : corpus.gold) {
        if (qm == Modality::Image) {
            task.gold[g.image_id].push_back(g.caption_id);
        } else {
            task.gold[g.caption_id].push_back(g.image_id);
        }
    }
    for (const auto& [q, _] : task.gold) task.queries.push_back(q);
    return task;
}

double recall_at_m(std::span<const Ranking> rankings, const GoldMap& gold, std::size_t m) {
    if (gold.empty()) throw ValidationError("recall_at_m: no queries");
    std::unordered_map<std::uint32_t, const Ranking*> by_query;
    for (const Ranking& r : rankings) by_query[r.query_id] = &r;
    std::size_t hits = 0;
    for (const auto& [q, targets] : gold) {
        auto it = by_query.find(q);
        if (it == by_query.end()) throw ValidationError("query " + std::to_string(q) + " has no ranking");
        const std::size_t rank = first_gold_rank(*it->second, targets);
        if (rank != 0 && rank <= m) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(gold.size());
}

EvalTask augment_with_distractors(const EvalTask& task, std::span<const std::uint32_t> distractor_ids) {
    std::set<std::uint32_t> taken(task.targets.begin(), task.targets.end());
    taken.insert(task.queries.begin(), task.queries.end());
    for (const auto& [_, g] : task.gold) taken.insert(g.begin(), g.end());
    EvalTask out = task;
    for (std::uint32_t id : distractor_ids) {
        if (!taken.insert(id).second) throw ValidationError("distractor id " + std::to_string(id) + " collides with the task");
        out.targets.push_back(id);
    }
    return out;
}

double mean_recall(const RecallTriple& ir, const RecallTriple& tr) {
    return (ir.r1 + ir.r5 + ir.r10 + tr.r1 + tr.r5 + tr.r10) / 6.0;
}

double mean_recall(const EvalReport& report) {
    if (!report.image_retrieval || !report.text_retrieval) throw ValidationError("mean recall needs both directions");
    return mean_recall(report.image_retrieval->recall, report.text_retrieval->recall);
}

double DirectionReport::recall_at(std::size_t m) const {
    if (first_gold_rank.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t r : first_gold_rank) hits += (r != 0 && r <= m) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(first_gold_rank.size());
}

DirectionReport evaluate(const ModelParams& params, const Corpus& corpus, const EvalTask& task,
                         const StrategyConfig& strategy) {
    task.validate(corpus);
    if (strategy.top_m == 0) throw ValidationError("top_m must be >= 1");
    DirectionReport rep;
    rep.direction = task.direction;

    EmbeddingIndex index;
    if (strategy.strategy != Strategy::CE) index = build_index(params, corpus, task.targets);

    const auto start = std::chrono::steady_clock::now();
    rep.rankings.reserve(task.queries.size());
    for (std::uint32_t q : task.queries) {
        const Item& query = corpus.item(q);
        Ranking r;
        switch (strategy.strategy) {
            case Strategy::BE: r = retrieve_be(query, index, params, strategy.top_m); break;
            case Strategy::CE: r = retrieve_ce(query, corpus, task.targets, params, strategy.top_m); break;
            case Strategy::Coop: r = retrieve_coop(query, index, corpus, params, strategy.coop, strategy.top_m); break;
        }
        rep.counters += r.counters;
        rep.first_gold_rank.push_back(first_gold_rank(r, task.gold.at(q)));
        rep.rankings.push_back(std::move(r));
    }
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rep.recall = {rep.recall_at(1), rep.recall_at(5), rep.recall_at(10)};
    return rep;
}

EvalReport evaluate(const ModelParams& params, const Corpus& corpus, const EvalTask& ir, const EvalTask& tr,
                    const StrategyConfig& strategy) {
    if (ir.direction != Direction::ImageRetrieval || tr.direction != Direction::TextRetrieval) {
        throw ValidationError("evaluate: tasks passed in the wrong direction slots");
    }
    EvalReport report;
    report.strategy = strategy;
    report.image_retrieval = evaluate(params, corpus, ir, strategy);
    report.text_retrieval = evaluate(params, corpus, tr, strategy);
    return report;
}

EvalReport evaluate(const ModelParams& params, const Corpus& corpus, const StrategyConfig& strategy) {
    return evaluate(params, corpus, make_task(corpus, Direction::ImageRetrieval),
                    make_task(corpus, Direction::TextRetrieval), strategy);
}

std::vector<BenchRow> bench_latency(const ModelParams& params, const BenchConfig& config) {
    if (!std::is_sorted(config.corpus_sizes.begin(), config.corpus_sizes.end())) {
        throw ValidationError("bench corpus sizes must be sorted ascending");
    }
    if (config.repeats == 0) throw ValidationError("bench repeats must be >= 1");
    CoopConfig coop;
    coop.k = config.k;

    std::vector<BenchRow> rows;
    for (std::size_t n : config.corpus_sizes) {
        PlantedSpec spec;
        spec.n_pairs = n;
        spec.tokens_per_item = config.tokens_per_item;
        spec.feature_dim = params.config().feature_dim;
        spec.noise_sigma = config.noise_sigma;
        spec.seed = config.seed + n;
        const Corpus corpus = generate_planted(spec);
        const auto targets = corpus.ids_of(Modality::Image);
        const auto captions = corpus.ids_of(Modality::Caption);
        const EmbeddingIndex index = build_index(params, corpus, targets);

        for (Strategy s : config.strategies) {
            std::vector<double> times;
            Counters per_query;
            for (std::size_t rep = 0; rep < config.repeats; ++rep) {
                const Item& query = corpus.item(captions[rep % captions.size()]);
                const auto start = std::chrono::steady_clock::now();
                Ranking r;
                switch (s) {
                    case Strategy::BE: r = retrieve_be(query, index, params, 10); break;
                    case Strategy::CE: r = retrieve_ce(query, corpus, targets, params, 10); break;
                    case Strategy::Coop: r = retrieve_coop(query, index, corpus, params, coop, 10); break;
                }
                times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
                per_query = r.counters;
            }
            rows.push_back({s, n, median(times), per_query});
        }
    }
    return rows;
}

double latency_slope(std::span<const BenchRow> rows, Strategy strategy) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0, count = 0;
    for (const BenchRow& r : rows) {
        if (r.strategy != strategy) continue;
        const double x = static_cast<double>(r.n);
        sx += x;
        sy += r.median_seconds;
        sxx += x * x;
        sxy += x * r.median_seconds;
        count += 1;
    }
    const double denom = count * sxx - sx * sx;
    if (count < 2 || denom == 0.0) throw ValidationError("latency slope needs at least two corpus sizes");
    return (count * sxy - sx * sy) / denom;
}

}  // namespace cmrr
