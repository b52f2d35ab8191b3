#include "cmrr/suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "cmrr/binary_io.hpp"
#include "cmrr/corpus.hpp"
#include "cmrr/error.hpp"
#include "cmrr/eval.hpp"
#include "cmrr/index.hpp"
#include "cmrr/model.hpp"
#include "cmrr/pipeline.hpp"
#include "cmrr/report.hpp"
#include "cmrr/train.hpp"

namespace cmrr {

namespace {

namespace fs = std::filesystem;

// Criterion 5 corpus: the evaluation collection.
PlantedSpec eval_spec(std::uint64_t seed) {
    PlantedSpec s;
    s.n_pairs = 200;
    s.tokens_per_item = 4;
    s.feature_dim = 16;
    s.noise_sigma = 0.15;
    s.captions_per_image = 1;
    s.seed = seed;
    return s;
}

// Independent training draw from the same generator.
PlantedSpec train_spec(std::uint64_t seed) {
    PlantedSpec s = eval_spec(seed + 1000);
    s.n_pairs = 5000;
    return s;
}

struct TrainedModel {
    ModelParams params;
    Corpus eval_corpus;
    fs::path checkpoint;
};

TrainedModel train_reference(std::uint64_t seed, const fs::path& dir, std::optional<std::size_t> steps,
                             bool corrupt = false) {
    const CorpusSplit parts = split(generate_planted(train_spec(seed)), 0.9, 0.05, seed);
    ModelConfig mc;
    mc.feature_dim = 16;
    mc.seed = seed;
    TrainConfig tc;
    tc.mode = TrainMode::Joint;
    tc.seed = seed;
    if (steps) tc.steps = *steps;
    const TrainResult res = train_joint(parts.train.corpus, parts.dev.corpus, init_params(mc), tc);

    fs::create_directories(dir);
    TrainedModel out;
    out.checkpoint = dir / "joint.cmrm";
    save_checkpoint(res.params, out.checkpoint);
    if (corrupt) {
        auto bytes = read_file(out.checkpoint);
        bytes.resize(bytes.size() / 2);
        write_file(out.checkpoint, bytes);
    }
    out.params = load_checkpoint(out.checkpoint);
    out.eval_corpus = generate_planted(eval_spec(seed));
    return out;
}

double mean_r1(const EvalReport& r) { return 0.5 * (r.image_retrieval->recall.r1 + r.text_retrieval->recall.r1); }

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// Random planted corpus plus random model with a nonzero CE head.
struct Fixture {
    Corpus corpus;
    ModelParams params;
};

Fixture random_fixture(std::mt19937_64& rng, std::size_t max_pairs) {
    std::uniform_int_distribution<std::size_t> pairs(1, max_pairs), tokens(1, 4), dim(2, 16), embed(4, 24), layers(0, 3);
    std::uniform_real_distribution<double> sigma(0.0, 1.0), head(-1.0, 1.0);
    PlantedSpec spec;
    spec.n_pairs = pairs(rng);
    spec.tokens_per_item = tokens(rng);
    spec.feature_dim = dim(rng);
    spec.noise_sigma = sigma(rng);
    spec.captions_per_image = 1 + rng() % 2;
    spec.seed = rng();
    ModelConfig mc;
    mc.feature_dim = static_cast<std::uint32_t>(spec.feature_dim);
    mc.embed_dim = static_cast<std::uint32_t>(embed(rng));
    mc.trunk_layers = static_cast<std::uint32_t>(layers(rng));
    mc.layer_skip = rng() % 2 ? LayerSkip::SkipOdd : LayerSkip::Full;
    mc.seed = rng();
    Fixture f{generate_planted(spec), init_params(mc)};
    for (double& v : f.params.ce_bilinear()) v = head(rng);
    for (double& v : f.params.ce_image_weight()) v = head(rng);
    for (double& v : f.params.ce_caption_weight()) v = head(rng);
    f.params.ce_bias() = head(rng);
    return f;
}

// A few queries per direction from the fixture, with their target lists.
template <typename Fn>
void for_sample_queries(const Corpus& corpus, std::mt19937_64& rng, std::size_t per_direction, Fn&& fn) {
    for (Modality qm : {Modality::Image, Modality::Caption}) {
        auto queries = corpus.ids_of(qm);
        const auto targets = corpus.ids_of(qm == Modality::Image ? Modality::Caption : Modality::Image);
        std::shuffle(queries.begin(), queries.end(), rng);
        if (queries.size() > per_direction) queries.resize(per_direction);
        for (std::uint32_t q : queries) fn(corpus.item(q), targets);
    }
}

bool same_order(const Ranking& a, const Ranking& b) {
    if (a.entries.size() != b.entries.size()) return false;
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        if (a.entries[i].id != b.entries[i].id) return false;
    }
    return true;
}

CriterionResult oracle_equivalence(std::uint64_t seed) {
    std::mt19937_64 rng(seed * 7919 + 1);
    std::size_t failures = 0, queries = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Fixture f = random_fixture(rng, 100);
        for_sample_queries(f.corpus, rng, 4, [&](const Item& q, const std::vector<std::uint32_t>& targets) {
            const EmbeddingIndex index = build_index(f.params, f.corpus, targets);
            CoopConfig cc;
            cc.k = targets.size();
            const Ranking coop = retrieve_coop(q, index, f.corpus, f.params, cc, targets.size());
            const Ranking ce = retrieve_ce(q, f.corpus, targets, f.params, targets.size());
            bool ok = same_order(coop, ce);
            for (std::size_t i = 0; ok && i < ce.entries.size(); ++i) ok = coop.entries[i].ce_score == ce.entries[i].ce_score;
            failures += ok ? 0 : 1;
            ++queries;
        });
    }
    return {1, "oracle equivalence (coop k=N == ce)", failures == 0,
            std::to_string(queries) + " queries over 100 corpora, " + std::to_string(failures) + " mismatches"};
}

CriterionResult candidate_set(const TrainedModel& model) {
    std::ostringstream detail;
    bool ok = true;
    for (std::size_t k : {10, 20, 50}) {
        StrategyConfig be;
        be.strategy = Strategy::BE;
        be.top_m = k;
        StrategyConfig coop;
        coop.strategy = Strategy::Coop;
        coop.coop.k = k;
        coop.top_m = k;
        const auto rb = evaluate(model.params, model.eval_corpus, be);
        const auto rc = evaluate(model.params, model.eval_corpus, coop);
        const double b_ir = rb.image_retrieval->recall_at(k), c_ir = rc.image_retrieval->recall_at(k);
        const double b_tr = rb.text_retrieval->recall_at(k), c_tr = rc.text_retrieval->recall_at(k);
        ok = ok && b_ir == c_ir && b_tr == c_tr;
        detail << "k=" << k << " IR " << b_ir << "/" << c_ir << " TR " << b_tr << "/" << c_tr << "; ";
    }
    return {2, "candidate-set invariant R@k(coop) == R@k(be)", ok, detail.str()};
}

CriterionResult gradient_correctness(std::uint64_t seed) {
    double worst = 0.0;
    std::uint64_t worst_seed = 0;
    const char* worst_loss = "";
    for (int probe = 0; probe < 20; ++probe) {
        ModelConfig mc;
        mc.feature_dim = 16;
        const std::uint64_t probe_seed = seed * 1000 + static_cast<std::uint64_t>(probe);
        const GradCheckReport r = grad_check_probe(mc, probe_seed, 200);
        for (const auto& [name, value] : {std::pair{"bce", r.bce}, std::pair{"triplet", r.triplet}, std::pair{"joint", r.joint}}) {
            if (value <= worst) continue;
            worst = value;
            worst_seed = probe_seed;
            worst_loss = name;
        }
    }
    std::string detail = fmt("max relative error %.3e over 20 probes x 200 coordinates", worst);
    detail += " (probe seed " + std::to_string(worst_seed) + ", " + worst_loss + " loss)";
    return {3, "gradient correctness (bce, triplet, joint)", worst <= 1e-4, detail};
}

CriterionResult loss_ground_truths() {
    const double bce = bce_loss(0.0, 1).value;
    const std::vector<double> e1{1.0, 0.0}, e2{0.0, 1.0}, d{0.6, 0.8};
    const double separated = triplet_loss(e1, e1, e2, e2, 0.1).value;  // cos(i,c)=1, negatives at 0
    const double equal = triplet_loss(e1, e1, e1, e1, 0.1).value;      // all cosines equal
    const double fixture_a = triplet_loss(e1, e1, e2, d, 0.1).value;
    const double fixture_b = triplet_loss(e1, e1, e2, d, 0.5).value;
    const bool ok = std::abs(bce - std::log(2.0)) <= 1e-9 && separated == 0.0 && std::abs(equal - 0.2) <= 1e-12 &&
                    fixture_a == 0.0 && std::abs(fixture_b - 0.1) <= 1e-12;
    std::ostringstream detail;
    detail.precision(12);
    detail << "bce(0,1)=" << bce << " separated=" << separated << " all-equal=" << equal << " fixture(0.1)=" << fixture_a
           << " fixture(0.5)=" << fixture_b;
    return {4, "loss ground truths", ok, detail.str()};
}

CriterionResult training_effectiveness(const SuiteOptions& opt, std::optional<TrainedModel>& first) {
    std::vector<double> be_r1, coop_r1;
    for (std::uint64_t s = 0; s < 3; ++s) {
        const std::uint64_t seed = opt.seed + s;
        TrainedModel m;
        try {
            m = train_reference(seed, opt.out_dir / ("seed" + std::to_string(seed)), opt.train_steps,
                                opt.corrupt_checkpoint && s == 0);
        } catch (const std::exception& e) {
            return {5, "training effectiveness (joint, planted 200)", false, std::string("checkpoint reload failed: ") + e.what()};
        }
        StrategyConfig be;
        be.strategy = Strategy::BE;
        StrategyConfig coop;
        coop.strategy = Strategy::Coop;
        be_r1.push_back(mean_r1(evaluate(m.params, m.eval_corpus, be)));
        coop_r1.push_back(mean_r1(evaluate(m.params, m.eval_corpus, coop)));
        if (s == 0) first = std::move(m);
    }
    const double be = median3(be_r1), coop = median3(coop_r1);
    constexpr double kChance = 1.0 / 200.0;
    const bool ok = be >= 0.70 && coop >= be && be >= 100 * kChance && coop >= 100 * kChance;
    std::ostringstream detail;
    detail << "median R@1 over 3 seeds: BE " << be << ", Coop(k=20) " << coop << " (chance " << kChance << ")";
    return {5, "training effectiveness (joint, planted 200)", ok, detail.str()};
}

CriterionResult work_scaling(const ModelParams& params, std::uint64_t seed) {
    BenchConfig bc;
    bc.seed = seed;
    const auto rows = bench_latency(params, bc);
    bool counters_ok = true;
    double be50 = 0, coop50 = 0, ce50 = 0;
    for (const BenchRow& r : rows) {
        const std::uint64_t want = r.strategy == Strategy::CE ? r.n : (r.strategy == Strategy::Coop ? std::min(bc.k, r.n) : 0);
        counters_ok = counters_ok && r.counters_per_query.cross_score_calls == want;
        if (r.n == 50000) {
            (r.strategy == Strategy::BE ? be50 : r.strategy == Strategy::Coop ? coop50 : ce50) = r.median_seconds;
        }
    }
    const double ratio = latency_slope(rows, Strategy::CE) / latency_slope(rows, Strategy::Coop);
    const bool ok = counters_ok && be50 < coop50 && coop50 < ce50 && ratio >= 10.0;
    std::ostringstream detail;
    detail << "counters " << (counters_ok ? "exact" : "WRONG") << "; median @50k BE " << be50 << "s Coop " << coop50
           << "s CE " << ce50 << "s; slope(CE)/slope(Coop) " << ratio;
    return {6, "work/latency scaling", ok, detail.str()};
}

CriterionResult distractor_benchmark(std::uint64_t seed) {
    bool monotone = true;
    std::size_t strict_drops = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        PlantedSpec base;
        base.n_pairs = 50;
        base.noise_sigma = 0.1;
        base.seed = seed * 31 + s;
        // Out-of-distribution collection: another draw with much heavier noise.
        PlantedSpec ood = base;
        ood.n_pairs = 150;
        ood.noise_sigma = 0.5;
        ood.seed = base.seed + 100000;
        const Corpus core = generate_planted(base);
        const Corpus all = concat(core, generate_planted(ood));
        ModelConfig mc;
        mc.seed = base.seed;
        const ModelParams params = init_params(mc);

        const EvalTask ir = make_task(core, Direction::ImageRetrieval);
        const EvalTask tr = make_task(core, Direction::TextRetrieval);
        std::vector<std::uint32_t> extra_images, extra_captions;
        for (std::uint32_t id = static_cast<std::uint32_t>(core.items.size()); id < all.items.size(); ++id) {
            (all.items[id].modality == Modality::Image ? extra_images : extra_captions).push_back(id);
        }
        const EvalTask ir_aug = augment_with_distractors(ir, extra_images);
        const EvalTask tr_aug = augment_with_distractors(tr, extra_captions);
        for (Strategy st : {Strategy::BE, Strategy::CE}) {
            StrategyConfig sc;
            sc.strategy = st;
            const auto before = evaluate(params, all, ir, tr, sc);
            const auto after = evaluate(params, all, ir_aug, tr_aug, sc);
            for (const auto& [b, a] : {std::pair{&*before.image_retrieval, &*after.image_retrieval},
                                       std::pair{&*before.text_retrieval, &*after.text_retrieval}}) {
                for (std::size_t m : {1, 5, 10}) monotone = monotone && a->recall_at(m) <= b->recall_at(m);
                if (st == Strategy::BE && a->recall_at(1) < b->recall_at(1)) ++strict_drops;
            }
        }
    }
    return {7, "distractor benchmark (50 targets + 150 distractors)", monotone && strict_drops > 0,
            std::string("monotone ") + (monotone ? "yes" : "NO") + ", strict R@1 drops (untrained BE) " +
                std::to_string(strict_drops) + " of 10 direction-seeds"};
}

CriterionResult mr_arithmetic() {
    const double mr = mean_recall({76.4, 93.6, 96.2}, {89.4, 97.7, 99.0});
    return {8, "mR arithmetic", std::abs(mr - 92.05) <= 1e-9, fmt("mR = %.12f", mr)};
}

CriterionResult fusion_endpoints(std::uint64_t seed) {
    std::mt19937_64 rng(seed * 104729 + 5);
    std::size_t failures = 0, checks = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const Fixture f = random_fixture(rng, 60);
        for_sample_queries(f.corpus, rng, 1, [&](const Item& q, const std::vector<std::uint32_t>& targets) {
            const EmbeddingIndex index = build_index(f.params, f.corpus, targets);
            std::uniform_int_distribution<std::size_t> kd(1, targets.size());
            CoopConfig cc;
            cc.k = kd(rng);
            const Ranking ce_only = retrieve_coop(q, index, f.corpus, f.params, cc, cc.k);
            cc.fusion = Fusion{FusionKind::Add, 0.0};
            const Ranking add0 = retrieve_coop(q, index, f.corpus, f.params, cc, cc.k);
            cc.fusion = Fusion{FusionKind::Add, 1.0};
            const Ranking add1 = retrieve_coop(q, index, f.corpus, f.params, cc, cc.k);
            const Ranking be = retrieve_be(q, index, f.params, cc.k);
            failures += same_order(add0, ce_only) ? 0 : 1;
            failures += same_order(add1, be) ? 0 : 1;
            checks += 2;
        });
    }
    return {9, "fusion endpoints (add:0 == ce, add:1 == be)", failures == 0,
            std::to_string(checks) + " orderings over 50 fixtures, " + std::to_string(failures) + " mismatches"};
}

bool same_bytes(const fs::path& a, const fs::path& b) { return read_file(a) == read_file(b); }

CriterionResult determinism(const SuiteOptions& opt) {
    const fs::path a = opt.out_dir / "determinism_a";
    const fs::path b = opt.out_dir / "determinism_b";
    write_reproducible_artifacts(opt.seed, a, opt.train_steps);
    write_reproducible_artifacts(opt.seed, b, opt.train_steps);
    std::vector<std::string> differing;
    for (const char* name : {"joint.cmrm", "rankings.jsonl", "report.json", "train_log.jsonl"}) {
        if (!same_bytes(a / name, b / name)) differing.emplace_back(name);
    }
    std::string detail = differing.empty() ? "checkpoint, rankings, report and log byte-identical" : "differs:";
    for (const auto& d : differing) detail += " " + d;
    return {10, "determinism (two runs, same seed)", differing.empty(), detail};
}

// Wall-clock limits in seconds; criteria not listed have none.
std::optional<double> budget(int id) {
    switch (id) {
        case 1: return 60.0;
        case 3: return 60.0;
        case 5: return 300.0;
        case 6: return 600.0;
        default: return std::nullopt;
    }
}

void enforce_budget(CriterionResult& r) {
    const auto limit = budget(r.id);
    if (!limit || r.seconds <= *limit) return;
    r.passed = false;
    r.detail += fmt("; over the %.0fs runtime limit", *limit);
}

template <typename Fn>
CriterionResult timed(Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    CriterionResult r;
    try {
        r = fn();
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

}  // namespace

void write_reproducible_artifacts(std::uint64_t seed, const fs::path& dir, std::optional<std::size_t> train_steps) {
    fs::create_directories(dir);
    const CorpusSplit parts = split(generate_planted(train_spec(seed)), 0.9, 0.05, seed);
    ModelConfig mc;
    mc.seed = seed;
    TrainConfig tc;
    tc.mode = TrainMode::Joint;
    tc.seed = seed;
    if (train_steps) tc.steps = *train_steps;
    const TrainResult res = train_joint(parts.train.corpus, parts.dev.corpus, init_params(mc), tc);
    save_checkpoint(res.params, dir / "joint.cmrm");
    {
        std::ofstream log(dir / "train_log.jsonl");
        for (const auto& h : res.history) log << to_json(h).dump() << '\n';
    }
    const ModelParams params = load_checkpoint(dir / "joint.cmrm");
    const Corpus corpus = generate_planted(eval_spec(seed));
    StrategyConfig sc;
    sc.strategy = Strategy::Coop;
    const EvalReport report = evaluate(params, corpus, sc);
    std::ofstream rankings(dir / "rankings.jsonl");
    for (const auto* d : {&*report.image_retrieval, &*report.text_retrieval}) {
        for (const Ranking& r : d->rankings) rankings << to_json(r).dump() << '\n';
    }
    std::ofstream(dir / "report.json") << to_json(report, false).dump(2) << '\n';
    std::ofstream(dir / "timings.json") << to_json(report, true).dump(2) << '\n';
}

std::vector<CriterionResult> run_acceptance(const SuiteOptions& opt) {
    fs::create_directories(opt.out_dir);
    auto wanted = [&](int id) { return opt.only.empty() || opt.only.contains(id); };
    std::vector<CriterionResult> out;
    std::optional<TrainedModel> model;
    auto add = [&](int id, const char* name, auto&& fn) {
        if (!wanted(id)) return;
        CriterionResult r = timed(fn);
        r.id = id;
        if (r.name.empty()) r.name = name;
        enforce_budget(r);
        out.push_back(std::move(r));
    };
    // The trained model of criterion 5 feeds criteria 2 and 6.
    const bool need_model = wanted(2) || wanted(5) || wanted(6);

    add(1, "oracle equivalence (coop k=N == ce)", [&] { return oracle_equivalence(opt.seed); });
    if (need_model) {
        CriterionResult r5 = timed([&] { return training_effectiveness(opt, model); });
        r5.id = 5;
        if (r5.name.empty()) r5.name = "training effectiveness (joint, planted 200)";
        enforce_budget(r5);
        add(2, "candidate-set invariant R@k(coop) == R@k(be)", [&] {
            if (!model) throw ValidationError("no trained model available");
            return candidate_set(*model);
        });
        add(3, "gradient correctness (bce, triplet, joint)", [&] { return gradient_correctness(opt.seed); });
        add(4, "loss ground truths", [] { return loss_ground_truths(); });
        if (wanted(5)) out.push_back(r5);
        add(6, "work/latency scaling", [&] {
            if (!model) throw ValidationError("no trained model available");
            return work_scaling(model->params, opt.seed);
        });
    } else {
        add(3, "gradient correctness (bce, triplet, joint)", [&] { return gradient_correctness(opt.seed); });
        add(4, "loss ground truths", [] { return loss_ground_truths(); });
    }
    add(7, "distractor benchmark (50 targets + 150 distractors)", [&] { return distractor_benchmark(opt.seed); });
    add(8, "mR arithmetic", [] { return mr_arithmetic(); });
    add(9, "fusion endpoints (add:0 == ce, add:1 == be)", [&] { return fusion_endpoints(opt.seed); });
    add(10, "determinism (two runs, same seed)", [&] { return determinism(opt); });
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return out;
}

std::string format_result(const CriterionResult& r) {
    char head[96];
    std::snprintf(head, sizeof head, "[%s] %2d %-50s", r.passed ? "PASS" : "FAIL", r.id, r.name.c_str());
    return std::string(head) + " " + r.detail + fmt(" (%.1fs)", r.seconds);
}

}  // namespace cmrr
