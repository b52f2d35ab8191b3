#include "cmrr/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <fstream>
#include <memory>
#include <sstream>

#include "cmrr/error.hpp"
#include "cmrr/eval.hpp"
#include "cmrr/index.hpp"
#include "cmrr/report.hpp"
#include "cmrr/suite.hpp"

namespace cmrr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::pair<std::string, std::string>>& defaults() {
    static const std::vector<std::pair<std::string, std::string>> table = {
        // corpus generation
        {"pairs", "50"}, {"tokens", "4"}, {"dim", "16"}, {"sigma", "0.1"}, {"captions_per_image", "1"}, {"seed", "1"},
        {"train_frac", "0.8"}, {"dev_frac", "0.1"},
        // model
        {"embed_dim", "32"}, {"layers", "2"}, {"layer_skip", "full"},
        // training
        {"lr", "0.01"}, {"steps", "2000"}, {"batch_pairs", "128"}, {"margin", "0.1"}, {"weight_decay", "0.05"},
        {"checkpoint_every", "100"}, {"mode", "joint"},
        // retrieval and evaluation
        {"strategy", "coop"}, {"k", "20"}, {"fusion", "ce"}, {"topm", "10"}, {"shards", "1"},
        // benchmark
        {"sizes", "1000,10000,50000"}, {"repeats", "5"},
    };
    return table;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ValidationError("config key " + key + ": invalid number \"" + text + "\"");
    return v;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

class Output {
public:
    Output(const std::string& path, std::ostream& fallback) {
        if (!path.empty()) {
            file_ = std::make_unique<std::ofstream>(path, std::ios::trunc);
            if (!*file_) throw IoError("cannot open " + path + " for writing");
        }
        stream_ = file_ ? file_.get() : &fallback;
    }
    std::ostream& operator*() { return *stream_; }

private:
    std::unique_ptr<std::ofstream> file_;
    std::ostream* stream_;
};

Direction parse_direction(const std::string& text) {
    if (text == "image_retrieval" || text == "ir" || text == "image") return Direction::ImageRetrieval;
    if (text == "text_retrieval" || text == "tr" || text == "text") return Direction::TextRetrieval;
    throw ValidationError("unknown direction \"" + text + "\"; expected image_retrieval or text_retrieval");
}

Modality parse_modality(const std::string& text) {
    if (text == "image") return Modality::Image;
    if (text == "caption") return Modality::Caption;
    throw ValidationError("unknown modality \"" + text + "\"; expected image or caption");
}

Modality other(Modality m) { return m == Modality::Image ? Modality::Caption : Modality::Image; }

json config_echo(const RunConfig& cfg, std::initializer_list<const char*> keys) {
    json j;
    for (const char* k : keys) j[k] = cfg.get(k);
    return j;
}

void check_dims(const ModelParams& params, const Corpus& corpus) {
    if (params.config().feature_dim != corpus.feature_dim) {
        throw ValidationError("checkpoint expects feature dimension " + std::to_string(params.config().feature_dim) +
                              ", corpus has " + std::to_string(corpus.feature_dim));
    }
}

// Binds a flag to a config key; applied after parsing only when given.
struct FlagBindings {
    struct Binding {
        CLI::Option* option = nullptr;
        std::string key;
        std::string value;
    };
    std::vector<std::unique_ptr<Binding>> items;

    void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        auto b = std::make_unique<Binding>();
        b->key = key;
        b->option = app->add_option(flag, b->value, help);
        items.push_back(std::move(b));
    }
    void apply(RunConfig& cfg) const {
        for (const auto& b : items) {
            if (b->option->count() > 0) cfg.set(b->key, b->value, "flag " + b->option->get_name());
        }
    }
};

}  // namespace

RunConfig::RunConfig() {
    for (const auto& [k, v] : defaults()) entries_[k] = {v, "default"};
}

void RunConfig::set(const std::string& key, const std::string& value, const std::string& source) {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ValidationError("unknown config key \"" + key + "\"");
    it->second = {value, source};
}

void RunConfig::load_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
        }
        set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)), "file " + path.string());
    }
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ValidationError("unknown config key \"" + key + "\"");
    return it->second.value;
}

bool RunConfig::is_default(const std::string& key) const {
    get(key);
    return entries_.at(key).source == "default";
}

double RunConfig::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }
std::size_t RunConfig::get_size(const std::string& key) const { return parse_number<std::size_t>(key, get(key)); }
std::uint64_t RunConfig::get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }

std::vector<std::size_t> RunConfig::get_size_list(const std::string& key) const {
    std::vector<std::size_t> out;
    std::stringstream ss(get(key));
    for (std::string part; std::getline(ss, part, ',');) out.push_back(parse_number<std::size_t>(key, trim(part)));
    if (out.empty()) throw ValidationError("config key " + key + ": empty list");
    return out;
}

PlantedSpec RunConfig::planted() const {
    PlantedSpec s;
    s.n_pairs = get_size("pairs");
    s.tokens_per_item = get_size("tokens");
    s.feature_dim = get_size("dim");
    s.noise_sigma = get_double("sigma");
    s.captions_per_image = get_size("captions_per_image");
    s.seed = get_u64("seed");
    return s;
}

ModelConfig RunConfig::model(std::uint32_t feature_dim) const {
    ModelConfig c;
    c.feature_dim = feature_dim;
    c.embed_dim = static_cast<std::uint32_t>(get_size("embed_dim"));
    c.trunk_layers = static_cast<std::uint32_t>(get_size("layers"));
    const std::string& skip = get("layer_skip");
    if (skip == "full") {
        c.layer_skip = LayerSkip::Full;
    } else if (skip == "skip_odd") {
        c.layer_skip = LayerSkip::SkipOdd;
    } else {
        throw ValidationError("layer_skip must be full or skip_odd");
    }
    c.seed = get_u64("seed");
    c.validate();
    return c;
}

TrainConfig RunConfig::train() const {
    TrainConfig t;
    t.learning_rate = get_double("lr");
    t.steps = get_size("steps");
    t.batch_pairs = get_size("batch_pairs");
    t.margin_alpha = get_double("margin");
    t.weight_decay = get_double("weight_decay");
    t.checkpoint_every = get_size("checkpoint_every");
    t.seed = get_u64("seed");
    t.mode = parse_train_mode(get("mode"));
    t.validate();
    return t;
}

CoopConfig RunConfig::coop() const {
    CoopConfig c;
    c.k = get_size("k");
    c.fusion = Fusion::parse(get("fusion"));
    c.validate();
    return c;
}

std::string RunConfig::dump(bool with_sources) const {
    std::string out;
    for (const auto& [k, e] : entries_) {
        out += k + "=" + e.value;
        if (with_sources) out += "  # " + e.source;
        out += '\n';
    }
    return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"cmrr: cross-modal retrieve-and-rerank toolkit"};
    app.name(args.empty() ? "cmrr" : args[0]);
    app.require_subcommand(1);
    FlagBindings flags;
    std::string config_path, out_path, corpus_path, checkpoint_path, index_path, train_path, dev_path, init_path;
    std::string reproduce_dir = "reproduce_out", distractors_path, direction_text = "image_retrieval", modality_text = "image", only_text;
    std::vector<std::uint32_t> query_ids;
    std::size_t probes = 1;
    bool corrupt = false;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value config file (flags override it)");
        flags.add(sub, "--seed", "seed", "random seed");
    };
    auto model_flags = [&](CLI::App* sub) {
        flags.add(sub, "--embed-dim", "embed_dim", "embedding dimension E");
        flags.add(sub, "--layers", "layers", "trunk layers L");
        flags.add(sub, "--layer-skip", "layer_skip", "full | skip_odd");
    };
    auto retrieval_flags = [&](CLI::App* sub, const std::string& mode_flag) {
        flags.add(sub, mode_flag, "strategy", "be | ce | coop");
        flags.add(sub, "--k", "k", "cooperative candidate count");
        flags.add(sub, "--fusion", "fusion", "ce | add:<lambda> | normadd:<lambda>");
        flags.add(sub, "--topm", "topm", "ranking depth per query");
    };

    auto* gen = app.add_subcommand("gen", "generate a planted-alignment corpus");
    common(gen);
    flags.add(gen, "--pairs", "pairs", "number of images");
    flags.add(gen, "--tokens", "tokens", "tokens per item");
    flags.add(gen, "--dim", "dim", "feature dimension");
    flags.add(gen, "--sigma", "sigma", "noise standard deviation");
    flags.add(gen, "--captions-per-image", "captions_per_image", "gold captions per image");
    gen->add_option("-o,--out", out_path, "output corpus file")->required();

    auto* split_cmd = app.add_subcommand("split", "image-level train/dev/test split");
    common(split_cmd);
    split_cmd->add_option("-i,--corpus", corpus_path, "input corpus")->required();
    flags.add(split_cmd, "--train-frac", "train_frac", "training fraction");
    flags.add(split_cmd, "--dev-frac", "dev_frac", "development fraction");
    split_cmd->add_option("-o,--out", out_path, "output prefix; writes <prefix>.{train,dev,test}.cmrr")->required();

    auto* init = app.add_subcommand("init", "write an untrained checkpoint");
    common(init);
    model_flags(init);
    flags.add(init, "--dim", "dim", "feature dimension");
    init->add_option("-o,--out", out_path, "output checkpoint")->required();

    auto* train_cmd = app.add_subcommand("train", "train a bi-encoder, cross-encoder or joint model");
    common(train_cmd);
    model_flags(train_cmd);
    train_cmd->add_option("--train", train_path, "training corpus")->required();
    train_cmd->add_option("--dev", dev_path, "development corpus")->required();
    train_cmd->add_option("--init", init_path, "start from this checkpoint instead of a fresh init");
    train_cmd->add_option("-o,--out", out_path, "run directory")->required();
    flags.add(train_cmd, "--mode", "mode", "be | ce | joint");
    flags.add(train_cmd, "--lr", "lr", "peak learning rate");
    flags.add(train_cmd, "--steps", "steps", "update steps");
    flags.add(train_cmd, "--batch-pairs", "batch_pairs", "positive pairs per batch");
    flags.add(train_cmd, "--margin", "margin", "triplet margin alpha");
    flags.add(train_cmd, "--weight-decay", "weight_decay", "decoupled weight decay");
    flags.add(train_cmd, "--checkpoint-every", "checkpoint_every", "steps between checkpoints");

    auto* index_cmd = app.add_subcommand("index", "build or query an embedding index");
    index_cmd->require_subcommand(1);
    auto* index_build = index_cmd->add_subcommand("build", "encode and store one modality of a corpus");
    common(index_build);
    index_build->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    index_build->add_option("-i,--corpus", corpus_path, "corpus")->required();
    index_build->add_option("--modality", modality_text, "image | caption");
    index_build->add_option("-o,--out", out_path, "output index file")->required();
    auto* index_query = index_cmd->add_subcommand("query", "exact top-k search for corpus items");
    common(index_query);
    index_query->add_option("--index", index_path, "index file")->required();
    index_query->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    index_query->add_option("-i,--corpus", corpus_path, "corpus holding the query items")->required();
    index_query->add_option("--query", query_ids, "query item ids")->required();
    flags.add(index_query, "--k", "k", "results per query");
    flags.add(index_query, "--shards", "shards", "parallel scan shards");
    index_query->add_option("-o,--out", out_path, "output JSON-lines file (default stdout)");

    auto* retrieve = app.add_subcommand("retrieve", "rank targets for queries, one JSON line per query");
    common(retrieve);
    retrieval_flags(retrieve, "--mode");
    retrieve->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    retrieve->add_option("-i,--corpus", corpus_path, "corpus")->required();
    retrieve->add_option("--index", index_path, "pre-built index of the target modality");
    retrieve->add_option("--direction", direction_text, "image_retrieval | text_retrieval");
    retrieve->add_option("--query", query_ids, "query item ids (default: every query of the direction)");
    retrieve->add_option("-o,--out", out_path, "output JSON-lines file (default stdout)");

    auto* eval_cmd = app.add_subcommand("eval", "Recall@{1,5,10} and mR report");
    common(eval_cmd);
    retrieval_flags(eval_cmd, "--strategy");
    eval_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    eval_cmd->add_option("-i,--corpus", corpus_path, "evaluation corpus")->required();
    eval_cmd->add_option("--distractors", distractors_path, "corpus whose items are added as distractor targets");
    eval_cmd->add_option("-o,--out", out_path, "output JSON report (default stdout)");

    auto* bench = app.add_subcommand("bench", "single-query latency and work counters per strategy");
    common(bench);
    model_flags(bench);
    flags.add(bench, "--dim", "dim", "feature dimension (without --checkpoint)");
    flags.add(bench, "--tokens", "tokens", "tokens per item");
    bench->add_option("--checkpoint", checkpoint_path, "model checkpoint (default: fresh init)");
    flags.add(bench, "--sizes", "sizes", "comma-separated collection sizes, ascending");
    flags.add(bench, "--repeats", "repeats", "queries timed per cell");
    flags.add(bench, "--k", "k", "cooperative candidate count");
    bench->add_option("-o,--out", out_path, "output JSON (default stdout)");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the training gradients");
    common(gradcheck);
    model_flags(gradcheck);
    flags.add(gradcheck, "--dim", "dim", "feature dimension");
    gradcheck->add_option("--probes", probes, "random probes");

    auto* reproduce = app.add_subcommand("reproduce", "run the desk-scale acceptance pipeline");
    common(reproduce);
    reproduce->add_option("-o,--out", reproduce_dir, "artifact directory");
    reproduce->add_option("--only", only_text, "comma-separated criterion ids");
    flags.add(reproduce, "--steps", "steps", "training steps per run");
    reproduce->add_flag("--corrupt-checkpoint", corrupt, "damage the saved checkpoint before reloading it");

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    if (args.empty()) argv.push_back("cmrr");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        err << app.help();
        return 1;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg.load_file(config_path);
        flags.apply(cfg);
        err << "resolved config (defaults < file < flags):\n" << cfg.dump(true);

        if (gen->parsed()) {
            const Corpus c = generate_planted(cfg.planted());
            save_corpus(c, out_path);
            out << json{{"items", c.items.size()}, {"gold", c.gold.size()}, {"fingerprint", hex64(fingerprint(c))}}.dump()
                << '\n';
        } else if (split_cmd->parsed()) {
            const CorpusSplit parts = split(load_corpus(corpus_path), cfg.get_double("train_frac"),
                                            cfg.get_double("dev_frac"), cfg.get_u64("seed"));
            json summary;
            for (const auto& [name, part] : {std::pair{"train", &parts.train}, std::pair{"dev", &parts.dev},
                                             std::pair{"test", &parts.test}}) {
                save_corpus(part->corpus, out_path + "." + name + ".cmrr");
                summary[name] = part->corpus.ids_of(Modality::Image).size();
            }
            out << summary.dump() << '\n';
        } else if (init->parsed()) {
            const ModelParams p = init_params(cfg.model(static_cast<std::uint32_t>(cfg.get_size("dim"))));
            save_checkpoint(p, out_path);
            out << json{{"parameters", p.size()}}.dump() << '\n';
        } else if (train_cmd->parsed()) {
            const Corpus train_corpus = load_corpus(train_path);
            const Corpus dev = load_corpus(dev_path);
            const TrainConfig tc = cfg.train();
            const ModelParams initial =
                init_path.empty() ? init_params(cfg.model(train_corpus.feature_dim)) : load_checkpoint(init_path);
            const fs::path dir = out_path;
            fs::create_directories(dir);
            std::ofstream(dir / "config.txt") << cfg.dump(false);
            const TrainResult res = train(train_corpus, dev, initial, tc, [&](std::size_t step, const ModelParams& p, double) {
                save_checkpoint(p, dir / ("ckpt_" + std::to_string(step) + ".cmrm"));
            });
            save_checkpoint(res.params, dir / "best.cmrm");
            std::ofstream log(dir / "train_log.jsonl");
            for (const auto& h : res.history) log << to_json(h).dump() << '\n';
            if (!log) throw IoError("cannot write training log");
            out << json{{"best_step", res.best_step}, {"best_dev_mR", res.best_dev_mr},
                        {"checkpoint", (dir / "best.cmrm").string()}}.dump()
                << '\n';
        } else if (index_build->parsed()) {
            const ModelParams p = load_checkpoint(checkpoint_path);
            const Corpus c = load_corpus(corpus_path);
            check_dims(p, c);
            const EmbeddingIndex index = build_index(p, c, c.ids_of(parse_modality(modality_text)));
            save_index(index, out_path);
            out << json{{"n", index.size()}, {"dim", index.dim()}, {"memory_bytes", index.memory_bytes()}}.dump() << '\n';
        } else if (index_query->parsed()) {
            const EmbeddingIndex index = load_index(index_path);
            const ModelParams p = load_checkpoint(checkpoint_path);
            const Corpus c = load_corpus(corpus_path);
            check_dims(p, c);
            std::vector<std::vector<double>> queries;
            for (std::uint32_t q : query_ids) queries.push_back(encode(p, c.item(q)));
            const auto results = topk_batch(index, queries, cfg.get_size("k"), cfg.get_size("shards"));
            Output o(out_path, out);
            for (std::size_t i = 0; i < results.size(); ++i) {
                json hits = json::array();
                for (const ScoredId& s : results[i]) hits.push_back({{"id", s.id}, {"score", s.score}});
                *o << json{{"query_id", query_ids[i]}, {"results", hits}}.dump() << '\n';
            }
        } else if (retrieve->parsed()) {
            const ModelParams p = load_checkpoint(checkpoint_path);
            const Corpus c = load_corpus(corpus_path);
            check_dims(p, c);
            const Strategy strategy = parse_strategy(cfg.get("strategy"));
            const CoopConfig coop = cfg.coop();
            const std::size_t top_m = cfg.get_size("topm");
            Modality qm = parse_direction(direction_text) == Direction::ImageRetrieval ? Modality::Caption : Modality::Image;
            if (!query_ids.empty()) qm = c.item(query_ids.front()).modality;
            if (query_ids.empty()) query_ids = c.ids_of(qm);
            const auto targets = c.ids_of(other(qm));
            EmbeddingIndex index;
            if (strategy != Strategy::CE) {
                index = index_path.empty() ? build_index(p, c, targets) : load_index(index_path);
            }
            Output o(out_path, out);
            for (std::uint32_t q : query_ids) {
                const Item& query = c.item(q);
                if (query.modality != qm) throw ValidationError("all queries must share one modality");
                Ranking r;
                switch (strategy) {
                    case Strategy::BE: r = retrieve_be(query, index, p, top_m); break;
                    case Strategy::CE: r = retrieve_ce(query, c, targets, p, top_m); break;
                    case Strategy::Coop: r = retrieve_coop(query, index, c, p, coop, top_m); break;
                }
                json line = to_json(r);
                line["mode"] = to_string(strategy);
                *o << line.dump() << '\n';
            }
        } else if (eval_cmd->parsed()) {
            const ModelParams p = load_checkpoint(checkpoint_path);
            const Corpus base = load_corpus(corpus_path);
            check_dims(p, base);
            StrategyConfig sc;
            sc.strategy = parse_strategy(cfg.get("strategy"));
            sc.coop = cfg.coop();
            sc.top_m = std::max<std::size_t>(10, cfg.get_size("topm"));
            EvalTask ir = make_task(base, Direction::ImageRetrieval);
            EvalTask tr = make_task(base, Direction::TextRetrieval);
            Corpus corpus = base;
            json fingerprints = {{"corpus", hex64(fingerprint(base))}};
            if (!distractors_path.empty()) {
                const Corpus extra = load_corpus(distractors_path);
                corpus = concat(base, extra);
                std::vector<std::uint32_t> images, captions;
                for (const Item& it : extra.items) {
                    const std::uint32_t id = it.id + static_cast<std::uint32_t>(base.items.size());
                    (it.modality == Modality::Image ? images : captions).push_back(id);
                }
                ir = augment_with_distractors(ir, images);
                tr = augment_with_distractors(tr, captions);
                fingerprints["distractors"] = hex64(fingerprint(extra));
            }
            const EvalReport report = evaluate(p, corpus, ir, tr, sc);
            json j = to_json(report, true);
            j["config"] = config_echo(cfg, {"strategy", "k", "fusion", "topm", "seed"});
            j["fingerprints"] = fingerprints;
            j["notes"] = "latency includes query encoding for every strategy";
            Output o(out_path, out);
            *o << j.dump(2) << '\n';
        } else if (bench->parsed()) {
            const ModelParams p = checkpoint_path.empty()
                                      ? init_params(cfg.model(static_cast<std::uint32_t>(cfg.get_size("dim"))))
                                      : load_checkpoint(checkpoint_path);
            BenchConfig bc;
            bc.corpus_sizes = cfg.get_size_list("sizes");
            bc.repeats = cfg.get_size("repeats");
            bc.k = cfg.get_size("k");
            bc.tokens_per_item = cfg.get_size("tokens");
            bc.seed = cfg.get_u64("seed");
            const auto rows = bench_latency(p, bc);
            json j = {{"rows", to_json(rows)}, {"config", config_echo(cfg, {"sizes", "repeats", "k", "tokens", "seed"})}};
            if (bc.corpus_sizes.size() >= 2) {
                j["slope_ratio_ce_over_coop"] = latency_slope(rows, Strategy::CE) / latency_slope(rows, Strategy::Coop);
            }
            Output o(out_path, out);
            *o << j.dump(2) << '\n';
        } else if (gradcheck->parsed()) {
            const ModelConfig mc = cfg.model(static_cast<std::uint32_t>(cfg.get_size("dim")));
            double worst = 0.0;
            for (std::size_t i = 0; i < probes; ++i) {
                const GradCheckReport r = grad_check_probe(mc, cfg.get_u64("seed") + i, 200);
                out << json{{"probe", i}, {"bce", r.bce}, {"triplet", r.triplet}, {"joint", r.joint}}.dump() << '\n';
                worst = std::max(worst, r.max());
            }
            out << "max_rel_error " << worst << '\n';
            return worst <= 1e-4 ? 0 : 1;
        } else if (reproduce->parsed()) {
            SuiteOptions opt;
            opt.seed = cfg.get_u64("seed");
            opt.out_dir = reproduce_dir;
            opt.corrupt_checkpoint = corrupt;
            if (!cfg.is_default("steps")) opt.train_steps = cfg.get_size("steps");
            std::stringstream ss(only_text);
            for (std::string part; std::getline(ss, part, ',');) opt.only.insert(parse_number<int>("only", trim(part)));
            const auto results = run_acceptance(opt);
            std::vector<int> failed;
            for (const auto& r : results) {
                out << format_result(r) << '\n';
                if (!r.passed) failed.push_back(r.id);
            }
            if (!failed.empty()) {
                out << "FAILED criteria:";
                for (int id : failed) out << ' ' << id;
                out << '\n';
                return 1;
            }
            out << "all " << results.size() << " criteria passed\n";
        }
        return 0;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace cmrr
