#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cmrr/cli.hpp"
#include "cmrr/error.hpp"
#include "helpers.hpp"

using namespace cmrr;
using nlohmann::json;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "cmrr");
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<json> json_lines(const std::string& text) {
    std::vector<json> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) out.push_back(json::parse(line));
    return out;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit 1 and help exits 0") {
    CHECK(cli({"frobnicate"}).code == 1);
    CHECK(cli({}).code == 1);
    const Run help = cli({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("retrieve") != std::string::npos);
    CHECK(cli({"gen"}).code == 1);  // missing -o
}

TEST_CASE("config file values sit between defaults and flags") {
    testutil::TempDir dir("cli_cfg");
    std::ofstream(dir / "run.cfg") << "# planted corpus\npairs = 7\nsigma=0.2\n";
    const Run a = cli({"gen", "--config", (dir / "run.cfg").string(), "-o", (dir / "a.cmrr").string()});
    REQUIRE(a.code == 0);
    CHECK(json::parse(a.out)["gold"] == 7);
    CHECK(a.err.find("pairs=7") != std::string::npos);
    CHECK(a.err.find("sigma=0.2") != std::string::npos);
    const Run b = cli({"gen", "--config", (dir / "run.cfg").string(), "--pairs", "9", "-o", (dir / "b.cmrr").string()});
    REQUIRE(b.code == 0);
    CHECK(json::parse(b.out)["gold"] == 9);
    CHECK(b.err.find("pairs=9  # flag") != std::string::npos);

    std::ofstream(dir / "bad.cfg") << "pairz=3\n";
    const Run bad = cli({"gen", "--config", (dir / "bad.cfg").string(), "-o", (dir / "c.cmrr").string()});
    CHECK(bad.code == 1);
    CHECK(bad.err.find("unknown config key \"pairz\"") != std::string::npos);
    CHECK(cli({"gen", "--config", (dir / "missing.cfg").string(), "-o", (dir / "c.cmrr").string()}).code == 2);
    CHECK(cli({"gen", "--pairs", "0", "-o", (dir / "c.cmrr").string()}).code == 1);
    CHECK(cli({"gen", "--pairs", "ten", "-o", (dir / "c.cmrr").string()}).code == 1);
}

TEST_CASE("RunConfig rejects unknown keys") {
    RunConfig c;
    CHECK_THROWS_AS(c.set("nope", "1", "test"), ValidationError);
    c.set("fusion", "add:0.5", "test");
    CHECK(c.coop().fusion.lambda == 0.5);
    CHECK(c.get_size_list("sizes") == std::vector<std::size_t>{1000, 10000, 50000});
}

TEST_CASE("missing inputs exit 2") {
    testutil::TempDir dir("cli_io");
    CHECK(cli({"split", "-i", (dir / "none.cmrr").string(), "-o", (dir / "s").string()}).code == 2);
    std::ofstream(dir / "junk.cmrr") << "not a corpus";
    CHECK(cli({"split", "-i", (dir / "junk.cmrr").string(), "-o", (dir / "s").string()}).code == 2);
}

TEST_CASE("generate then evaluate an untrained checkpoint") {
    testutil::TempDir dir("cli_eval");
    const std::string corpus = (dir / "c.cmrr").string();
    const std::string ckpt = (dir / "m.cmrm").string();
    REQUIRE(cli({"gen", "--pairs", "50", "--dim", "16", "--tokens", "4", "--sigma", "0.1", "--seed", "1", "-o", corpus}).code ==
            0);
    REQUIRE(cli({"init", "--dim", "16", "--seed", "1", "-o", ckpt}).code == 0);
    const Run ev = cli({"eval", "--checkpoint", ckpt, "-i", corpus, "--strategy", "be"});
    REQUIRE(ev.code == 0);
    const json j = json::parse(ev.out);
    const double r1 = (j["image_retrieval"]["r1"].get<double>() + j["text_retrieval"]["r1"].get<double>()) / 2.0;
    CHECK(r1 <= 0.2);
    CHECK(j.contains("fingerprints"));
    CHECK(j["config"]["strategy"] == "be");
    CHECK(j["image_retrieval"].contains("seconds"));
}

TEST_CASE("cooperative retrieve reports k cross-score calls per query") {
    testutil::TempDir dir("cli_retrieve");
    const std::string corpus = (dir / "c.cmrr").string();
    const std::string ckpt = (dir / "m.cmrm").string();
    REQUIRE(cli({"gen", "--pairs", "50", "-o", corpus}).code == 0);
    REQUIRE(cli({"init", "-o", ckpt}).code == 0);
    const Run r = cli({"retrieve", "--checkpoint", ckpt, "-i", corpus, "--mode", "coop", "--k", "20"});
    REQUIRE(r.code == 0);
    const auto lines = json_lines(r.out);
    CHECK(lines.size() == 50);
    for (const json& l : lines) {
        CHECK(l["counters"]["cross_score_calls"] == 20);
        CHECK(l["entries"].size() == 10);
    }
    const Run one = cli({"retrieve", "--checkpoint", ckpt, "-i", corpus, "--mode", "ce", "--query", "3", "--topm", "5"});
    REQUIRE(one.code == 0);
    const auto ce = json_lines(one.out);
    REQUIRE(ce.size() == 1);
    CHECK(ce[0]["counters"]["cross_score_calls"] == 50);
    CHECK(cli({"retrieve", "--checkpoint", ckpt, "-i", corpus, "--fusion", "mix"}).code == 1);
}

TEST_CASE("index build and query agree with retrieve") {
    testutil::TempDir dir("cli_index");
    const std::string corpus = (dir / "c.cmrr").string();
    const std::string ckpt = (dir / "m.cmrm").string();
    const std::string index = (dir / "i.cmri").string();
    REQUIRE(cli({"gen", "--pairs", "30", "-o", corpus}).code == 0);
    REQUIRE(cli({"init", "-o", ckpt}).code == 0);
    REQUIRE(cli({"index", "build", "--checkpoint", ckpt, "-i", corpus, "--modality", "image", "-o", index}).code == 0);
    const Run q = cli({"index", "query", "--index", index, "--checkpoint", ckpt, "-i", corpus, "--query", "40", "--k", "5",
                       "--shards", "3"});
    REQUIRE(q.code == 0);
    const Run r = cli({"retrieve", "--checkpoint", ckpt, "-i", corpus, "--index", index, "--mode", "be", "--query", "40",
                       "--topm", "5"});
    REQUIRE(r.code == 0);
    const json hits = json_lines(q.out)[0]["results"];
    const json entries = json_lines(r.out)[0]["entries"];
    REQUIRE(hits.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(hits[i]["id"] == entries[i]["id"]);
}

TEST_CASE("split and train produce identical artifacts for identical invocations") {
    testutil::TempDir dir("cli_train");
    const std::string corpus = (dir / "c.cmrr").string();
    REQUIRE(cli({"gen", "--pairs", "40", "-o", corpus}).code == 0);
    const Run sp = cli({"split", "-i", corpus, "-o", (dir / "s").string()});
    REQUIRE(sp.code == 0);
    CHECK(json::parse(sp.out)["train"] == 32);
    for (const std::string run : {"r1", "r2"}) {
        REQUIRE(cli({"train", "--train", (dir / "s.train.cmrr").string(), "--dev", (dir / "s.dev.cmrr").string(), "--steps",
                     "30", "--batch-pairs", "8", "--checkpoint-every", "10", "-o", (dir / run).string()})
                    .code == 0);
    }
    CHECK(slurp(dir / "r1/best.cmrm") == slurp(dir / "r2/best.cmrm"));
    CHECK(slurp(dir / "r1/train_log.jsonl") == slurp(dir / "r2/train_log.jsonl"));
    CHECK(std::filesystem::exists(dir / "r1/ckpt_30.cmrm"));
    CHECK(json_lines(slurp(dir / "r1/train_log.jsonl")).size() == 30);
    CHECK(slurp(dir / "r1/config.txt").find("steps=30") != std::string::npos);
}

TEST_CASE("gradcheck exits 0 when gradients agree") {
    const Run g = cli({"gradcheck", "--seed", "3"});
    CHECK(g.code == 0);
    CHECK(g.out.find("max_rel_error") != std::string::npos);
}

TEST_CASE("bench emits counters per strategy") {
    const Run b = cli({"bench", "--sizes", "100,300", "--repeats", "1"});
    REQUIRE(b.code == 0);
    const json j = json::parse(b.out);
    CHECK(j["rows"].size() == 6);
    CHECK(j.contains("slope_ratio_ce_over_coop"));
    CHECK(cli({"bench", "--sizes", "300,100"}).code == 1);
}

}  // TEST_SUITE
