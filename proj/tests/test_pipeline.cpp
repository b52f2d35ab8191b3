#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cmrr/error.hpp"
#include "cmrr/index.hpp"
#include "cmrr/pipeline.hpp"
#include "helpers.hpp"

using namespace cmrr;
using testutil::make_item;

namespace {

std::vector<std::uint32_t> ids_of(const Ranking& r) {
    std::vector<std::uint32_t> out;
    for (const auto& e : r.entries) out.push_back(e.id);
    return out;
}

// Caption query (1,0) against images a, gold, b at cosines 0.9, 0.8, 0.1.
struct RerankFixture {
    Corpus corpus;
    ModelParams params = testutil::identity_model(2);
    static constexpr std::uint32_t kA = 0, kGold = 1, kB = 2, kQuery = 3;

    RerankFixture() {
        corpus.feature_dim = 2;
        corpus.items = {
            make_item(kA, Modality::Image, {{0.9f, static_cast<float>(std::sqrt(1 - 0.81))}}),
            make_item(kGold, Modality::Image, {{0.8f, 0.6f}}),
            make_item(kB, Modality::Image, {{0.1f, static_cast<float>(std::sqrt(1 - 0.01))}}),
            make_item(kQuery, Modality::Caption, {{1.0f, 0.0f}}),
        };
        corpus.gold = {{kGold, kQuery}};
        // The head prefers images with a large second component, so among {a, gold} it picks gold.
        params.ce_image_weight()[1] = 10.0;
    }
};

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("fusion arithmetic") {
    CHECK(fuse_scores(Fusion{FusionKind::Add, 0.5}, std::vector<double>{0.8}, std::vector<double>{0.6})[0] ==
          doctest::Approx(0.7));
    const auto n = fuse_scores(Fusion{FusionKind::NormAdd, 1.0}, std::vector<double>{0.2, 0.5, 0.8},
                               std::vector<double>{0.1, 0.1, 0.1});
    CHECK(n[0] == doctest::Approx(0.0));
    CHECK(n[1] == doctest::Approx(0.5));
    CHECK(n[2] == doctest::Approx(1.0));
    // Constant lists normalize to zero.
    const auto flat = fuse_scores(Fusion{FusionKind::NormAdd, 0.5}, std::vector<double>{0.3, 0.3},
                                  std::vector<double>{0.2, 0.6});
    CHECK(flat[0] == doctest::Approx(0.0));
    CHECK(flat[1] == doctest::Approx(0.5));
    const auto ce = fuse_scores(Fusion{}, std::vector<double>{0.9, 0.1}, std::vector<double>{0.2, 0.7});
    CHECK(ce == std::vector<double>{0.2, 0.7});
}

TEST_CASE("fusion parsing") {
    CHECK(Fusion::parse("ce") == Fusion{});
    CHECK(Fusion::parse("add:0.25") == Fusion{FusionKind::Add, 0.25});
    CHECK(Fusion::parse("normadd:1") == Fusion{FusionKind::NormAdd, 1.0});
    CHECK(Fusion::parse(Fusion{FusionKind::Add, 0.5}.to_string()) == Fusion{FusionKind::Add, 0.5});
    CHECK_THROWS_AS(Fusion::parse("add"), ValidationError);
    CHECK_THROWS_AS(Fusion::parse("add:1.5"), ValidationError);
    CHECK_THROWS_AS(Fusion::parse("mul:0.5"), ValidationError);
    CHECK_THROWS_AS(Fusion::parse("add:x"), ValidationError);
}

TEST_CASE("bi-encoder ranking on the three-item fixture") {
    Corpus c;
    c.feature_dim = 2;
    c.items = {make_item(1, Modality::Image, {{1, 0}}), make_item(2, Modality::Image, {{0.6f, 0.8f}}),
               make_item(3, Modality::Image, {{0, 1}})};
    const ModelParams p = testutil::identity_model(2);
    const EmbeddingIndex idx = build_index(p, c.items);
    const Ranking r = retrieve_be(make_item(9, Modality::Caption, {{0.8f, 0.6f}}), idx, p, 1);
    REQUIRE(r.entries.size() == 1);
    CHECK(r.entries[0].id == 2);
    CHECK(r.entries[0].be_score.has_value());
    CHECK_FALSE(r.entries[0].ce_score.has_value());
    CHECK(r.counters == Counters{1, 0});
    CHECK(r.query_id == 9);
    CHECK(retrieve_be(c.items[2], idx, p, 3).entries[0].id == 3);
}

TEST_CASE("untrained cross-encoder ties every target and falls back to id order") {
    const auto f = testutil::random_fixture(3, 15);
    const ModelParams p = init_params(f.params.config());
    const auto images = f.corpus.ids_of(Modality::Image);
    const Ranking r = retrieve_ce(f.corpus.item(f.corpus.ids_of(Modality::Caption)[0]), f.corpus, images, p, 100);
    CHECK(ids_of(r) == images);
    CHECK(r.counters == Counters{0, images.size()});
    for (const auto& e : r.entries) CHECK(*e.ce_score == 0.5);
}

TEST_CASE("a head that favors gold puts gold first for every query") {
    PlantedSpec s;
    s.n_pairs = 30;
    s.feature_dim = 6;
    s.noise_sigma = 0.0;
    const Corpus c = generate_planted(s);
    ModelParams p = testutil::identity_model(6);
    for (std::size_t i = 0; i < 6; ++i) p.ce_bilinear()[i * 6 + i] = 10.0;
    const auto images = c.ids_of(Modality::Image);
    for (const GoldPair& g : c.gold) {
        CHECK(retrieve_ce(c.item(g.caption_id), c, images, p, 1).entries[0].id == g.image_id);
    }
}

TEST_CASE("reranking lifts gold above the bi-encoder favorite") {
    const RerankFixture fx;
    const auto images = fx.corpus.ids_of(Modality::Image);
    const EmbeddingIndex idx = build_index(fx.params, fx.corpus, images);
    const Item& q = fx.corpus.item(RerankFixture::kQuery);
    const Ranking be = retrieve_be(q, idx, fx.params, 3);
    CHECK(ids_of(be) == std::vector<std::uint32_t>{RerankFixture::kA, RerankFixture::kGold, RerankFixture::kB});
    CHECK(be.entries[0].be_score.value() == doctest::Approx(0.9).epsilon(1e-6));
    CoopConfig cfg;
    cfg.k = 2;
    const Ranking coop = retrieve_coop(q, idx, fx.corpus, fx.params, cfg, 3);
    CHECK(ids_of(coop) == std::vector<std::uint32_t>{RerankFixture::kGold, RerankFixture::kA});
    CHECK(coop.counters == Counters{1, 2});
    // The cross-encoder alone would prefer b, which the candidate set excludes.
    CHECK(retrieve_ce(q, fx.corpus, images, fx.params, 1).entries[0].id == RerankFixture::kB);
}

TEST_CASE("cooperative work is bounded by k regardless of N") {
    const auto f = testutil::random_fixture(1, 10000, 0.5);
    const auto images = f.corpus.ids_of(Modality::Image);
    const EmbeddingIndex idx = build_index(f.params, f.corpus, images);
    CoopConfig cfg;
    const Ranking r = retrieve_coop(f.corpus.item(f.corpus.ids_of(Modality::Caption)[7]), idx, f.corpus, f.params, cfg, 10);
    CHECK(r.counters.cross_score_calls == 20);
    CHECK(r.counters.encode_calls == 1);
    CHECK(r.entries.size() == 10);
}

TEST_CASE("cooperative retrieval keeps the bi-encoder candidate set in both directions") {
    const std::vector<Fusion> fusions{Fusion{}, Fusion{FusionKind::Add, 0.3}, Fusion{FusionKind::NormAdd, 0.7}};
    for (std::uint64_t seed = 1; seed <= 15; ++seed) {
        const auto f = testutil::random_fixture(seed, 40);
        for (Modality qm : {Modality::Image, Modality::Caption}) {
            const Modality tm = qm == Modality::Image ? Modality::Caption : Modality::Image;
            const EmbeddingIndex idx = build_index(f.params, f.corpus, f.corpus.ids_of(tm));
            for (std::uint32_t qid : f.corpus.ids_of(qm)) {
                if (qid % 5 != 0) continue;
                const Item& q = f.corpus.item(qid);
                for (std::size_t k : {1u, 7u, 20u}) {
                    const auto be = ids_of(retrieve_be(q, idx, f.params, k));
                    for (const Fusion& fu : fusions) {
                        CoopConfig cfg{k, fu};
                        const Ranking coop = retrieve_coop(q, idx, f.corpus, f.params, cfg, k);
                        const auto ids = ids_of(coop);
                        CHECK(std::set<std::uint32_t>(ids.begin(), ids.end()) ==
                              std::set<std::uint32_t>(be.begin(), be.end()));
                        CHECK(coop.counters.cross_score_calls <= k);
                    }
                }
            }
        }
    }
}

TEST_CASE("cooperative retrieval over every target equals the cross-encoder") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto f = testutil::random_fixture(seed, 25 + seed * 5);
        for (Modality qm : {Modality::Image, Modality::Caption}) {
            const Modality tm = qm == Modality::Image ? Modality::Caption : Modality::Image;
            const auto targets = f.corpus.ids_of(tm);
            const EmbeddingIndex idx = build_index(f.params, f.corpus, targets);
            const Item& q = f.corpus.item(f.corpus.ids_of(qm)[seed % 5]);
            CoopConfig cfg{targets.size(), Fusion{}};
            const Ranking coop = retrieve_coop(q, idx, f.corpus, f.params, cfg, targets.size());
            const Ranking ce = retrieve_ce(q, f.corpus, targets, f.params, targets.size());
            REQUIRE(coop.entries.size() == ce.entries.size());
            for (std::size_t i = 0; i < ce.entries.size(); ++i) {
                CHECK(coop.entries[i].id == ce.entries[i].id);
                CHECK(coop.entries[i].ce_score == ce.entries[i].ce_score);
            }
        }
    }
}

TEST_CASE("additive fusion endpoints reproduce each encoder's order") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto f = testutil::random_fixture(seed + 100, 30);
        const auto images = f.corpus.ids_of(Modality::Image);
        const EmbeddingIndex idx = build_index(f.params, f.corpus, images);
        const Item& q = f.corpus.item(f.corpus.ids_of(Modality::Caption)[2]);
        const auto ce_only = ids_of(retrieve_coop(q, idx, f.corpus, f.params, CoopConfig{12, Fusion{}}, 12));
        const auto add0 = ids_of(retrieve_coop(q, idx, f.corpus, f.params, CoopConfig{12, Fusion{FusionKind::Add, 0.0}}, 12));
        const auto add1 = ids_of(retrieve_coop(q, idx, f.corpus, f.params, CoopConfig{12, Fusion{FusionKind::Add, 1.0}}, 12));
        CHECK(add0 == ce_only);
        CHECK(add1 == ids_of(retrieve_be(q, idx, f.params, 12)));
    }
}

TEST_CASE("invalid cooperative settings are rejected") {
    const RerankFixture fx;
    const EmbeddingIndex idx = build_index(fx.params, fx.corpus, fx.corpus.ids_of(Modality::Image));
    CHECK_THROWS_AS(retrieve_coop(fx.corpus.item(3), idx, fx.corpus, fx.params, CoopConfig{0, Fusion{}}, 1),
                    ValidationError);
    const CoopConfig bad{3, Fusion{FusionKind::Add, -0.1}};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

}  // TEST_SUITE
