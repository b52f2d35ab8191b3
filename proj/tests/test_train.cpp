#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cmrr/error.hpp"
#include "cmrr/eval.hpp"
#include "cmrr/train.hpp"
#include "helpers.hpp"

using namespace cmrr;

namespace {

std::vector<double> v2(double a, double b) { return {a, b}; }

struct SmallData {
    Corpus train;
    Corpus dev;
};

SmallData small_data() {
    PlantedSpec s;
    s.n_pairs = 50;
    s.noise_sigma = 0.1;
    s.seed = 1;
    SmallData d;
    d.train = generate_planted(s);
    s.n_pairs = 20;
    s.seed = 2;
    d.dev = generate_planted(s);
    return d;
}

TrainConfig small_config(TrainMode mode, std::size_t steps) {
    TrainConfig c;
    c.mode = mode;
    c.steps = steps;
    c.batch_pairs = 16;
    c.checkpoint_every = 50;
    return c;
}

double dev_mr(const ModelParams& p, const Corpus& dev, Strategy s) {
    StrategyConfig sc;
    sc.strategy = s;
    return mean_recall(evaluate(p, dev, sc));
}

double mean_gold_prob(const ModelParams& p, const Corpus& c, bool gold) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::uint32_t i : c.ids_of(Modality::Image)) {
        for (std::uint32_t cap : c.ids_of(Modality::Caption)) {
            if (c.is_gold(i, cap) != gold) continue;
            sum += cross_score(p, c.item(i), c.item(cap));
            ++n;
        }
    }
    return sum / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("triplet loss hand values") {
    // cos(i,c)=1, cos(i,c')=0, cos(i',c)=0
    CHECK(triplet_loss(v2(1, 0), v2(1, 0), v2(0, 1), v2(0, 1), 0.1).value == doctest::Approx(0.0));
    // all cosines equal
    CHECK(triplet_loss(v2(1, 0), v2(1, 0), v2(1, 0), v2(1, 0), 0.1).value == doctest::Approx(0.2));
    const auto ci = v2(1, 0), cc = v2(1, 0), cneg = v2(0.6, 0.8), ineg = v2(0, 1);
    CHECK(triplet_loss(ci, cc, ineg, cneg, 0.1).value == doctest::Approx(0.0));
    CHECK(triplet_loss(ci, cc, ineg, cneg, 0.5).value == doctest::Approx(0.1));
}

TEST_CASE("triplet loss is non-negative and scale invariant") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    auto rnd = [&] {
        std::vector<double> v(6);
        for (double& x : v) x = g(rng);
        return v;
    };
    for (int trial = 0; trial < 200; ++trial) {
        auto i = rnd(), c = rnd(), in = rnd(), cn = rnd();
        const double a = triplet_loss(i, c, in, cn, 0.2).value;
        CHECK(a >= 0.0);
        for (double& x : cn) x *= 3.0;
        for (double& x : i) x *= 3.0;
        CHECK(triplet_loss(i, c, in, cn, 0.2).value == doctest::Approx(a).epsilon(1e-12));
    }
    CHECK_THROWS_AS(triplet_loss(v2(0, 0), v2(1, 0), v2(1, 0), v2(1, 0), 0.1), ValidationError);
}

TEST_CASE("binary cross-entropy hand values") {
    CHECK(bce_loss(0.0, 1).value == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
    CHECK(bce_loss(std::log(9.0), 0).value == doctest::Approx(-std::log(0.1)).epsilon(1e-12));
    CHECK(bce_loss(0.0, 1).d_logit == doctest::Approx(-0.5));
    CHECK(std::isfinite(bce_loss(800.0, 0).value));
    CHECK(bce_loss(800.0, 0).value == doctest::Approx(800.0));
    CHECK(bce_loss(-800.0, 0).value == doctest::Approx(0.0));
}

TEST_CASE("hardest in-batch negative selection") {
    // Two pairs: the other pair's caption is the only candidate.
    CHECK(bhn_select({v2(1, 0), v2(0, 1)}, {v2(1, 0), v2(0, 1)}, {{true, false}, {false, true}}) ==
          std::vector<std::size_t>{1, 0});
    // cosines 0.9 vs 0 with the gold candidate masked out
    CHECK(bhn_select({v2(1, 0)}, {v2(1, 0), v2(0.9, 0.436), v2(0, 1)}, {{true, false, false}})[0] == 1);
    // equal cosines resolve to the smaller index
    CHECK(bhn_select({v2(1, 0)}, {v2(1, 0), v2(0.5, 0.5), v2(0.5, -0.5), v2(0.5, 0.5)}, {{true, false, false, false}})[0] ==
          1);
    CHECK_THROWS_AS(bhn_select({v2(1, 0)}, {v2(1, 0)}, {{true}}), ValidationError);
}

TEST_CASE("AdamW hand values") {
    std::vector<double> theta{1.0};
    OptimizerState st(1);
    adamw_step(theta, std::vector<double>{0.5}, st, 0.1, 0.0);
    CHECK(theta[0] == doctest::Approx(0.9).epsilon(1e-7));
    CHECK(st.t == 1);

    theta = {1.0};
    st = OptimizerState(1);
    adamw_step(theta, std::vector<double>{0.0}, st, 0.1, 0.0);
    CHECK(theta[0] == 1.0);

    theta = {1.0};
    st = OptimizerState(1);
    adamw_step(theta, std::vector<double>{0.0}, st, 0.1, 0.05);
    CHECK(theta[0] == doctest::Approx(0.995).epsilon(1e-12));

    CHECK_THROWS_AS(adamw_step(theta, std::vector<double>{0.0, 1.0}, st, 0.1, 0.0), ValidationError);
    CHECK(linear_decay_lr(0.01, 0, 100) == 0.01);
    CHECK(linear_decay_lr(0.01, 50, 100) == doctest::Approx(0.005));
}

TEST_CASE("analytic gradients match finite differences") {
    ModelConfig c;
    c.feature_dim = 6;
    c.embed_dim = 8;
    c.trunk_layers = 2;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const GradCheckReport r = grad_check_probe(c, seed);
        CHECK(r.bce <= 1e-4);
        CHECK(r.triplet <= 1e-4);
        CHECK(r.joint <= 1e-4);
    }
    c.layer_skip = LayerSkip::SkipOdd;
    c.trunk_layers = 3;
    CHECK(grad_check_probe(c, 9).max() <= 1e-4);
}

TEST_CASE("untrained cross-encoder has BCE of ln 2 on any batch") {
    const SmallData d = small_data();
    const ModelParams p = init_params(ModelConfig{});
    std::vector<LabeledPair> batch;
    for (std::uint32_t i = 0; i < 10; ++i) {
        batch.push_back({d.train.gold[i].image_id, d.train.gold[i].caption_id, 1});
        batch.push_back({d.train.gold[i].image_id, d.train.gold[(i + 3) % 50].caption_id, 0});
    }
    CHECK(ce_batch_loss(p, d.train, batch, nullptr) == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
}

TEST_CASE("mined triplets never use gold as a negative") {
    const SmallData d = small_data();
    const ModelParams p = init_params(ModelConfig{});
    const std::vector<GoldPair> pos(d.train.gold.begin(), d.train.gold.begin() + 12);
    for (const Triplet& t : mine_triplets(p, d.train, pos)) {
        CHECK_FALSE(d.train.is_gold(t.image_id, t.negative_caption_id));
        CHECK_FALSE(d.train.is_gold(t.negative_image_id, t.caption_id));
    }
}

TEST_CASE("bi-encoder training beats the untrained model") {
    const SmallData d = small_data();
    const ModelParams init = init_params(ModelConfig{});
    const TrainResult r = train_be(d.train, d.dev, init, small_config(TrainMode::BE, 500));
    CHECK(dev_mr(r.params, d.dev, Strategy::BE) > dev_mr(init, d.dev, Strategy::BE));
    CHECK(r.history.size() == 500);
    CHECK(r.best_dev_mr == doctest::Approx(dev_mr(r.params, d.dev, Strategy::BE)));
    std::size_t recorded = 0;
    for (const auto& h : r.history) recorded += h.dev_mr.has_value();
    CHECK(recorded == 10);
}

TEST_CASE("zero learning rate leaves parameters and loss unchanged") {
    const SmallData d = small_data();
    const ModelParams init = init_params(ModelConfig{});
    TrainConfig c = small_config(TrainMode::BE, 6);
    c.learning_rate = 0.0;
    c.batch_pairs = 50;  // every image each step, so the mean loss cannot move
    c.checkpoint_every = 3;
    const TrainResult r = train_be(d.train, d.dev, init, c);
    CHECK(testutil::values_of(r.params) == testutil::values_of(round_to_storage(init)));
    for (const auto& h : r.history) CHECK(h.loss == doctest::Approx(r.history[0].loss).epsilon(1e-12));

    c.mode = TrainMode::Joint;
    const TrainResult j = train_joint(d.train, d.dev, init, c);
    CHECK(testutil::values_of(j.params) == testutil::values_of(round_to_storage(init)));
}

TEST_CASE("training is deterministic in the seed") {
    const SmallData d = small_data();
    const ModelParams init = init_params(ModelConfig{});
    for (TrainMode m : {TrainMode::BE, TrainMode::CE, TrainMode::Joint}) {
        const TrainConfig c = small_config(m, 40);
        const TrainResult a = train(d.train, d.dev, init, c);
        const TrainResult b = train(d.train, d.dev, init, c);
        CHECK(testutil::values_of(a.params) == testutil::values_of(b.params));
        CHECK(a.best_step == b.best_step);
    }
}

TEST_CASE("cross-encoder training separates gold from mismatched pairs") {
    const SmallData d = small_data();
    const ModelParams init = init_params(ModelConfig{});
    const TrainResult r = train_ce(d.train, d.dev, init, small_config(TrainMode::CE, 300));
    CHECK(mean_gold_prob(r.params, d.train, true) > mean_gold_prob(r.params, d.train, false));
}

TEST_CASE("a cross-encoder step moves the shared trunk") {
    const SmallData d = small_data();
    ModelConfig mc;
    TrainConfig c = small_config(TrainMode::Joint, 1);
    c.weight_decay = 0.0;
    c.checkpoint_every = 1;
    const Item& probe = d.train.items[3];

    ModelParams with_head = init_params(mc);
    testutil::randomize_head(with_head, 2, 0.5);
    const TrainResult moved = train_joint(d.train, d.dev, with_head, c);
    const auto before = encode(round_to_storage(with_head), probe);
    const auto after = encode(moved.params, probe);
    double diff = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) diff = std::max(diff, std::abs(before[i] - after[i]));
    CHECK(diff > 1e-4);

    // A zero head passes no gradient into the trunk on the first step.
    const ModelParams zero_head = init_params(mc);
    const TrainResult still = train_joint(d.train, d.dev, zero_head, c);
    CHECK(encode(still.params, probe) == encode(round_to_storage(zero_head), probe));
}

TEST_CASE("joint training produces both usable heads") {
    const SmallData d = small_data();
    const ModelParams init = init_params(ModelConfig{});
    const TrainResult r = train_joint(d.train, d.dev, init, small_config(TrainMode::Joint, 600));
    CHECK(dev_mr(r.params, d.dev, Strategy::BE) > dev_mr(init, d.dev, Strategy::BE));
    for (const GoldPair& g : d.dev.gold) CHECK(cross_score(r.params, d.dev.item(g.image_id), d.dev.item(g.caption_id)) != 0.5);
    CHECK(mean_gold_prob(r.params, d.dev, true) > mean_gold_prob(r.params, d.dev, false));
}

TEST_CASE("invalid training setups are rejected") {
    const SmallData d = small_data();
    const ModelParams init = init_params(ModelConfig{});
    TrainConfig c = small_config(TrainMode::BE, 10);
    c.batch_pairs = 51;
    CHECK_THROWS_AS(train_be(d.train, d.dev, init, c), ValidationError);
    c.batch_pairs = 1;
    CHECK_THROWS_AS(train_be(d.train, d.dev, init, c), ValidationError);
    c = small_config(TrainMode::CE, 10);
    CHECK_THROWS_AS(train_be(d.train, d.dev, init, c), ValidationError);
    CHECK_THROWS_AS(train_ce(Corpus{}, d.dev, init, c), ValidationError);
    CHECK(parse_train_mode("joint") == TrainMode::Joint);
    CHECK_THROWS_AS(parse_train_mode("both"), ValidationError);
}

}  // TEST_SUITE
