#include "cmrr/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "cmrr/error.hpp"
#include "cmrr/eval.hpp"

namespace cmrr {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw ValidationError("cosine undefined for a zero-norm embedding");
    return dot(a, b) / (na * nb);
}

// out += scale * d cos(a, b) / da
void add_cosine_grad(std::span<const double> a, std::span<const double> b, double scale, std::vector<double>& out) {
    const double na = norm(a), nb = norm(b);
    const double c = dot(a, b) / (na * nb);
    for (std::size_t i = 0; i < a.size(); ++i) out[i] += scale * (b[i] / (na * nb) - c * a[i] / (na * na));
}

// Images of `corpus` that have gold captions, with those captions.
std::vector<std::pair<std::uint32_t, std::vector<std::uint32_t>>> gold_by_image(const Corpus& corpus) {
    std::map<std::uint32_t, std::vector<std::uint32_t>> m;
    for (const GoldPair& g : corpus.gold) m[g.image_id].push_back(g.caption_id);
    return {m.begin(), m.end()};
}

class BatchSampler {
public:
    BatchSampler(const Corpus& corpus, std::size_t batch_pairs, std::uint64_t seed)
        : corpus_(corpus), by_image_(gold_by_image(corpus)), images_(corpus.ids_of(Modality::Image)),
          captions_(corpus.ids_of(Modality::Caption)), order_(by_image_.size()), batch_(batch_pairs), rng_(seed) {
        if (corpus.items.empty() || by_image_.empty()) throw ValidationError("training corpus has no gold pairs");
        if (batch_pairs > by_image_.size()) {
            throw ValidationError("batch of " + std::to_string(batch_pairs) + " pairs exceeds the " +
                                  std::to_string(by_image_.size()) + " training images");
        }
        std::iota(order_.begin(), order_.end(), 0);
    }

    // batch_pairs gold pairs over distinct images.
    std::vector<GoldPair> positives() {
        std::vector<GoldPair> out;
        out.reserve(batch_);
        for (std::size_t i = 0; i < batch_; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, order_.size() - 1);
            std::swap(order_[i], order_[pick(rng_)]);
            const auto& [image, caps] = by_image_[order_[i]];
            std::uniform_int_distribution<std::size_t> cap(0, caps.size() - 1);
            out.push_back({image, caps[cap(rng_)]});
        }
        return out;
    }

    // Uniform corpus-wide re-pairing of an image with a caption that is not its gold partner.
    std::vector<GoldPair> negatives() {
        std::uniform_int_distribution<std::size_t> img(0, images_.size() - 1);
        std::uniform_int_distribution<std::size_t> cap(0, captions_.size() - 1);
        std::vector<GoldPair> out;
        out.reserve(batch_);
        for (std::size_t i = 0; i < batch_; ++i) {
            for (int attempt = 0;; ++attempt) {
                if (attempt == 10000) throw ValidationError("could not sample a non-gold (image, caption) pair");
                const GoldPair p{images_[img(rng_)], captions_[cap(rng_)]};
                if (!corpus_.is_gold(p.image_id, p.caption_id)) {
                    out.push_back(p);
                    break;
                }
            }
        }
        return out;
    }

private:
    const Corpus& corpus_;
    std::vector<std::pair<std::uint32_t, std::vector<std::uint32_t>>> by_image_;
    std::vector<std::uint32_t> images_;
    std::vector<std::uint32_t> captions_;
    std::vector<std::size_t> order_;
    std::size_t batch_;
    std::mt19937_64 rng_;
};

double be_step(const ModelParams& p, const Corpus& corpus, BatchSampler& sampler, double alpha, ModelParams& g) {
    const auto pos = sampler.positives();
    return be_batch_loss(p, corpus, mine_triplets(p, corpus, pos), alpha, &g);
}

double ce_step(const ModelParams& p, const Corpus& corpus, BatchSampler& sampler, ModelParams& g) {
    std::vector<LabeledPair> batch;
    for (const GoldPair& q : sampler.positives()) batch.push_back({q.image_id, q.caption_id, 1});
    for (const GoldPair& q : sampler.negatives()) batch.push_back({q.image_id, q.caption_id, 0});
    return ce_batch_loss(p, corpus, batch, &g);
}

TrainResult run_training(const Corpus& train_corpus, const Corpus& dev, const ModelParams& initial,
                         const TrainConfig& config, TrainMode mode, const CheckpointSink& sink) {
    config.validate();
    if (config.mode != mode) throw ValidationError(std::string("config.mode is not ") + to_string(mode));
    train_corpus.validate();
    dev.validate();
    if (train_corpus.feature_dim != initial.config().feature_dim || dev.feature_dim != initial.config().feature_dim) {
        throw ValidationError("corpus feature dimension does not match the model");
    }
    if (dev.gold.empty()) throw ValidationError("dev corpus has no gold pairs");

    StrategyConfig dev_strategy;
    dev_strategy.strategy = mode == TrainMode::BE ? Strategy::BE : (mode == TrainMode::CE ? Strategy::CE : Strategy::Coop);

    BatchSampler sampler(train_corpus, config.batch_pairs, config.seed);
    ModelParams params = initial;
    ModelParams grads(initial.config());
    OptimizerState state(params.size());

    TrainResult result;
    result.params = round_to_storage(params);
    for (std::size_t step = 0; step < config.steps; ++step) {
        const double lr_t = linear_decay_lr(config.learning_rate, step, config.steps);
        std::fill(grads.values().begin(), grads.values().end(), 0.0);
        const bool ce_turn = mode == TrainMode::CE || (mode == TrainMode::Joint && step % 2 == 0);
        const double loss = ce_turn ? ce_step(params, train_corpus, sampler, grads)
                                    : be_step(params, train_corpus, sampler, config.margin_alpha, grads);
        adamw_step(params.values(), grads.values(), state, lr_t, config.weight_decay);

        HistoryRecord rec{step + 1, loss, lr_t, std::nullopt};
        if ((step + 1) % config.checkpoint_every == 0 || step + 1 == config.steps) {
            ModelParams snap = round_to_storage(params);
            const double mr = mean_recall(evaluate(snap, dev, dev_strategy));
            rec.dev_mr = mr;
            if (sink) sink(step + 1, snap, mr);
            if (mr >= result.best_dev_mr) {
                result.best_dev_mr = mr;
                result.best_step = step + 1;
                result.params = std::move(snap);
            }
        }
        result.history.push_back(rec);
    }
    return result;
}

}  // namespace

const char* to_string(TrainMode m) {
    switch (m) {
        case TrainMode::BE: return "be";
        case TrainMode::CE: return "ce";
        case TrainMode::Joint: return "joint";
    }
    return "?";
}

TrainMode parse_train_mode(const std::string& text) {
    if (text == "be") return TrainMode::BE;
    if (text == "ce") return TrainMode::CE;
    if (text == "joint") return TrainMode::Joint;
    throw ValidationError("unknown training mode \"" + text + "\"; expected be, ce or joint");
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be >= 0");
    if (!(margin_alpha >= 0.0)) throw ValidationError("margin_alpha must be >= 0");
    if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
    if (batch_pairs < 2) throw ValidationError("batch_pairs must be >= 2");
    if (steps == 0) throw ValidationError("steps must be >= 1");
    if (checkpoint_every == 0) throw ValidationError("checkpoint_every must be >= 1");
}

void adamw_step(std::span<double> params, std::span<const double> grads, OptimizerState& state, double lr_t,
                double weight_decay) {
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ValidationError("adamw_step: shape mismatch between parameters, gradients and optimizer state");
    }
    if (!(lr_t >= 0.0)) throw ValidationError("adamw_step: learning rate must be >= 0");
    ++state.t;
    const double c1 = 1.0 - std::pow(OptimizerState::kBeta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(OptimizerState::kBeta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = OptimizerState::kBeta1 * state.m[i] + (1.0 - OptimizerState::kBeta1) * g;
        state.v[i] = OptimizerState::kBeta2 * state.v[i] + (1.0 - OptimizerState::kBeta2) * g * g;
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        const double theta = params[i];
        params[i] = theta - lr_t * (m_hat / (std::sqrt(v_hat) + OptimizerState::kEpsilon)) - lr_t * weight_decay * theta;
    }
}

double linear_decay_lr(double lr, std::size_t step, std::size_t steps) {
    return lr * (1.0 - static_cast<double>(step) / static_cast<double>(steps));
}

TripletLossResult triplet_loss(std::span<const double> i, std::span<const double> c, std::span<const double> i_neg,
                               std::span<const double> c_neg, double alpha) {
    const std::size_t n = i.size();
    if (c.size() != n || i_neg.size() != n || c_neg.size() != n) throw ValidationError("triplet_loss: dimension mismatch");
    const double pos = cosine(i, c);
    const double h_caption = cosine(i, c_neg) - pos + alpha;
    const double h_image = cosine(i_neg, c) - pos + alpha;

    TripletLossResult r;
    for (auto& g : r.grads) g.assign(n, 0.0);
    auto& [gi, gc, gi_neg, gc_neg] = r.grads;
    if (h_caption > 0.0) {
        r.value += h_caption;
        add_cosine_grad(i, c_neg, 1.0, gi);
        add_cosine_grad(c_neg, i, 1.0, gc_neg);
        add_cosine_grad(i, c, -1.0, gi);
        add_cosine_grad(c, i, -1.0, gc);
    }
    if (h_image > 0.0) {
        r.value += h_image;
        add_cosine_grad(i_neg, c, 1.0, gi_neg);
        add_cosine_grad(c, i_neg, 1.0, gc);
        add_cosine_grad(i, c, -1.0, gi);
        add_cosine_grad(c, i, -1.0, gc);
    }
    return r;
}

BceResult bce_loss(double z, int label) {
    if (label != 0 && label != 1) throw ValidationError("bce_loss: label must be 0 or 1");
    // -(y log s(z) + (1-y) log(1 - s(z))) = max(z, 0) - z y + log(1 + exp(-|z|))
    const double y = label;
    return {std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))), sigmoid(z) - y};
}

std::vector<std::size_t> bhn_select(const std::vector<std::vector<double>>& anchors,
                                    const std::vector<std::vector<double>>& candidates,
                                    const std::vector<std::vector<bool>>& gold_mask) {
    if (gold_mask.size() != anchors.size()) throw ValidationError("bhn_select: gold mask rows must match anchors");
    std::vector<std::size_t> out;
    out.reserve(anchors.size());
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        if (gold_mask[a].size() != candidates.size()) throw ValidationError("bhn_select: gold mask columns must match candidates");
        std::optional<std::size_t> best;
        double best_cos = 0.0;
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            if (gold_mask[a][c]) continue;
            const double cs = cosine(anchors[a], candidates[c]);
            if (!best || cs > best_cos) {
                best = c;
                best_cos = cs;
            }
        }
        if (!best) throw ValidationError("bhn_select: anchor " + std::to_string(a) + " has no eligible negative");
        out.push_back(*best);
    }
    return out;
}

TripletBatch mine_triplets(const ModelParams& params, const Corpus& corpus, std::span<const GoldPair> positives) {
    std::vector<std::vector<double>> images, captions;
    for (const GoldPair& p : positives) {
        images.push_back(encode(params, corpus.item(p.image_id)));
        captions.push_back(encode(params, corpus.item(p.caption_id)));
    }
    const std::size_t b = positives.size();
    std::vector<std::vector<bool>> image_anchor_mask(b, std::vector<bool>(b)), caption_anchor_mask(b, std::vector<bool>(b));
    for (std::size_t a = 0; a < b; ++a) {
        for (std::size_t c = 0; c < b; ++c) {
            image_anchor_mask[a][c] = corpus.is_gold(positives[a].image_id, positives[c].caption_id);
            caption_anchor_mask[a][c] = corpus.is_gold(positives[c].image_id, positives[a].caption_id);
        }
    }
    const auto neg_caption = bhn_select(images, captions, image_anchor_mask);
    const auto neg_image = bhn_select(captions, images, caption_anchor_mask);
    TripletBatch batch;
    for (std::size_t a = 0; a < b; ++a) {
        batch.push_back({positives[a].image_id, positives[a].caption_id, positives[neg_caption[a]].caption_id,
                         positives[neg_image[a]].image_id});
    }
    return batch;
}

double be_batch_loss(const ModelParams& params, const Corpus& corpus, const TripletBatch& batch, double alpha,
                     ModelParams* grads) {
    if (batch.empty()) throw ValidationError("empty triplet batch");
    std::map<std::uint32_t, EncodeTrace> traces;
    for (const Triplet& t : batch) {
        for (std::uint32_t id : {t.image_id, t.caption_id, t.negative_image_id, t.negative_caption_id}) {
            if (!traces.contains(id)) traces.emplace(id, encode_traced(params, corpus.item(id)));
        }
    }
    const std::size_t e = params.config().embed_dim;
    std::map<std::uint32_t, std::vector<double>> d_pooled;
    const double inv = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const Triplet& t : batch) {
        const std::array<std::uint32_t, 4> ids{t.image_id, t.caption_id, t.negative_image_id, t.negative_caption_id};
        const auto r = triplet_loss(traces.at(ids[0]).pooled, traces.at(ids[1]).pooled, traces.at(ids[2]).pooled,
                                    traces.at(ids[3]).pooled, alpha);
        total += r.value;
        if (!grads) continue;
        for (std::size_t k = 0; k < 4; ++k) {
            auto& acc = d_pooled.try_emplace(ids[k], e, 0.0).first->second;
            for (std::size_t j = 0; j < e; ++j) acc[j] += inv * r.grads[k][j];
        }
    }
    if (grads) {
        for (const auto& [id, dp] : d_pooled) backprop_encode(params, traces.at(id), dp, *grads);
    }
    return total * inv;
}

double ce_batch_loss(const ModelParams& params, const Corpus& corpus, std::span<const LabeledPair> batch,
                     ModelParams* grads) {
    if (batch.empty()) throw ValidationError("empty BCE batch");
    std::map<std::uint32_t, EncodeTrace> traces;
    for (const LabeledPair& p : batch) {
        const Item& image = corpus.item(p.image_id);
        const Item& caption = corpus.item(p.caption_id);
        if (image.modality != Modality::Image || caption.modality != Modality::Caption) {
            throw ValidationError("BCE pair must be (image, caption)");
        }
        if (!traces.contains(p.image_id)) traces.emplace(p.image_id, encode_traced(params, image));
        if (!traces.contains(p.caption_id)) traces.emplace(p.caption_id, encode_traced(params, caption));
    }
    const std::size_t e = params.config().embed_dim;
    std::map<std::uint32_t, std::vector<double>> d_pooled;
    const double inv = 1.0 / static_cast<double>(batch.size());
    std::vector<double> di(e), dc(e);
    double total = 0.0;
    for (const LabeledPair& p : batch) {
        const auto& xi = traces.at(p.image_id).pooled;
        const auto& xc = traces.at(p.caption_id).pooled;
        const BceResult r = bce_loss(logit_from_pooled(params, xi, xc), p.label);
        total += r.value;
        if (!grads) continue;
        backprop_logit(params, xi, xc, inv * r.d_logit, *grads, di, dc);
        auto& ai = d_pooled.try_emplace(p.image_id, e, 0.0).first->second;
        for (std::size_t j = 0; j < e; ++j) ai[j] += di[j];
        auto& ac = d_pooled.try_emplace(p.caption_id, e, 0.0).first->second;
        for (std::size_t j = 0; j < e; ++j) ac[j] += dc[j];
    }
    if (grads) {
        for (const auto& [id, dp] : d_pooled) backprop_encode(params, traces.at(id), dp, *grads);
    }
    return total * inv;
}

TrainResult train_be(const Corpus& train_corpus, const Corpus& dev, const ModelParams& initial, const TrainConfig& config,
                     const CheckpointSink& sink) {
    return run_training(train_corpus, dev, initial, config, TrainMode::BE, sink);
}

TrainResult train_ce(const Corpus& train_corpus, const Corpus& dev, const ModelParams& initial, const TrainConfig& config,
                     const CheckpointSink& sink) {
    return run_training(train_corpus, dev, initial, config, TrainMode::CE, sink);
}

TrainResult train_joint(const Corpus& train_corpus, const Corpus& dev, const ModelParams& initial,
                        const TrainConfig& config, const CheckpointSink& sink) {
    return run_training(train_corpus, dev, initial, config, TrainMode::Joint, sink);
}

TrainResult train(const Corpus& train_corpus, const Corpus& dev, const ModelParams& initial, const TrainConfig& config,
                  const CheckpointSink& sink) {
    return run_training(train_corpus, dev, initial, config, config.mode, sink);
}

double grad_check(const ModelParams& params, const LossFn& loss, std::size_t coordinates, std::uint64_t seed) {
    constexpr double kStep = 1e-5;
    ModelParams analytic(params.config());
    loss(params, &analytic);

    std::vector<std::size_t> coords(params.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coordinates < coords.size()) {
        std::mt19937_64 rng(seed);
        for (std::size_t i = 0; i < coordinates; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, coords.size() - 1);
            std::swap(coords[i], coords[pick(rng)]);
        }
        coords.resize(coordinates);
    }

    ModelParams probe = params;
    double worst = 0.0;
    for (std::size_t k : coords) {
        const double orig = probe.values()[k];
        probe.values()[k] = orig + kStep;
        const double up = loss(probe, nullptr);
        probe.values()[k] = orig - kStep;
        const double down = loss(probe, nullptr);
        probe.values()[k] = orig;
        const double fd = (up - down) / (2.0 * kStep);
        const double ga = analytic.values()[k];
        worst = std::max(worst, std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd)));
    }
    return worst;
}

GradCheckReport grad_check_probe(const ModelConfig& config, std::uint64_t seed, std::size_t coordinates) {
    PlantedSpec spec;
    spec.n_pairs = 6;
    spec.tokens_per_item = 3;
    spec.feature_dim = config.feature_dim;
    spec.noise_sigma = 0.3;
    spec.seed = seed;
    const Corpus corpus = generate_planted(spec);

    ModelConfig mc = config;
    mc.seed = seed;
    ModelParams params = init_params(mc);
    // Give the head and layer biases nonzero values so every path carries gradient.
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    // Modality biases at init scale saturate tanh, leaving gradients near 1e-8 where the
    // central difference is dominated by roundoff of the loss value.
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (Modality m : {Modality::Image, Modality::Caption}) {
        for (double& v : params.input_bias(m)) v = unit(rng);
    }
    for (double& v : params.ce_bilinear()) v = u(rng);
    for (double& v : params.ce_image_weight()) v = u(rng);
    for (double& v : params.ce_caption_weight()) v = u(rng);
    params.ce_bias() = u(rng);
    for (std::size_t l = 0; l < mc.trunk_layers; ++l) {
        for (double& v : params.layer_bias(l)) v = u(rng);
    }

    const std::uint32_t n = static_cast<std::uint32_t>(spec.n_pairs);
    std::vector<LabeledPair> bce_batch;
    TripletBatch triplets;
    for (std::uint32_t j = 0; j < n; ++j) {
        bce_batch.push_back({j, n + j, 1});
        bce_batch.push_back({j, n + (j + 1) % n, 0});
        triplets.push_back({j, n + j, n + (j + 2) % n, (j + 1) % n});
    }
    // Smallest margin that keeps every hinge at least 0.1 past its kink.
    double alpha = 0.0;
    for (const Triplet& t : triplets) {
        const auto ei = encode(params, corpus.item(t.image_id));
        const auto ec = encode(params, corpus.item(t.caption_id));
        const double pos = cosine(ei, ec);
        alpha = std::max({alpha, pos - cosine(ei, encode(params, corpus.item(t.negative_caption_id))),
                          pos - cosine(encode(params, corpus.item(t.negative_image_id)), ec)});
    }
    alpha += 0.1;
    LossFn bce = [&](const ModelParams& p, ModelParams* g) { return ce_batch_loss(p, corpus, bce_batch, g); };
    LossFn triplet = [&](const ModelParams& p, ModelParams* g) {
        return be_batch_loss(p, corpus, triplets, alpha, g);
    };
    LossFn joint = [&](const ModelParams& p, ModelParams* g) { return bce(p, g) + triplet(p, g); };

    GradCheckReport rep;
    rep.bce = grad_check(params, bce, coordinates, seed + 1);
    rep.triplet = grad_check(params, triplet, coordinates, seed + 2);
    rep.joint = grad_check(params, joint, coordinates, seed + 3);
    return rep;
}

}  // namespace cmrr
