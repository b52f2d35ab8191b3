#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmrr/corpus.hpp"
#include "cmrr/model.hpp"

namespace cmrr {

enum class TrainMode { BE, CE, Joint };

const char* to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& text);

struct TrainConfig {
    double learning_rate = 1e-2;
    std::size_t steps = 2000;
    std::size_t batch_pairs = 128;
    double margin_alpha = 0.1;
    double weight_decay = 0.05;
    std::size_t checkpoint_every = 100;
    std::uint64_t seed = 1;
    TrainMode mode = TrainMode::Joint;

    void validate() const;
};

struct OptimizerState {
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEpsilon = 1e-8;

    OptimizerState() = default;
    explicit OptimizerState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;
};

// Bias-corrected Adam moments with decoupled weight decay applied to the pre-update value.
void adamw_step(std::span<double> params, std::span<const double> grads, OptimizerState& state, double lr_t,
                double weight_decay);

// lr * (1 - step / steps) for 0-based step.
double linear_decay_lr(double lr, std::size_t step, std::size_t steps);

struct TripletLossResult {
    double value = 0.0;
    // d/d(image, caption, negative image, negative caption)
    std::array<std::vector<double>, 4> grads;
};

// [cos(i, c') - cos(i, c) + alpha]+ + [cos(i', c) - cos(i, c) + alpha]+, subgradient 0 at the kink.
TripletLossResult triplet_loss(std::span<const double> image, std::span<const double> caption,
                               std::span<const double> negative_image, std::span<const double> negative_caption,
                               double alpha);

struct BceResult {
    double value = 0.0;
    double d_logit = 0.0;
};

BceResult bce_loss(double logit, int label);

// For each anchor the eligible (non-gold) candidate with the highest cosine; ties to the lowest index.
std::vector<std::size_t> bhn_select(const std::vector<std::vector<double>>& anchors,
                                    const std::vector<std::vector<double>>& candidates,
                                    const std::vector<std::vector<bool>>& gold_mask);

struct Triplet {
    std::uint32_t image_id = 0;
    std::uint32_t caption_id = 0;
    std::uint32_t negative_caption_id = 0;
    std::uint32_t negative_image_id = 0;

    bool operator==(const Triplet&) const = default;
};
using TripletBatch = std::vector<Triplet>;

struct LabeledPair {
    std::uint32_t image_id = 0;
    std::uint32_t caption_id = 0;
    int label = 0;
};

// BHN within a batch of gold (image, caption) positives.
TripletBatch mine_triplets(const ModelParams& params, const Corpus& corpus, std::span<const GoldPair> positives);

// Mean triplet loss over the batch; gradients are accumulated into *grads when given.
double be_batch_loss(const ModelParams& params, const Corpus& corpus, const TripletBatch& batch, double alpha,
                     ModelParams* grads);
// Mean BCE over labeled pairs.
double ce_batch_loss(const ModelParams& params, const Corpus& corpus, std::span<const LabeledPair> batch,
                     ModelParams* grads);

struct HistoryRecord {
    std::size_t step = 0;  // completed steps
    double loss = 0.0;
    double lr = 0.0;
    std::optional<double> dev_mr;
};

struct TrainResult {
    ModelParams params;  // best checkpoint, rounded to storage precision
    std::size_t best_step = 0;
    double best_dev_mr = -1.0;
    std::vector<HistoryRecord> history;
};

// Called at each checkpoint with (completed steps, parameters rounded to storage precision, dev mR).
using CheckpointSink = std::function<void(std::size_t, const ModelParams&, double)>;

TrainResult train_be(const Corpus& train, const Corpus& dev, const ModelParams& initial, const TrainConfig& config,
                     const CheckpointSink& sink = {});
TrainResult train_ce(const Corpus& train, const Corpus& dev, const ModelParams& initial, const TrainConfig& config,
                     const CheckpointSink& sink = {});
TrainResult train_joint(const Corpus& train, const Corpus& dev, const ModelParams& initial, const TrainConfig& config,
                        const CheckpointSink& sink = {});
// Dispatches on config.mode.
TrainResult train(const Corpus& train, const Corpus& dev, const ModelParams& initial, const TrainConfig& config,
                  const CheckpointSink& sink = {});

// Scalar loss with analytic gradient accumulated into *grads (zero-initialized by the caller).
using LossFn = std::function<double(const ModelParams&, ModelParams*)>;

// Central differences (h = 1e-5) against the analytic gradient on `coordinates` random parameters
// (all of them if there are fewer). Returns the max of |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|).
double grad_check(const ModelParams& params, const LossFn& loss, std::size_t coordinates, std::uint64_t seed);

struct GradCheckReport {
    double bce = 0.0;
    double triplet = 0.0;
    double joint = 0.0;
    double max() const { return std::max({bce, triplet, joint}); }
};

// Builds a random probe (corpus, head, batches) and checks all three training objectives.
GradCheckReport grad_check_probe(const ModelConfig& config, std::uint64_t seed, std::size_t coordinates = 200);

}  // namespace cmrr
