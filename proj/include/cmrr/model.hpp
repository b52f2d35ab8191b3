#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cmrr/corpus.hpp"

namespace cmrr {

enum class LayerSkip : std::uint8_t { Full = 0, SkipOdd = 1 };

struct ModelConfig {
    std::uint32_t feature_dim = 16;  // D
    std::uint32_t embed_dim = 32;    // E
    std::uint32_t trunk_layers = 2;  // L
    LayerSkip layer_skip = LayerSkip::Full;
    std::uint64_t seed = 1;

    // Indices of the trunk layers that run; SkipOdd keeps 0, 2, 4, ...
    std::vector<std::size_t> active_layers() const;
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

// Shared trunk + bi-encoder pooling + cross-encoder head over one flat
// parameter vector. Both heads read the same trunk storage.
//
// Flat layout (also the checkpoint tensor order):
//   input_weight  E x D
//   input_bias    E      (image)
//   input_bias    E      (caption)
//   per layer l:  weight E x E, bias E
//   ce_bilinear   E x E
//   ce_image_weight   E
//   ce_caption_weight E
//   ce_bias       1
class ModelParams {
public:
    ModelParams() = default;
    explicit ModelParams(const ModelConfig& config);  // all zeros

    const ModelConfig& config() const { return config_; }
    std::size_t size() const { return values_.size(); }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    std::span<double> input_weight() { return slice(0, e() * d()); }
    std::span<const double> input_weight() const { return slice(0, e() * d()); }
    std::span<double> input_bias(Modality m) { return slice(bias_offset(m), e()); }
    std::span<const double> input_bias(Modality m) const { return slice(bias_offset(m), e()); }
    std::span<double> layer_weight(std::size_t l) { return slice(layer_offset(l), e() * e()); }
    std::span<const double> layer_weight(std::size_t l) const { return slice(layer_offset(l), e() * e()); }
    std::span<double> layer_bias(std::size_t l) { return slice(layer_offset(l) + e() * e(), e()); }
    std::span<const double> layer_bias(std::size_t l) const { return slice(layer_offset(l) + e() * e(), e()); }
    std::span<double> ce_bilinear() { return slice(head_offset(), e() * e()); }
    std::span<const double> ce_bilinear() const { return slice(head_offset(), e() * e()); }
    std::span<double> ce_image_weight() { return slice(head_offset() + e() * e(), e()); }
    std::span<const double> ce_image_weight() const { return slice(head_offset() + e() * e(), e()); }
    std::span<double> ce_caption_weight() { return slice(head_offset() + e() * e() + e(), e()); }
    std::span<const double> ce_caption_weight() const { return slice(head_offset() + e() * e() + e(), e()); }
    double& ce_bias() { return values_.back(); }
    double ce_bias() const { return values_.back(); }

    // Trunk parameters occupy [0, trunk_size()); the CE head follows.
    std::size_t trunk_size() const { return head_offset(); }

    bool operator==(const ModelParams&) const = default;

private:
    std::size_t d() const { return config_.feature_dim; }
    std::size_t e() const { return config_.embed_dim; }
    std::size_t bias_offset(Modality m) const { return e() * d() + (m == Modality::Image ? 0 : e()); }
    std::size_t layer_offset(std::size_t l) const { return e() * d() + 2 * e() + l * (e() * e() + e()); }
    std::size_t head_offset() const { return layer_offset(config_.trunk_layers); }
    std::span<double> slice(std::size_t at, std::size_t n) { return {values_.data() + at, n}; }
    std::span<const double> slice(std::size_t at, std::size_t n) const { return {values_.data() + at, n}; }

    ModelConfig config_;
    std::vector<double> values_;
};

// Projection and layer weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), layer biases 0,
// per-modality input biases ~ U(-kModalityBiasScale, kModalityBiasScale), CE head 0.
inline constexpr double kModalityBiasScale = 5.0;
ModelParams init_params(const ModelConfig& config);

std::vector<double> encode(const ModelParams& params, const Item& item);
double logit(const ModelParams& params, const Item& image, const Item& caption);
double cross_score(const ModelParams& params, const Item& image, const Item& caption);
// The head reads the pooled trunk outputs after L2 normalization.
double logit_from_pooled(const ModelParams& params, std::span<const double> image_pooled,
                         std::span<const double> caption_pooled);
double sigmoid(double x);

// Forward record of one encode call, kept for backpropagation.
struct EncodeTrace {
    Modality modality = Modality::Image;
    std::size_t tokens = 0;
    std::vector<double> inputs;  // T x D
    std::vector<double> states;  // T x (active + 1) x E: h_0 .. h_n per token
    std::vector<double> pooled;  // E
};

EncodeTrace encode_traced(const ModelParams& params, const Item& item);
// Accumulates dLoss/dparams into grads given dLoss/dpooled.
void backprop_encode(const ModelParams& params, const EncodeTrace& trace, std::span<const double> d_pooled,
                     ModelParams& grads);
// Accumulates head gradients into grads and writes dLoss/d(pooled inputs).
void backprop_logit(const ModelParams& params, std::span<const double> image_pooled,
                    std::span<const double> caption_pooled, double d_logit, ModelParams& grads,
                    std::span<double> d_image_pooled, std::span<double> d_caption_pooled);

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

// Rounds every parameter through f32, the checkpoint storage precision.
ModelParams round_to_storage(ModelParams params);

}  // namespace cmrr
