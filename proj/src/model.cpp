#include "cmrr/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "cmrr/binary_io.hpp"
#include "cmrr/error.hpp"

namespace cmrr {

namespace {

constexpr char kCheckpointMagic[] = "CMRM";
constexpr std::uint16_t kCheckpointVersion = 1;
constexpr double kPooledNormFloor = 1e-12;

// out = W x + b, W row-major rows x cols.
void affine(std::span<const double> w, std::span<const double> b, const double* x, std::size_t cols, double* out) {
    const std::size_t rows = b.size();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = w.data() + r * cols;
        double acc = b[r];
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
        out[r] = acc;
    }
}

void check_item(const ModelParams& params, const Item& item) {
    if (item.tokens == 0 || item.dim() != params.config().feature_dim ||
        item.features.size() != item.tokens * params.config().feature_dim) {
        throw ValidationError("item " + std::to_string(item.id) + " has feature dimension " +
                              std::to_string(item.dim()) + ", model expects " +
                              std::to_string(params.config().feature_dim));
    }
}

void check_pair(const Item& image, const Item& caption) {
    if (image.modality != Modality::Image || caption.modality != Modality::Caption) {
        throw ValidationError("cross_score expects (image, caption), got (" + std::string(to_string(image.modality)) +
                              ", " + to_string(caption.modality) + ")");
    }
}

std::vector<double> unit(std::span<const double> x) {
    double sq = 0.0;
    for (double v : x) sq += v * v;
    const double n = std::sqrt(sq);
    if (!(n >= kPooledNormFloor)) throw ValidationError("cross-encoder input has near-zero norm");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / n;
    return out;
}

// d/dx of x/|x| applied to upstream gradient du: (du - u (u . du)) / |x|
void unit_backprop(std::span<const double> x, std::span<const double> u, std::span<const double> du,
                   std::span<double> dx) {
    double sq = 0.0, proj = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sq += x[i] * x[i];
        proj += u[i] * du[i];
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = (du[i] - u[i] * proj) * inv;
}

}  // namespace

std::vector<std::size_t> ModelConfig::active_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < trunk_layers; ++l) {
        if (layer_skip == LayerSkip::Full || l % 2 == 0) out.push_back(l);
    }
    return out;
}

void ModelConfig::validate() const {
    if (feature_dim == 0 || embed_dim == 0) throw ValidationError("feature_dim and embed_dim must be >= 1");
    if (layer_skip != LayerSkip::Full && layer_skip != LayerSkip::SkipOdd) throw ValidationError("invalid layer_skip");
}

ModelParams::ModelParams(const ModelConfig& config) : config_(config) {
    config_.validate();
    const std::size_t e = config.embed_dim;
    const std::size_t d = config.feature_dim;
    values_.assign(e * d + 2 * e + config.trunk_layers * (e * e + e) + e * e + 2 * e + 1, 0.0);
}

ModelParams init_params(const ModelConfig& config) {
    ModelParams p(config);
    std::mt19937_64 rng(config.seed);
    auto fill = [&rng](std::span<double> dst, double bound) {
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& v : dst) v = u(rng);
    };
    fill(p.input_weight(), 1.0 / std::sqrt(static_cast<double>(config.feature_dim)));
    fill(p.input_bias(Modality::Image), kModalityBiasScale);
    fill(p.input_bias(Modality::Caption), kModalityBiasScale);
    for (std::size_t l = 0; l < config.trunk_layers; ++l) {
        fill(p.layer_weight(l), 1.0 / std::sqrt(static_cast<double>(config.embed_dim)));
    }
    return p;
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double ex = std::exp(x);
    return ex / (1.0 + ex);
}

EncodeTrace encode_traced(const ModelParams& params, const Item& item) {
    check_item(params, item);
    const std::size_t d = params.config().feature_dim;
    const std::size_t e = params.config().embed_dim;
    const auto active = params.config().active_layers();
    const std::size_t stride = (active.size() + 1) * e;

    EncodeTrace tr;
    tr.modality = item.modality;
    tr.tokens = item.tokens;
    tr.inputs.assign(item.features.begin(), item.features.end());
    tr.states.resize(item.tokens * stride);
    tr.pooled.assign(e, 0.0);
    for (std::size_t t = 0; t < item.tokens; ++t) {
        double* h = tr.states.data() + t * stride;
        affine(params.input_weight(), params.input_bias(item.modality), tr.inputs.data() + t * d, d, h);
        for (std::size_t k = 0; k < active.size(); ++k) {
            double* next = h + e;
            affine(params.layer_weight(active[k]), params.layer_bias(active[k]), h, e, next);
            for (std::size_t i = 0; i < e; ++i) next[i] = h[i] + std::tanh(next[i]);
            h = next;
        }
        for (std::size_t i = 0; i < e; ++i) tr.pooled[i] += h[i];
    }
    const double inv = 1.0 / static_cast<double>(item.tokens);
    for (double& v : tr.pooled) v *= inv;
    return tr;
}

std::vector<double> encode(const ModelParams& params, const Item& item) {
    check_item(params, item);
    const std::size_t d = params.config().feature_dim;
    const std::size_t e = params.config().embed_dim;
    const auto active = params.config().active_layers();

    std::vector<double> x(d), h(e), a(e), pooled(e, 0.0);
    for (std::size_t t = 0; t < item.tokens; ++t) {
        const auto tok = item.token(t);
        for (std::size_t j = 0; j < d; ++j) x[j] = tok[j];
        affine(params.input_weight(), params.input_bias(item.modality), x.data(), d, h.data());
        for (std::size_t l : active) {
            affine(params.layer_weight(l), params.layer_bias(l), h.data(), e, a.data());
            for (std::size_t i = 0; i < e; ++i) h[i] += std::tanh(a[i]);
        }
        for (std::size_t i = 0; i < e; ++i) pooled[i] += h[i];
    }
    const double inv = 1.0 / static_cast<double>(item.tokens);
    for (double& v : pooled) v *= inv;
    return pooled;
}

void backprop_encode(const ModelParams& params, const EncodeTrace& trace, std::span<const double> d_pooled,
                     ModelParams& grads) {
    const std::size_t d = params.config().feature_dim;
    const std::size_t e = params.config().embed_dim;
    const auto active = params.config().active_layers();
    const std::size_t stride = (active.size() + 1) * e;
    const double inv = 1.0 / static_cast<double>(trace.tokens);

    std::vector<double> dh(e), da(e);
    for (std::size_t t = 0; t < trace.tokens; ++t) {
        for (std::size_t i = 0; i < e; ++i) dh[i] = d_pooled[i] * inv;
        const double* states = trace.states.data() + t * stride;
        for (std::size_t k = active.size(); k-- > 0;) {
            const double* h_in = states + k * e;
            const double* h_out = states + (k + 1) * e;
            const std::size_t l = active[k];
            auto w = params.layer_weight(l);
            auto gw = grads.layer_weight(l);
            auto gb = grads.layer_bias(l);
            for (std::size_t i = 0; i < e; ++i) {
                const double tval = h_out[i] - h_in[i];
                da[i] = dh[i] * (1.0 - tval * tval);
            }
            for (std::size_t r = 0; r < e; ++r) {
                gb[r] += da[r];
                double* grow = gw.data() + r * e;
                for (std::size_t c = 0; c < e; ++c) grow[c] += da[r] * h_in[c];
            }
            // Residual path keeps dh; add W^T da.
            for (std::size_t r = 0; r < e; ++r) {
                const double* wrow = w.data() + r * e;
                for (std::size_t c = 0; c < e; ++c) dh[c] += wrow[c] * da[r];
            }
        }
        auto gw0 = grads.input_weight();
        auto gb0 = grads.input_bias(trace.modality);
        const double* x = trace.inputs.data() + t * d;
        for (std::size_t r = 0; r < e; ++r) {
            gb0[r] += dh[r];
            double* grow = gw0.data() + r * d;
            for (std::size_t c = 0; c < d; ++c) grow[c] += dh[r] * x[c];
        }
    }
}

double logit_from_pooled(const ModelParams& params, std::span<const double> image_pooled,
                         std::span<const double> caption_pooled) {
    const std::size_t e = params.config().embed_dim;
    const auto xi = unit(image_pooled);
    const auto xc = unit(caption_pooled);
    const auto b = params.ce_bilinear();
    const auto wi = params.ce_image_weight();
    const auto wc = params.ce_caption_weight();
    double z = params.ce_bias();
    for (std::size_t r = 0; r < e; ++r) {
        double row = 0.0;
        for (std::size_t c = 0; c < e; ++c) row += b[r * e + c] * xc[c];
        z += xi[r] * row + wi[r] * xi[r] + wc[r] * xc[r];
    }
    return z;
}

void backprop_logit(const ModelParams& params, std::span<const double> image_pooled,
                    std::span<const double> caption_pooled, double g, ModelParams& grads, std::span<double> d_image_pooled,
                    std::span<double> d_caption_pooled) {
    const std::size_t e = params.config().embed_dim;
    const auto xi = unit(image_pooled);
    const auto xc = unit(caption_pooled);
    const auto b = params.ce_bilinear();
    const auto wi = params.ce_image_weight();
    const auto wc = params.ce_caption_weight();
    auto gb = grads.ce_bilinear();
    auto gwi = grads.ce_image_weight();
    auto gwc = grads.ce_caption_weight();
    grads.ce_bias() += g;
    std::vector<double> d_xi(e), d_xc(e);
    for (std::size_t i = 0; i < e; ++i) {
        d_xi[i] = g * wi[i];
        d_xc[i] = g * wc[i];
        gwi[i] += g * xi[i];
        gwc[i] += g * xc[i];
    }
    for (std::size_t r = 0; r < e; ++r) {
        for (std::size_t c = 0; c < e; ++c) {
            const double brc = b[r * e + c];
            gb[r * e + c] += g * xi[r] * xc[c];
            d_xi[r] += g * brc * xc[c];
            d_xc[c] += g * brc * xi[r];
        }
    }
    unit_backprop(image_pooled, xi, d_xi, d_image_pooled);
    unit_backprop(caption_pooled, xc, d_xc, d_caption_pooled);
}

double logit(const ModelParams& params, const Item& image, const Item& caption) {
    check_pair(image, caption);
    return logit_from_pooled(params, encode(params, image), encode(params, caption));
}

double cross_score(const ModelParams& params, const Item& image, const Item& caption) {
    return sigmoid(logit(params, image, caption));
}

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params) {
    const ModelConfig& c = params.config();
    ByteWriter w;
    w.magic({kCheckpointMagic, 4});
    w.u16(kCheckpointVersion);
    w.u32(c.feature_dim);
    w.u32(c.embed_dim);
    w.u32(c.trunk_layers);
    w.u8(static_cast<std::uint8_t>(c.layer_skip));
    w.u64(c.seed);
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (double v : params.values()) w.f32(static_cast<float>(v));
    return w.bytes();
}

ModelParams deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic({kCheckpointMagic, 4});
    if (const auto v = r.u16(); v != kCheckpointVersion) {
        throw ParseError("unsupported checkpoint version " + std::to_string(v));
    }
    ModelConfig c;
    c.feature_dim = r.u32();
    c.embed_dim = r.u32();
    c.trunk_layers = r.u32();
    const std::uint8_t skip = r.u8();
    if (skip > 1) throw ParseError("invalid layer_skip " + std::to_string(skip));
    c.layer_skip = static_cast<LayerSkip>(skip);
    c.seed = r.u64();
    if (c.feature_dim == 0 || c.embed_dim == 0) throw ParseError("malformed checkpoint header: zero dimension");
    if (c.trunk_layers > 4096 || std::uint64_t{c.embed_dim} * c.embed_dim > (1ULL << 28)) {
        throw ParseError("malformed checkpoint header: implausible model size");
    }
    ModelParams p(c);
    const std::size_t count_at = r.offset();
    if (const auto n = r.u32(); n != p.size()) {
        throw ParseError("parameter count " + std::to_string(n) + " at byte offset " + std::to_string(count_at) +
                         " does not match config (" + std::to_string(p.size()) + ")");
    }
    for (double& v : p.values()) {
        const float f = r.f32();
        if (!std::isfinite(f)) throw ParseError("non-finite parameter at byte offset " + std::to_string(r.offset() - 4));
        v = f;
    }
    r.expect_end();
    return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    write_file(path, serialize_checkpoint(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

ModelParams round_to_storage(ModelParams params) {
    for (double& v : params.values()) v = static_cast<double>(static_cast<float>(v));
    return params;
}

}  // namespace cmrr
