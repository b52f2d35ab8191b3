#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cmrr/corpus.hpp"
#include "cmrr/model.hpp"

namespace testutil {

inline std::vector<double> values_of(const cmrr::ModelParams& p) { return {p.values().begin(), p.values().end()}; }

inline cmrr::Item make_item(std::uint32_t id, cmrr::Modality m, const std::vector<std::vector<float>>& tokens) {
    cmrr::Item it;
    it.id = id;
    it.modality = m;
    it.tokens = tokens.size();
    for (const auto& t : tokens) it.features.insert(it.features.end(), t.begin(), t.end());
    return it;
}

// L = 0, E = D, identity projection, zero biases and head.
inline cmrr::ModelParams identity_model(std::uint32_t dim) {
    cmrr::ModelConfig cfg;
    cfg.feature_dim = dim;
    cfg.embed_dim = dim;
    cfg.trunk_layers = 0;
    cmrr::ModelParams p(cfg);
    for (std::uint32_t i = 0; i < dim; ++i) p.input_weight()[i * dim + i] = 1.0;
    return p;
}

inline void randomize_head(cmrr::ModelParams& p, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (double& v : p.ce_bilinear()) v = n(rng);
    for (double& v : p.ce_image_weight()) v = n(rng);
    for (double& v : p.ce_caption_weight()) v = n(rng);
    p.ce_bias() = n(rng);
}

struct Fixture {
    cmrr::Corpus corpus;
    cmrr::ModelParams params;
};

// Random planted corpus with a small random model whose head is not at its zero init.
inline Fixture random_fixture(std::uint64_t seed, std::size_t pairs, double sigma = 0.3) {
    cmrr::PlantedSpec spec;
    spec.n_pairs = pairs;
    spec.tokens_per_item = 3;
    spec.feature_dim = 8;
    spec.noise_sigma = sigma;
    spec.seed = seed;
    cmrr::ModelConfig mc;
    mc.feature_dim = 8;
    mc.embed_dim = 8;
    mc.trunk_layers = 1;
    mc.seed = seed;
    Fixture f{cmrr::generate_planted(spec), cmrr::init_params(mc)};
    randomize_head(f.params, seed + 77);
    return f;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("cmrr_test_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace testutil
