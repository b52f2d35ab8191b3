#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cmrr {

enum class Modality : std::uint8_t { Image = 0, Caption = 1 };

const char* to_string(Modality m);

// A modality-tagged sequence of pre-extracted token feature vectors.
struct Item {
    std::uint32_t id = 0;
    Modality modality = Modality::Image;
    std::size_t tokens = 0;       // T
    std::vector<float> features;  // T x D, row-major

    std::size_t dim() const { return tokens == 0 ? 0 : features.size() / tokens; }
    std::span<const float> token(std::size_t t) const {
        const std::size_t d = dim();
        return {features.data() + t * d, d};
    }

    bool operator==(const Item&) const = default;
};

struct GoldPair {
    std::uint32_t image_id = 0;
    std::uint32_t caption_id = 0;

    auto operator<=>(const GoldPair&) const = default;
};

// Items are stored in id order, so items[id].id == id.
struct Corpus {
    std::uint32_t feature_dim = 0;
    std::vector<Item> items;
    std::vector<GoldPair> gold;  // sorted, unique

    const Item& item(std::uint32_t id) const;
    std::vector<std::uint32_t> ids_of(Modality m) const;
    bool is_gold(std::uint32_t image_id, std::uint32_t caption_id) const;

    // Throws ValidationError naming the first broken invariant.
    void validate() const;

    bool operator==(const Corpus&) const = default;
};

struct PlantedSpec {
    std::size_t n_pairs = 50;
    std::size_t tokens_per_item = 4;
    std::size_t feature_dim = 16;
    double noise_sigma = 0.1;
    std::size_t captions_per_image = 1;
    std::uint64_t seed = 1;
};

// Images get ids 0..n-1; captions follow, grouped by image.
Corpus generate_planted(const PlantedSpec& spec);

std::vector<std::uint8_t> serialize_corpus(const Corpus& corpus);
Corpus deserialize_corpus(std::span<const std::uint8_t> bytes);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

struct CorpusPart {
    Corpus corpus;
    std::vector<std::uint32_t> source_ids;  // source_ids[new id] = id in the original corpus
};

struct CorpusSplit {
    CorpusPart train;
    CorpusPart dev;
    CorpusPart test;
};

// Image-level split; every caption follows its gold image.
CorpusSplit split(const Corpus& corpus, double train_frac, double dev_frac, std::uint64_t seed);

// Renumbers `extra` after `base`; the result keeps both gold sets.
Corpus concat(const Corpus& base, const Corpus& extra);

// Order-sensitive 64-bit FNV-1a hash of the serialized corpus.
std::uint64_t fingerprint(const Corpus& corpus);

}  // namespace cmrr
