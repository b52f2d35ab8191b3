#include "cmrr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "cmrr/binary_io.hpp"
#include "cmrr/error.hpp"

namespace cmrr {

namespace {

constexpr char kCorpusMagic[] = "CMRR";
constexpr std::uint16_t kCorpusVersion = 1;

CorpusPart subset(const Corpus& corpus, const std::vector<std::uint32_t>& keep) {
    CorpusPart part;
    part.corpus.feature_dim = corpus.feature_dim;
    std::map<std::uint32_t, std::uint32_t> remap;
    for (std::uint32_t old_id : keep) {
        Item it = corpus.item(old_id);
        it.id = static_cast<std::uint32_t>(part.corpus.items.size());
        remap[old_id] = it.id;
        part.source_ids.push_back(old_id);
        part.corpus.items.push_back(std::move(it));
    }
    for (const GoldPair& g : corpus.gold) {
        auto i = remap.find(g.image_id);
        auto c = remap.find(g.caption_id);
        if (i != remap.end() && c != remap.end()) part.corpus.gold.push_back({i->second, c->second});
    }
    std::sort(part.corpus.gold.begin(), part.corpus.gold.end());
    return part;
}

}  // namespace

const char* to_string(Modality m) { return m == Modality::Image ? "image" : "caption"; }

const Item& Corpus::item(std::uint32_t id) const {
    if (id >= items.size()) throw ValidationError("item id " + std::to_string(id) + " out of range");
    return items[id];
}

std::vector<std::uint32_t> Corpus::ids_of(Modality m) const {
    std::vector<std::uint32_t> out;
    for (const Item& it : items) {
        if (it.modality == m) out.push_back(it.id);
    }
    return out;
}

bool Corpus::is_gold(std::uint32_t image_id, std::uint32_t caption_id) const {
    return std::binary_search(gold.begin(), gold.end(), GoldPair{image_id, caption_id});
}

void Corpus::validate() const {
    if (feature_dim == 0) throw ValidationError("feature_dim must be >= 1");
    for (std::size_t i = 0; i < items.size(); ++i) {
        const Item& it = items[i];
        if (it.id != i) throw ValidationError("item ids must be dense: position " + std::to_string(i) +
                                              " holds id " + std::to_string(it.id));
        if (it.tokens == 0) throw ValidationError("item " + std::to_string(it.id) + " has no tokens");
        if (it.features.size() != it.tokens * feature_dim) {
            throw ValidationError("item " + std::to_string(it.id) + " has wrong feature dimension");
        }
        for (float v : it.features) {
            if (!std::isfinite(v)) throw ValidationError("item " + std::to_string(it.id) + " has non-finite features");
        }
    }
    for (std::size_t g = 0; g < gold.size(); ++g) {
        const GoldPair& p = gold[g];
        for (std::uint32_t id : {p.image_id, p.caption_id}) {
            if (id >= items.size()) throw ValidationError("dangling gold id " + std::to_string(id));
        }
        if (items[p.image_id].modality != Modality::Image || items[p.caption_id].modality != Modality::Caption) {
            throw ValidationError("gold pair (" + std::to_string(p.image_id) + "," + std::to_string(p.caption_id) +
                                  ") has wrong modalities");
        }
        if (g > 0 && !(gold[g - 1] < p)) throw ValidationError("gold pairs must be sorted and unique");
    }
}

Corpus generate_planted(const PlantedSpec& spec) {
    if (spec.n_pairs == 0 || spec.tokens_per_item == 0 || spec.feature_dim == 0 || spec.captions_per_image == 0) {
        throw ValidationError("planted spec counts must all be >= 1");
    }
    if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.noise_sigma)) {
        throw ValidationError("noise_sigma must be finite and >= 0");
    }
    if (spec.tokens_per_item > 0xFFFF) throw ValidationError("tokens_per_item exceeds 65535");

    const std::size_t n = spec.n_pairs;
    const std::size_t d = spec.feature_dim;
    const std::size_t t = spec.tokens_per_item;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> unit(0.0, 1.0);

    Corpus corpus;
    corpus.feature_dim = static_cast<std::uint32_t>(d);
    corpus.items.resize(n * (1 + spec.captions_per_image));

    auto make_view = [&](const std::vector<double>& z, std::uint32_t id, Modality m) {
        Item& it = corpus.items[id];
        it.id = id;
        it.modality = m;
        it.tokens = t;
        it.features.resize(t * d);
        for (std::size_t k = 0; k < t * d; ++k) {
            it.features[k] = static_cast<float>(z[k % d] + spec.noise_sigma * unit(rng));
        }
    };

    std::vector<double> z(d);
    for (std::size_t j = 0; j < n; ++j) {
        for (double& v : z) v = unit(rng);
        make_view(z, static_cast<std::uint32_t>(j), Modality::Image);
        for (std::size_t c = 0; c < spec.captions_per_image; ++c) {
            const auto cid = static_cast<std::uint32_t>(n + j * spec.captions_per_image + c);
            make_view(z, cid, Modality::Caption);
            corpus.gold.push_back({static_cast<std::uint32_t>(j), cid});
        }
    }
    std::sort(corpus.gold.begin(), corpus.gold.end());
    return corpus;
}

std::vector<std::uint8_t> serialize_corpus(const Corpus& corpus) {
    corpus.validate();
    ByteWriter w;
    w.magic({kCorpusMagic, 4});
    w.u16(kCorpusVersion);
    w.u32(corpus.feature_dim);
    w.u32(static_cast<std::uint32_t>(corpus.items.size()));
    for (const Item& it : corpus.items) {
        if (it.tokens > 0xFFFF) throw ValidationError("item " + std::to_string(it.id) + " has more than 65535 tokens");
        w.u32(it.id);
        w.u8(static_cast<std::uint8_t>(it.modality));
        w.u16(static_cast<std::uint16_t>(it.tokens));
        for (float v : it.features) w.f32(v);
    }
    w.u32(static_cast<std::uint32_t>(corpus.gold.size()));
    for (const GoldPair& g : corpus.gold) {
        w.u32(g.image_id);
        w.u32(g.caption_id);
    }
    return w.bytes();
}

Corpus deserialize_corpus(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic({kCorpusMagic, 4});
    const std::size_t version_at = r.offset();
    if (const auto v = r.u16(); v != kCorpusVersion) {
        throw ParseError("unsupported corpus version " + std::to_string(v) + " at byte offset " +
                         std::to_string(version_at));
    }
    Corpus corpus;
    corpus.feature_dim = r.u32();
    if (corpus.feature_dim == 0) throw ParseError("malformed header: feature dimension 0");
    const std::uint32_t count = r.u32();
    corpus.items.resize(count);
    std::vector<bool> seen(count, false);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t at = r.offset();
        const std::uint32_t id = r.u32();
        if (id >= count || seen[id]) {
            throw ParseError("invalid or duplicate item id " + std::to_string(id) + " at byte offset " +
                             std::to_string(at));
        }
        seen[id] = true;
        Item& it = corpus.items[id];
        it.id = id;
        const std::uint8_t modality = r.u8();
        if (modality > 1) {
            throw ParseError("invalid modality " + std::to_string(modality) + " for item " + std::to_string(id));
        }
        it.modality = static_cast<Modality>(modality);
        it.tokens = r.u16();
        if (it.tokens == 0) throw ParseError("item " + std::to_string(id) + " has zero tokens");
        it.features.resize(it.tokens * corpus.feature_dim);
        for (float& v : it.features) {
            v = r.f32();
            if (!std::isfinite(v)) {
                throw ParseError("non-finite feature in item " + std::to_string(id) + " at byte offset " +
                                 std::to_string(r.offset() - 4));
            }
        }
    }
    const std::uint32_t gold_count = r.u32();
    corpus.gold.reserve(gold_count);
    for (std::uint32_t g = 0; g < gold_count; ++g) {
        GoldPair p{r.u32(), r.u32()};
        for (std::uint32_t id : {p.image_id, p.caption_id}) {
            if (id >= count) throw ParseError("dangling gold id " + std::to_string(id));
        }
        corpus.gold.push_back(p);
    }
    r.expect_end();
    std::sort(corpus.gold.begin(), corpus.gold.end());
    corpus.gold.erase(std::unique(corpus.gold.begin(), corpus.gold.end()), corpus.gold.end());
    try {
        corpus.validate();
    } catch (const ValidationError& e) {
        throw ParseError(e.what());
    }
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    write_file(path, serialize_corpus(corpus));
}

Corpus load_corpus(const std::filesystem::path& path) { return deserialize_corpus(read_file(path)); }

CorpusSplit split(const Corpus& corpus, double train_frac, double dev_frac, std::uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0) || !(dev_frac > 0.0 && dev_frac < 1.0) ||
        !(train_frac + dev_frac < 1.0)) {
        throw ValidationError("split fractions must lie in (0,1) and sum to less than 1");
    }
    std::vector<std::uint32_t> images = corpus.ids_of(Modality::Image);
    const std::size_t n = images.size();
    const auto n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(n) + 1e-9));
    const auto n_dev = static_cast<std::size_t>(std::floor(dev_frac * static_cast<double>(n) + 1e-9));
    if (n_train == 0 || n_dev == 0 || n_train + n_dev >= n) {
        throw ValidationError("split of " + std::to_string(n) + " images would leave a partition empty");
    }
    std::mt19937_64 rng(seed);
    std::shuffle(images.begin(), images.end(), rng);

    std::vector<int> part_of(corpus.items.size(), -1);
    for (std::size_t k = 0; k < n; ++k) part_of[images[k]] = k < n_train ? 0 : (k < n_train + n_dev ? 1 : 2);
    for (const GoldPair& g : corpus.gold) {
        int& p = part_of[g.caption_id];
        if (p != -1 && p != part_of[g.image_id]) {
            throw ValidationError("caption " + std::to_string(g.caption_id) + " is gold for images in different partitions");
        }
        p = part_of[g.image_id];
    }
    // Captions without any gold image stay with the training partition.
    std::vector<std::uint32_t> keep[3];
    for (const Item& it : corpus.items) keep[part_of[it.id] == -1 ? 0 : part_of[it.id]].push_back(it.id);
    for (auto& k : keep) std::sort(k.begin(), k.end());
    return {subset(corpus, keep[0]), subset(corpus, keep[1]), subset(corpus, keep[2])};
}

Corpus concat(const Corpus& base, const Corpus& extra) {
    if (base.feature_dim != extra.feature_dim) throw ValidationError("cannot concatenate corpora of different dimension");
    Corpus out = base;
    const auto offset = static_cast<std::uint32_t>(base.items.size());
    for (Item it : extra.items) {
        it.id += offset;
        out.items.push_back(std::move(it));
    }
    for (GoldPair g : extra.gold) out.gold.push_back({g.image_id + offset, g.caption_id + offset});
    std::sort(out.gold.begin(), out.gold.end());
    return out;
}

std::uint64_t fingerprint(const Corpus& corpus) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : serialize_corpus(corpus)) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace cmrr
