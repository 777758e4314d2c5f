#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mks2/rng.hpp"
#include "mks2/tokenizer.hpp"
#include "mks2/visual.hpp"

namespace mks2 {

// The closed synthetic world: E named entities, each with a fixed attribute
// triple, a 75/25 train/held-out entity split, and the frozen visual basis.
// Everything is a pure function of (world seed, E).
struct World {
    uint64_t seed = 0;
    int n_entities = 0;
    Tokenizer tok;
    std::vector<std::string> names; // entity -> nonce word
    std::vector<int> name_ids;      // entity -> token id
    std::vector<EntityAttrs> attrs;
    std::vector<bool> held_out;
    VisualBasis basis;

    Rng rng() const { return Rng(seed); }

    SyntheticImage image_of(int entity, uint64_t noise_seed) const {
        return SyntheticImage{entity, attrs[static_cast<size_t>(entity)], noise_seed};
    }

    std::vector<int> train_entities() const {
        std::vector<int> out;
        for (int e = 0; e < n_entities; ++e)
            if (!held_out[static_cast<size_t>(e)]) out.push_back(e);
        return out;
    }
    std::vector<int> held_out_entities() const {
        std::vector<int> out;
        for (int e = 0; e < n_entities; ++e)
            if (held_out[static_cast<size_t>(e)]) out.push_back(e);
        return out;
    }
};

inline World build_world(uint64_t seed, int n_entities = 128, int64_t d_img = 64,
                         int64_t img_tokens = 32) {
    if (n_entities < 16) throw config_error("world: need at least 16 entities");
    if (n_entities > kLexiconSize) throw config_error("world: lexicon exhausted");
    World w;
    w.seed = seed;
    w.n_entities = n_entities;
    const Rng rng(seed);

    auto name_perm = rng.permutation("world.names", kLexiconSize);
    w.names.reserve(static_cast<size_t>(n_entities));
    w.name_ids.reserve(static_cast<size_t>(n_entities));
    for (int e = 0; e < n_entities; ++e) {
        const auto& word = w.tok.lexicon_word(static_cast<int>(name_perm[static_cast<size_t>(e)]));
        w.names.push_back(word);
        w.name_ids.push_back(w.tok.lookup(word));
    }

    w.attrs.resize(static_cast<size_t>(n_entities));
    for (int e = 0; e < n_entities; ++e) {
        auto& a = w.attrs[static_cast<size_t>(e)];
        a.color = static_cast<int>(rng.uniform_int("world.color", static_cast<uint64_t>(e), kNumColors));
        a.shape = static_cast<int>(rng.uniform_int("world.shape", static_cast<uint64_t>(e), kNumShapes));
        a.count = 1 + static_cast<int>(rng.uniform_int("world.count", static_cast<uint64_t>(e), kMaxCount));
    }

    // 75% train / 25% held out, chosen by a seeded permutation.
    w.held_out.assign(static_cast<size_t>(n_entities), false);
    auto split_perm = rng.permutation("world.split", n_entities);
    const int n_held = n_entities / 4;
    for (int i = 0; i < n_held; ++i)
        w.held_out[static_cast<size_t>(split_perm[static_cast<size_t>(i)])] = true;

    w.basis = build_visual_basis(rng, d_img, img_tokens, n_entities);
    return w;
}

} // namespace mks2
