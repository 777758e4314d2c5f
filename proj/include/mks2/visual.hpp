#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mks2/ops.hpp"
#include "mks2/rng.hpp"
#include "mks2/tokenizer.hpp"

namespace mks2 {

struct EntityAttrs {
    int color = 0; // [0, kNumColors)
    int shape = 0; // [0, kNumShapes)
    int count = 1; // [1, kMaxCount]
};

struct SyntheticImage {
    int entity_id = 0;
    EntityAttrs attrs;
    uint64_t noise_seed = 0;
};

// Deterministic stand-in for a frozen pretrained visual encoder. Soft tokens
// carry the attribute values redundantly (one token group per attribute,
// plus an entity-identity group) so captions are decodable from the image
// alone; the global vector depends on the attribute triple only.
struct VisualBasis {
    int64_t d_img = 0;
    int64_t img_tokens = 0;
    int n_entities = 0;
    int attempt = 0; // basis regeneration counter (separation retries)
    std::vector<float> color_vecs;  // kNumColors x d_img, unit rows
    std::vector<float> shape_vecs;  // kNumShapes x d_img
    std::vector<float> count_vecs;  // kMaxCount x d_img
    std::vector<float> entity_vecs; // n_entities x d_img
    std::vector<float> globals;     // kNumColors*kNumShapes*kMaxCount x d_img, unit rows
    uint64_t jitter_seed = 0;

    static int64_t triple_index(const EntityAttrs& a) {
        return (static_cast<int64_t>(a.color) * kNumShapes + a.shape) * kMaxCount + (a.count - 1);
    }

    const float* global_of(const EntityAttrs& a) const {
        return globals.data() + triple_index(a) * d_img;
    }
};

namespace detail {

inline void fill_unit_rows(const Rng& rng, const std::string& label, std::vector<float>& out,
                           int64_t rows, int64_t w) {
    out.assign(static_cast<size_t>(rows * w), 0.0f);
    for (int64_t r = 0; r < rows; ++r) {
        double nm = 0.0;
        for (int64_t j = 0; j < w; ++j) {
            const double v = rng.normal(label, static_cast<uint64_t>(r * w + j));
            out[static_cast<size_t>(r * w + j)] = static_cast<float>(v);
            nm += v * v;
        }
        nm = std::sqrt(nm);
        if (nm < 1e-9) nm = 1.0;
        for (int64_t j = 0; j < w; ++j)
            out[static_cast<size_t>(r * w + j)] = static_cast<float>(
                out[static_cast<size_t>(r * w + j)] / nm);
    }
}

} // namespace detail

// Builds the per-world basis. If any two attribute triples end up with
// global cosine >= max_pair_cos the whole basis is regenerated from the
// next attempt index (deterministically). The separation bound is only
// enforceable with enough room; below 32 dims the first basis is kept.
inline VisualBasis build_visual_basis(const Rng& world_rng, int64_t d_img, int64_t img_tokens,
                                      int n_entities, float max_pair_cos = 0.8f) {
    VisualBasis b;
    b.d_img = d_img;
    b.img_tokens = img_tokens;
    b.n_entities = n_entities;
    const int64_t n_triples = static_cast<int64_t>(kNumColors) * kNumShapes * kMaxCount;
    for (int attempt = 0;; ++attempt) {
        if (attempt > 64)
            throw numeric_error("visual basis: could not reach global separation; d_img too small");
        Rng rng = world_rng.split("visual.basis." + std::to_string(attempt));
        detail::fill_unit_rows(rng, "color", b.color_vecs, kNumColors, d_img);
        detail::fill_unit_rows(rng, "shape", b.shape_vecs, kNumShapes, d_img);
        detail::fill_unit_rows(rng, "count", b.count_vecs, kMaxCount, d_img);
        detail::fill_unit_rows(rng, "entity", b.entity_vecs, n_entities, d_img);
        detail::fill_unit_rows(rng, "global", b.globals, n_triples, d_img);
        b.jitter_seed = rng.bits("jitter", 0);
        b.attempt = attempt;

        bool ok = true;
        if (d_img < 32) return b;
        for (int64_t i = 0; i < n_triples && ok; ++i) {
            const float* gi = b.globals.data() + i * d_img;
            for (int64_t j = i + 1; j < n_triples && ok; ++j) {
                const float* gj = b.globals.data() + j * d_img;
                double dot = 0.0;
                for (int64_t t = 0; t < d_img; ++t) dot += static_cast<double>(gi[t]) * gj[t];
                if (dot >= max_pair_cos) ok = false;
            }
        }
        if (ok) return b;
    }
}

struct VisualEncoding {
    Tensor soft_tokens;        // img_tokens x d_img, constant (never trainable)
    std::vector<float> global; // d_img, unit norm
};

inline VisualEncoding encode_image(const SyntheticImage& img, const VisualBasis& basis) {
    const int64_t w = basis.d_img, rows = basis.img_tokens;
    if (img.attrs.color < 0 || img.attrs.color >= kNumColors || img.attrs.shape < 0 ||
        img.attrs.shape >= kNumShapes || img.attrs.count < 1 || img.attrs.count > kMaxCount)
        throw degenerate_error("encode_image: attributes out of range");
    if (img.entity_id < 0 || img.entity_id >= basis.n_entities)
        throw degenerate_error("encode_image: entity outside world");

    std::vector<float> soft(static_cast<size_t>(rows * w));
    const Rng jitter(basis.jitter_seed ^ img.noise_seed);
    // Per-image jitter with total norm ~0.25 against unit basis rows.
    const float jscale = 0.25f / std::sqrt(static_cast<float>(w));
    for (int64_t r = 0; r < rows; ++r) {
        const float* base = nullptr;
        switch (r % 4) {
            case 0: base = basis.color_vecs.data() + img.attrs.color * w; break;
            case 1: base = basis.shape_vecs.data() + img.attrs.shape * w; break;
            case 2: base = basis.count_vecs.data() + (img.attrs.count - 1) * w; break;
            default: base = basis.entity_vecs.data() + img.entity_id * w; break;
        }
        for (int64_t j = 0; j < w; ++j) {
            const double noise = jitter.normal("tok", static_cast<uint64_t>(r * w + j));
            soft[static_cast<size_t>(r * w + j)] =
                base[j] + jscale * static_cast<float>(noise);
        }
    }
    VisualEncoding enc;
    enc.soft_tokens = Tensor::from({rows, w}, std::move(soft), false);
    const float* g = basis.global_of(img.attrs);
    enc.global.assign(g, g + w);
    return enc;
}

// The visual mapping network: projects encoder-space soft tokens into the
// language model's embedding space.
inline Tensor map_to_lm(const VisualEncoding& enc, const Tensor& vmn) {
    if (vmn.shape().size() != 2 || vmn.shape()[0] != enc.soft_tokens.shape()[1])
        throw shape_error("map_to_lm: mapping network must be d_img x d_model");
    return matmul(enc.soft_tokens, vmn);
}

inline constexpr float kTauMin = 0.01f;
inline constexpr float kTauMax = 1.0f;
inline const float kLogTauInit = std::log(0.07f);

// h_e (1 x d_model) -> retrieval space (1 x d_img).
inline Tensor project_end_token(const Tensor& h_e, const Tensor& projection) {
    if (projection.shape().size() != 2)
        throw shape_error("project_end_token: projection must be d_model x d_img");
    return matmul(h_e, projection);
}

// Applied after each optimizer step: tau = exp(log_tau) stays in
// [kTauMin, kTauMax].
inline void clamp_log_tau(Tensor& log_tau) {
    float& v = log_tau.data()[0];
    const float lo = std::log(kTauMin), hi = std::log(kTauMax);
    if (v < lo) v = lo;
    if (v > hi) v = hi;
}

} // namespace mks2
