#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "mks2/common.hpp"

namespace mks2 {

enum class Stage1Insertion { sequential, parallel };

inline const char* to_string(Stage1Insertion s) {
    return s == Stage1Insertion::sequential ? "sequential" : "parallel";
}

// All architectural hyperparameters. Canonically serializable so that a
// checkpoint can pin the exact model it was trained with.
struct ModelConfig {
    int64_t d_model = 128;
    int64_t n_blocks = 4;
    int64_t n_heads = 4;
    int64_t vocab_size = 0; // 0: take the tokenizer's size at construction
    int64_t max_seq_len = 128;
    double mvm_ratio = 0.25;   // visual-memory middle dim as fraction of d_model
    bool mvm_gated = true;     // gated three-matrix form vs plain two-matrix
    double mlp_ratio = 2.0;    // textual-expert middle dim as fraction of d_model
    int64_t lora_rank = 8;
    double lora_alpha = 16.0;
    int64_t img_token_count = 32;
    int64_t d_img = 64;
    Stage1Insertion stage1_insertion = Stage1Insertion::sequential;
    uint64_t seed = 1;

    int64_t mvm_inner() const {
        return static_cast<int64_t>(std::llround(mvm_ratio * static_cast<double>(d_model)));
    }
    int64_t mlp_inner() const {
        return static_cast<int64_t>(std::llround(mlp_ratio * static_cast<double>(d_model)));
    }
    int64_t d_head() const { return d_model / n_heads; }

    void validate() const {
        if (d_model <= 0 || n_blocks <= 0 || n_heads <= 0)
            throw config_error("config: dimensions must be positive");
        if (d_model % n_heads != 0)
            throw config_error("config: d_model must be divisible by n_heads");
        const double exact = mvm_ratio * static_cast<double>(d_model);
        if (std::abs(exact - std::llround(exact)) > 1e-9)
            throw config_error("config: mvm_ratio * d_model must be integral");
        if (mvm_inner() < 1) throw config_error("config: visual-memory middle dim must be >= 1");
        if (mlp_inner() < 1) throw config_error("config: mlp middle dim must be >= 1");
        if (img_token_count < 1) throw config_error("config: img_token_count must be >= 1");
        if (lora_rank < 1) throw config_error("config: lora_rank must be >= 1");
        if (vocab_size < 2) throw config_error("config: vocab_size must be >= 2");
        if (max_seq_len < 4) throw config_error("config: max_seq_len must be >= 4");
        if (d_img < 1) throw config_error("config: d_img must be >= 1");
    }

    std::string canonical() const {
        char buf[512];
        std::snprintf(buf, sizeof(buf),
                      "d_model=%lld;n_blocks=%lld;n_heads=%lld;vocab_size=%lld;max_seq_len=%lld;"
                      "mvm_ratio=%.9g;mvm_gated=%d;mlp_ratio=%.9g;lora_rank=%lld;lora_alpha=%.9g;"
                      "img_token_count=%lld;d_img=%lld;stage1_insertion=%s;seed=%llu",
                      static_cast<long long>(d_model), static_cast<long long>(n_blocks),
                      static_cast<long long>(n_heads), static_cast<long long>(vocab_size),
                      static_cast<long long>(max_seq_len), mvm_ratio, mvm_gated ? 1 : 0, mlp_ratio,
                      static_cast<long long>(lora_rank), lora_alpha,
                      static_cast<long long>(img_token_count), static_cast<long long>(d_img),
                      to_string(stage1_insertion), static_cast<unsigned long long>(seed));
        return buf;
    }

    uint64_t hash() const { return fnv1a(canonical()); }

    // Llama-2-7b-shaped preset used by the parameter-accounting surface.
    static ModelConfig llama2_7b() {
        ModelConfig c;
        c.d_model = 4096;
        c.n_blocks = 32;
        c.n_heads = 32;
        c.vocab_size = 32000;
        c.max_seq_len = 4096;
        c.mvm_ratio = 0.25;
        c.mvm_gated = true;
        c.mlp_ratio = 11008.0 / 4096.0;
        c.lora_rank = 8;
        c.lora_alpha = 16.0;
        c.img_token_count = 32;
        c.d_img = 64;
        return c;
    }

    static ModelConfig desk() { return ModelConfig{}; }

    static ModelConfig preset(const std::string& name) {
        if (name == "llama2-7b") return llama2_7b();
        if (name == "desk") return desk();
        throw config_error("unknown preset: " + name);
    }
};

} // namespace mks2
