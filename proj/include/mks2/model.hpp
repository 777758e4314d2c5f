#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mks2/config.hpp"
#include "mks2/ops.hpp"
#include "mks2/param_store.hpp"
#include "mks2/rng.hpp"
#include "mks2/tokenizer.hpp"
#include "mks2/visual.hpp"

namespace mks2 {

enum class ForwardStage { stage1, stage2 };
enum class RouterMode { learned, force_visual, force_textual };

struct ForwardOptions {
    ForwardStage stage = ForwardStage::stage1;
    RouterMode router = RouterMode::learned;
    bool include_mvm = true; // false: the plain reference transformer
    bool moe = true;         // stage2 only: false keeps the stage-1 topology
                             // and adapts the MLP expert alone
};

// Token/image layout of one spliced sequence. Image slot positions carry
// token id -1; the loss mask is true exactly on response positions.
struct SpliceLayout {
    std::vector<int> token_ids;
    int64_t img_begin = -1;
    int64_t img_count = 0;
    std::vector<uint8_t> loss_mask;

    int64_t length() const { return static_cast<int64_t>(token_ids.size()); }
    bool in_image_span(int64_t i) const {
        return img_begin >= 0 && i >= img_begin && i < img_begin + img_count;
    }
    int64_t loss_positions() const {
        int64_t n = 0;
        for (auto m : loss_mask) n += m ? 1 : 0;
        return n;
    }
};

struct EmbeddedSequence {
    SpliceLayout layout;
    Tensor embedded; // m x d_model
};

struct BlockActivations {
    Tensor h_s;    // post-attention hidden state (residual included)
    Tensor h_ve;   // visual expert output
    Tensor h_te;   // textual expert output
    Tensor router; // m x 2 mixture weights
    Tensor h_mix;  // combined expert output
    Tensor h_out;  // block output
};

struct ForwardResult {
    Tensor logits;       // m x vocab
    Tensor final_states; // m x d_model, after the final layernorm
    std::vector<BlockActivations> blocks;
};

enum class ParamSelector { mvm, lora, router, all, trainable_stage1, trainable_stage2 };

// Exact parameter counts from the configuration alone (no allocation), so
// the accounting surface works for full-scale presets.
inline int64_t param_count(const ModelConfig& c, ParamSelector sel) {
    const int64_t d = c.d_model;
    const int64_t mvm = c.n_blocks * (c.mvm_gated ? 3 : 2) * d * c.mvm_inner();
    const int64_t lora = c.n_blocks * 2 * 2 * c.lora_rank * d; // two experts, A and B each r*d
    const int64_t router = c.n_blocks * (2 * d + 2);
    switch (sel) {
        case ParamSelector::mvm: return mvm;
        case ParamSelector::lora: return lora;
        case ParamSelector::router: return router;
        case ParamSelector::trainable_stage1:
            // visual memory + mapping network + retrieval head + image tag embeddings
            return mvm + c.d_img * d + (d * c.d_img + 1) + 2 * d;
        case ParamSelector::trainable_stage2: return lora + router;
        case ParamSelector::all: {
            int64_t n = 0;
            n += c.vocab_size * d;     // token embeddings
            n += c.max_seq_len * d;    // positions
            n += 2 * d;                // image tag embeddings
            n += c.vocab_size * d;     // output head
            n += 2 * d;                // final norm
            n += c.n_blocks * (4 * d * d); // attention
            n += c.n_blocks * 4 * d;       // two layernorm affines per block
            n += c.n_blocks * 3 * d * c.mlp_inner();
            n += mvm + router + lora;
            n += c.d_img * d;          // visual mapping network
            n += d * c.d_img + 1;      // retrieval head
            return n;
        }
    }
    return 0;
}

inline const std::vector<std::string>& stage1_trainable_patterns() {
    static const std::vector<std::string> p = {"block*.mvm.*", "vmn.*", "retrieval.*",
                                               "embed.img_start", "embed.img_end"};
    return p;
}

inline const std::vector<std::string>& stage2_trainable_patterns() {
    static const std::vector<std::string> p = {"block*.lora.*", "block*.router.*"};
    return p;
}

// Trainable set for the no-mixture ablation: only the textual expert's adapter.
inline const std::vector<std::string>& stage2_no_moe_trainable_patterns() {
    static const std::vector<std::string> p = {"block*.lora.mlp.*"};
    return p;
}

class Model {
public:
    Model(ModelConfig cfg, const Tokenizer& tok) : cfg_(cfg), tok_(tok) {
        if (cfg_.vocab_size == 0) cfg_.vocab_size = tok.vocab_size();
        if (cfg_.vocab_size != tok.vocab_size())
            throw config_error("model: config vocab_size disagrees with tokenizer");
        cfg_.validate();
        register_params_();
        store_.finalize();
    }

    const ModelConfig& config() const { return cfg_; }
    const Tokenizer& tokenizer() const { return tok_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }

    static std::string block_prefix(int64_t b) { return "block" + std::to_string(b) + "."; }

    // Fresh visual memory, exactly as at construction (ablation control).
    void reinit_mvm() {
        const Rng rng = Rng(cfg_.seed).split("init");
        for (int64_t b = 0; b < cfg_.n_blocks; ++b) {
            const std::string pre = block_prefix(b) + "mvm.";
            for (const char* leaf : {"gate", "up", "down"}) {
                const std::string name = pre + leaf;
                if (!store_.contains(name)) continue;
                Tensor& t = store_.at(name);
                if (std::string(leaf) == "down")
                    std::fill(t.vec().begin(), t.vec().end(), 0.0f);
                else
                    rng.fill_normal(name, t.data(), t.vec().size(), 0.02);
            }
        }
    }

    // ----- sequence assembly -------------------------------------------------

    Tensor token_embeddings(const std::vector<int>& ids) {
        return embedding_gather(store_.at("embed.tok"), ids);
    }

    // [INST] <img-start> IMG <img-end> prompt [/INST] response, with the
    // image block omitted entirely for text-only records.
    EmbeddedSequence splice_image(const std::vector<int>& prompt_ids, const Tensor& image_embeddings,
                                  const std::vector<int>& response_ids) {
        const bool has_img = image_embeddings.defined();
        if (has_img && image_embeddings.shape()[1] != cfg_.d_model)
            throw shape_error("splice_image: image embeddings must be in model space");

        EmbeddedSequence seq;
        std::vector<Tensor> parts;
        auto push_tokens = [&](const std::vector<int>& ids, bool loss) {
            if (ids.empty()) return;
            parts.push_back(token_embeddings(ids));
            for (int id : ids) {
                seq.layout.token_ids.push_back(id);
                seq.layout.loss_mask.push_back(loss ? 1 : 0);
            }
        };

        push_tokens({Tokenizer::inst_open_id}, false);
        if (has_img) {
            parts.push_back(store_.at("embed.img_start"));
            seq.layout.token_ids.push_back(Tokenizer::img_start_id);
            seq.layout.loss_mask.push_back(0);
            seq.layout.img_begin = static_cast<int64_t>(seq.layout.token_ids.size());
            seq.layout.img_count = image_embeddings.shape()[0];
            parts.push_back(image_embeddings);
            for (int64_t i = 0; i < seq.layout.img_count; ++i) {
                seq.layout.token_ids.push_back(-1);
                seq.layout.loss_mask.push_back(0);
            }
            parts.push_back(store_.at("embed.img_end"));
            seq.layout.token_ids.push_back(Tokenizer::img_end_id);
            seq.layout.loss_mask.push_back(0);
        }
        push_tokens(prompt_ids, false);
        push_tokens({Tokenizer::inst_close_id}, false);
        push_tokens(response_ids, true);

        if (seq.layout.length() > cfg_.max_seq_len)
            throw shape_error("splice_image: sequence length " +
                              std::to_string(seq.layout.length()) + " exceeds max_seq_len " +
                              std::to_string(cfg_.max_seq_len));
        seq.embedded = concat_rows(parts);
        return seq;
    }

    // <begin> ids — the image-free pass (retrieval, plain scoring).
    EmbeddedSequence plain_sequence(const std::vector<int>& ids) {
        EmbeddedSequence seq;
        std::vector<int> all = {Tokenizer::begin_id};
        all.insert(all.end(), ids.begin(), ids.end());
        if (static_cast<int64_t>(all.size()) > cfg_.max_seq_len)
            throw shape_error("plain_sequence: sequence exceeds max_seq_len");
        seq.layout.token_ids = all;
        seq.layout.loss_mask.assign(all.size(), 0);
        seq.embedded = token_embeddings(all);
        return seq;
    }

    // Image pathway: frozen synthetic encoding projected by the trainable
    // visual mapping network.
    Tensor image_to_model_space(const VisualEncoding& enc) {
        return map_to_lm(enc, store_.at("vmn.proj"));
    }

    // ----- forward -----------------------------------------------------------

    ForwardResult forward(const EmbeddedSequence& seq, const ForwardOptions& opt) {
        const int64_t m = seq.embedded.shape()[0];
        if (m > cfg_.max_seq_len)
            throw shape_error("forward: sequence length exceeds max_seq_len");
        if (opt.stage == ForwardStage::stage2 && !store_.contains("block0.lora.mvm.a"))
            throw config_error("forward: stage-2 requested but adapter factors are missing");

        ForwardResult out;
        out.blocks.reserve(static_cast<size_t>(cfg_.n_blocks));
        Tensor mask = causal_mask(m);
        Tensor h = add(seq.embedded, slice_rows(store_.at("embed.pos"), 0, m));

        for (int64_t b = 0; b < cfg_.n_blocks; ++b) {
            const std::string pre = block_prefix(b);
            BlockActivations acts;

            // Attention sublayer.
            Tensor x = layernorm(h, store_.at(pre + "ln1.gain"), store_.at(pre + "ln1.bias"));
            Tensor q = matmul(x, store_.at(pre + "attn.wq"));
            Tensor k = matmul(x, store_.at(pre + "attn.wk"));
            Tensor v = matmul(x, store_.at(pre + "attn.wv"));
            const int64_t dh = cfg_.d_head();
            std::vector<Tensor> heads;
            heads.reserve(static_cast<size_t>(cfg_.n_heads));
            const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));
            for (int64_t hh = 0; hh < cfg_.n_heads; ++hh) {
                Tensor qh = slice_cols(q, hh * dh, (hh + 1) * dh);
                Tensor kh = slice_cols(k, hh * dh, (hh + 1) * dh);
                Tensor vh = slice_cols(v, hh * dh, (hh + 1) * dh);
                Tensor scores = add(scale(matmul_nt(qh, kh), att_scale), mask);
                heads.push_back(matmul(softmax(scores, 1), vh));
            }
            Tensor attn_out = matmul(concat_cols(heads), store_.at(pre + "attn.wo"));
            acts.h_s = add(h, attn_out);

            Tensor xs = layernorm(acts.h_s, store_.at(pre + "ln2.gain"),
                                  store_.at(pre + "ln2.bias"));

            if (opt.stage == ForwardStage::stage1 || !opt.moe) {
                const bool lora_on_mlp = opt.stage == ForwardStage::stage2;
                if (cfg_.stage1_insertion == Stage1Insertion::sequential) {
                    Tensor h1 = opt.include_mvm ? add(acts.h_s, mvm_(pre, xs)) : acts.h_s;
                    Tensor xs2 = opt.include_mvm
                                     ? layernorm(h1, store_.at(pre + "ln2.gain"),
                                                 store_.at(pre + "ln2.bias"))
                                     : xs;
                    Tensor ff = mlp_(pre, xs2);
                    if (lora_on_mlp) ff = add(ff, lora_bypass_(pre + "lora.mlp.", xs2));
                    acts.h_out = add(h1, ff);
                } else {
                    Tensor ff = mlp_(pre, xs);
                    if (lora_on_mlp) ff = add(ff, lora_bypass_(pre + "lora.mlp.", xs));
                    Tensor sum = add(acts.h_s, ff);
                    acts.h_out = opt.include_mvm ? add(sum, mvm_(pre, xs)) : sum;
                }
            } else {
                // Soft two-expert mixture, token level.
                acts.h_ve = add(mvm_(pre, xs), lora_bypass_(pre + "lora.mvm.", xs));
                acts.h_te = add(mlp_(pre, xs), lora_bypass_(pre + "lora.mlp.", xs));
                switch (opt.router) {
                    case RouterMode::learned: {
                        Tensor logits = add_row_broadcast(matmul(acts.h_s, store_.at(pre + "router.w")),
                                                          store_.at(pre + "router.b"));
                        acts.router = softmax(logits, 1);
                        break;
                    }
                    case RouterMode::force_visual: {
                        std::vector<float> s(static_cast<size_t>(m * 2), 0.0f);
                        for (int64_t i = 0; i < m; ++i) s[static_cast<size_t>(i * 2)] = 1.0f;
                        acts.router = Tensor::from({m, 2}, std::move(s), false);
                        break;
                    }
                    case RouterMode::force_textual: {
                        std::vector<float> s(static_cast<size_t>(m * 2), 0.0f);
                        for (int64_t i = 0; i < m; ++i) s[static_cast<size_t>(i * 2 + 1)] = 1.0f;
                        acts.router = Tensor::from({m, 2}, std::move(s), false);
                        break;
                    }
                }
                Tensor s1 = reshape(slice_cols(acts.router, 0, 1), {m});
                Tensor s2 = reshape(slice_cols(acts.router, 1, 2), {m});
                acts.h_mix = add(scale_rows(acts.h_ve, s1), scale_rows(acts.h_te, s2));
                acts.h_out = add(acts.h_s, acts.h_mix);
            }

            h = acts.h_out;
            out.blocks.push_back(std::move(acts));
        }

        out.final_states = layernorm(h, store_.at("final_norm.gain"), store_.at("final_norm.bias"));
        out.logits = matmul_nt(out.final_states, store_.at("head.out"));
        return out;
    }

private:
    Tensor mvm_(const std::string& pre, const Tensor& x) {
        if (cfg_.mvm_gated) {
            Tensor g = silu(matmul(x, store_.at(pre + "mvm.gate")));
            Tensor u = matmul(x, store_.at(pre + "mvm.up"));
            return matmul(mul(g, u), store_.at(pre + "mvm.down"));
        }
        return matmul(silu(matmul(x, store_.at(pre + "mvm.up"))), store_.at(pre + "mvm.down"));
    }

    Tensor mlp_(const std::string& pre, const Tensor& x) {
        Tensor g = silu(matmul(x, store_.at(pre + "mlp.gate")));
        Tensor u = matmul(x, store_.at(pre + "mlp.up"));
        return matmul(mul(g, u), store_.at(pre + "mlp.down"));
    }

    // Low-rank additive adapter around an expert's d->d mapping:
    // (alpha/r) * x A^T B^T with A: r x d, B: d x r.
    Tensor lora_bypass_(const std::string& pre, const Tensor& x) {
        Tensor a = store_.at(pre + "a");
        Tensor b = store_.at(pre + "b");
        const float s = static_cast<float>(cfg_.lora_alpha / static_cast<double>(cfg_.lora_rank));
        return scale(matmul(matmul_nt(x, a), transpose(b)), s);
    }

    void register_params_() {
        const Rng rng = Rng(cfg_.seed).split("init");
        const int64_t d = cfg_.d_model;

        auto normal = [&](const std::string& name, Shape shape, double std) {
            Tensor t = Tensor::zeros(std::move(shape));
            rng.fill_normal(name, t.data(), t.vec().size(), std);
            store_.register_param(name, std::move(t));
        };
        auto zeros = [&](const std::string& name, Shape shape) {
            store_.register_param(name, Tensor::zeros(std::move(shape)));
        };
        auto ones = [&](const std::string& name, Shape shape) {
            Tensor t = Tensor::zeros(std::move(shape));
            std::fill(t.vec().begin(), t.vec().end(), 1.0f);
            store_.register_param(name, std::move(t));
        };

        normal("embed.tok", {cfg_.vocab_size, d}, 0.02);
        normal("embed.pos", {cfg_.max_seq_len, d}, 0.02);
        normal("embed.img_start", {1, d}, 0.02);
        normal("embed.img_end", {1, d}, 0.02);
        // The output head gets a wider init: with a frozen readout, logits
        // through the final layernorm must be able to separate classes.
        normal("head.out", {cfg_.vocab_size, d}, 1.0 / std::sqrt(static_cast<double>(d)));
        ones("final_norm.gain", {d});
        zeros("final_norm.bias", {d});

        for (int64_t b = 0; b < cfg_.n_blocks; ++b) {
            const std::string pre = block_prefix(b);
            for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
                normal(pre + w, {d, d}, 0.02);
            ones(pre + "ln1.gain", {d});
            zeros(pre + "ln1.bias", {d});
            ones(pre + "ln2.gain", {d});
            zeros(pre + "ln2.bias", {d});
            normal(pre + "mlp.gate", {d, cfg_.mlp_inner()}, 0.02);
            normal(pre + "mlp.up", {d, cfg_.mlp_inner()}, 0.02);
            normal(pre + "mlp.down", {cfg_.mlp_inner(), d}, 0.02);
            // Zero-initialized down-projection: the injected memory is an
            // exact no-op at construction.
            if (cfg_.mvm_gated) normal(pre + "mvm.gate", {d, cfg_.mvm_inner()}, 0.02);
            normal(pre + "mvm.up", {d, cfg_.mvm_inner()}, 0.02);
            zeros(pre + "mvm.down", {cfg_.mvm_inner(), d});
            zeros(pre + "router.w", {d, 2});
            zeros(pre + "router.b", {2});
            normal(pre + "lora.mvm.a", {cfg_.lora_rank, d}, 0.02);
            zeros(pre + "lora.mvm.b", {d, cfg_.lora_rank});
            normal(pre + "lora.mlp.a", {cfg_.lora_rank, d}, 0.02);
            zeros(pre + "lora.mlp.b", {d, cfg_.lora_rank});
        }

        normal("vmn.proj", {cfg_.d_img, d}, 0.02);
        normal("retrieval.proj", {d, cfg_.d_img}, 0.02);
        store_.register_param("retrieval.log_tau", Tensor::scalar(kLogTauInit));
    }

    ModelConfig cfg_;
    Tokenizer tok_;
    ParamStore store_;
};

// Factored low-rank application, exactly as the adapter computes it:
// W0 x + (alpha/r) B (A x), with A: r x d_in, B: d_out x r, x: d_in.
inline Tensor lora_apply(const Tensor& w0, const Tensor& a, const Tensor& b, const Tensor& x,
                         double alpha, int64_t r) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[0] != r || b.shape()[1] != r)
        throw shape_error("lora_apply: A must be r x d_in and B d_out x r");
    if (a.shape()[1] != x.numel() || w0.shape()[1] != x.numel() || w0.shape()[0] != b.shape()[0])
        throw shape_error("lora_apply: dimension mismatch");
    Tensor xc = reshape(x, {x.numel(), 1});
    Tensor base = matmul(w0, xc);
    Tensor delta = scale(matmul(b, matmul(a, xc)), static_cast<float>(alpha / static_cast<double>(r)));
    return reshape(add(base, delta), {w0.shape()[0]});
}

} // namespace mks2
