#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mks2/model.hpp"

namespace mks2 {

struct Generation {
    std::vector<int> tokens; // emitted tokens, end-of-sequence excluded
    double logprob = 0.0;    // total log-probability, including </s> when ended
    bool ended = false;
};

// Log-probabilities of the next token given already-emitted tokens.
using ScoreFn = std::function<std::vector<float>(const std::vector<int>&)>;

namespace detail {

struct Hypothesis {
    std::vector<int> tokens;
    double logprob = 0.0;
    bool done = false;
};

inline bool hyp_better(const Hypothesis& a, const Hypothesis& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    return a.tokens < b.tokens; // deterministic tie-break
}

} // namespace detail

// Beam search over an arbitrary next-token distribution; beam_size 1 is
// exactly iterated argmax decoding. Hypotheses stop at `eos` or max_new.
inline Generation beam_decode(const ScoreFn& score, int eos, int beam_size, int max_new_tokens) {
    if (beam_size < 1) throw config_error("beam_decode: beam_size must be >= 1");

    std::vector<detail::Hypothesis> beams = {detail::Hypothesis{}};
    for (int step = 0; step < max_new_tokens; ++step) {
        std::vector<detail::Hypothesis> candidates;
        bool any_live = false;
        for (const auto& h : beams) {
            if (h.done) {
                candidates.push_back(h);
                continue;
            }
            any_live = true;
            const std::vector<float> lp = score(h.tokens);
            std::vector<int> idx(lp.size());
            for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
            const size_t keep = std::min<size_t>(static_cast<size_t>(beam_size), idx.size());
            std::partial_sort(idx.begin(), idx.begin() + static_cast<int64_t>(keep), idx.end(),
                              [&](int a, int b) {
                                  if (lp[static_cast<size_t>(a)] != lp[static_cast<size_t>(b)])
                                      return lp[static_cast<size_t>(a)] > lp[static_cast<size_t>(b)];
                                  return a < b;
                              });
            for (size_t t = 0; t < keep; ++t) {
                detail::Hypothesis next = h;
                next.logprob += lp[static_cast<size_t>(idx[t])];
                if (idx[t] == eos)
                    next.done = true;
                else
                    next.tokens.push_back(idx[t]);
                candidates.push_back(std::move(next));
            }
        }
        if (!any_live) break;
        std::stable_sort(candidates.begin(), candidates.end(), detail::hyp_better);
        if (candidates.size() > static_cast<size_t>(beam_size))
            candidates.resize(static_cast<size_t>(beam_size));
        beams = std::move(candidates);
    }

    const detail::Hypothesis* best = nullptr;
    for (const auto& h : beams)
        if (h.done && (!best || detail::hyp_better(h, *best))) best = &h;
    if (!best)
        for (const auto& h : beams)
            if (!best || detail::hyp_better(h, *best)) best = &h;

    Generation g;
    g.tokens = best->tokens;
    g.logprob = best->logprob;
    g.ended = best->done;
    return g;
}

// Scoring function backed by a model forward over prefix + emitted tokens.
inline ScoreFn model_score_fn(Model& model, const EmbeddedSequence& prefix,
                              const ForwardOptions& opt) {
    return [&model, prefix, opt](const std::vector<int>& extra) {
        EmbeddedSequence seq;
        seq.layout = prefix.layout;
        if (extra.empty()) {
            seq.embedded = prefix.embedded;
        } else {
            seq.embedded = concat_rows({prefix.embedded, model.token_embeddings(extra)});
            for (int id : extra) {
                seq.layout.token_ids.push_back(id);
                seq.layout.loss_mask.push_back(0);
            }
        }
        ForwardResult r = model.forward(seq, opt);
        const int64_t m = r.logits.shape()[0];
        Tensor row = log_softmax_rows(slice_rows(r.logits, m - 1, m));
        return row.vec();
    };
}

inline Generation generate(Model& model, const EmbeddedSequence& prefix, const ForwardOptions& opt,
                           int beam_size, int max_new_tokens) {
    return beam_decode(model_score_fn(model, prefix, opt), Tokenizer::eos_id, beam_size,
                       max_new_tokens);
}

} // namespace mks2
