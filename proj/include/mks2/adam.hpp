#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mks2/param_store.hpp"

namespace mks2 {

struct AdamConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// Adam with bias correction. Moments exist per trainable tensor; the step
// count is global and increases by exactly one per step.
struct AdamState {
    AdamConfig cfg;
    int64_t t = 0;
    struct Moments {
        std::vector<float> m, v;
    };
    std::map<std::string, Moments> moments;

    // Applies one update to every trainable entry. Entries without a
    // gradient are a contract violation; frozen entries are untouched
    // (bit-for-bit) no matter what gradients are lying around.
    void step(ParamStore& store, float lr_scale = 1.0f) {
        ++t;
        const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(t));
        for (auto& [name, entry] : store) {
            if (!entry.trainable) continue;
            Tensor& p = entry.tensor;
            if (p.grad().empty())
                throw contract_error("adam: missing gradient for trainable tensor '" + name + "'");
            auto& mo = moments[name];
            if (mo.m.empty()) {
                mo.m.assign(p.vec().size(), 0.0f);
                mo.v.assign(p.vec().size(), 0.0f);
            }
            const float lr = cfg.lr * lr_scale;
            float* w = p.data();
            const std::vector<float>& g = p.grad();
            for (size_t i = 0; i < g.size(); ++i) {
                mo.m[i] = cfg.beta1 * mo.m[i] + (1.0f - cfg.beta1) * g[i];
                mo.v[i] = cfg.beta2 * mo.v[i] + (1.0f - cfg.beta2) * g[i] * g[i];
                const double mhat = mo.m[i] / bc1;
                const double vhat = mo.v[i] / bc2;
                w[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
            }
        }
    }
};

} // namespace mks2
