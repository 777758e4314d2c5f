#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "mks2/ops.hpp"
#include "mks2/param_store.hpp"

namespace mks2 {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_tensor;
    int64_t worst_index = -1;
    double worst_analytic = 0.0, worst_numeric = 0.0;
};

// Relative error with a unit floor, so near-zero gradients are judged on an
// absolute scale (32-bit central differences are too noisy for anything
// stricter there).
inline double grad_rel_err(double analytic, double numeric) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

// Central-difference check of a scalar-valued graph against reverse-mode
// gradients. `f` must rebuild the graph from the given leaves on every call.
// For large tensors only `samples_per_tensor` evenly spread elements are
// perturbed.
inline GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                  double step = 1e-3, int64_t samples_per_tensor = 0,
                                  std::vector<std::string> names = {}) {
    for (auto& l : leaves) {
        l.node().requires_grad = true;
        l.zero_grad();
    }
    Tensor out = f();
    if (!std::isfinite(out.item())) throw numeric_error("grad_check: non-finite objective");
    out.backward();

    std::vector<std::vector<float>> analytic;
    analytic.reserve(leaves.size());
    for (auto& l : leaves) {
        l.node().ensure_grad();
        analytic.push_back(l.grad());
    }

    GradCheckResult res;
    for (size_t li = 0; li < leaves.size(); ++li) {
        Tensor& leaf = leaves[li];
        const int64_t n = leaf.numel();
        const int64_t samples = (samples_per_tensor <= 0 || samples_per_tensor >= n)
                                    ? n
                                    : samples_per_tensor;
        for (int64_t s = 0; s < samples; ++s) {
            const int64_t idx = (samples == n) ? s : (s * n) / samples;
            float* slot = leaf.data() + idx;
            const float orig = *slot;
            *slot = static_cast<float>(orig + step);
            const double fp = static_cast<double>(f().item());
            *slot = static_cast<float>(orig - step);
            const double fm = static_cast<double>(f().item());
            *slot = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[li][static_cast<size_t>(idx)];
            const double rel = grad_rel_err(a, numeric);
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_tensor = li < names.size() ? names[li] : ("leaf" + std::to_string(li));
                res.worst_index = idx;
                res.worst_analytic = a;
                res.worst_numeric = numeric;
            }
        }
    }
    return res;
}

// Store-based variant: checks the gradient of `f` wrt every currently
// trainable tensor matching `names` (all trainables when empty).
inline GradCheckResult grad_check_store(const std::function<Tensor()>& f, ParamStore& store,
                                        std::vector<std::string> names = {}, double step = 1e-3,
                                        int64_t samples_per_tensor = 0) {
    if (names.empty()) names = store.trainable_names();
    std::vector<Tensor> leaves;
    leaves.reserve(names.size());
    for (const auto& n : names) leaves.push_back(store.at(n));
    store.zero_grads();
    return grad_check(f, std::move(leaves), step, samples_per_tensor, std::move(names));
}

} // namespace mks2
