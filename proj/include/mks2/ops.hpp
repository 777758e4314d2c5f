#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mks2/tensor.hpp"

namespace mks2 {

// ---------------------------------------------------------------------------
// Raw matrix kernels, shared by forward and backward passes. All accumulate
// (C += ...) so backward can reuse them for gradient accumulation.
// ---------------------------------------------------------------------------

// C[m,n] += A[m,k] * B[k,n]
inline void mm_acc(float* c, const float* a, const float* b, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        float* crow = c + i * n;
        const float* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const float av = arow[p];
            if (av == 0.0f) continue;
            const float* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T. Materializes B^T so the inner loop is the
// same vectorizable ikj kernel as mm_acc; the transpose is O(k*n) against
// O(m*k*n) multiply-adds.
inline void mm_nt_acc(float* c, const float* a, const float* b, int64_t m, int64_t k, int64_t n) {
    std::vector<float> bt(static_cast<size_t>(k * n));
    for (int64_t j = 0; j < n; ++j) {
        const float* brow = b + j * k;
        for (int64_t p = 0; p < k; ++p) bt[static_cast<size_t>(p * n + j)] = brow[p];
    }
    mm_acc(c, a, bt.data(), m, k, n);
}

// C[k,n] += A[m,k]^T * B[m,n]
inline void mm_tn_acc(float* c, const float* a, const float* b, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        const float* brow = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const float av = arow[p];
            if (av == 0.0f) continue;
            float* crow = c + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

namespace detail {

inline void expect_2d(const Tensor& t, const char* op) {
    if (t.shape().size() != 2)
        throw shape_error(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

inline void expect_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcast ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::expect_same_shape(a, b, "add");
    std::vector<float> out(a.vec());
    for (size_t i = 0; i < out.size(); ++i) out[i] += b.at(static_cast<int64_t>(i));
    return make_node("add", a.shape(), std::move(out), {a.ptr(), b.ptr()}, [](TensorNode& n) {
        for (int s = 0; s < 2; ++s) {
            auto& p = *n.parents[static_cast<size_t>(s)];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::expect_same_shape(a, b, "sub");
    std::vector<float> out(a.vec());
    for (size_t i = 0; i < out.size(); ++i) out[i] -= b.at(static_cast<int64_t>(i));
    return make_node("sub", a.shape(), std::move(out), {a.ptr(), b.ptr()}, [](TensorNode& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::expect_same_shape(a, b, "mul");
    std::vector<float> out(a.vec());
    for (size_t i = 0; i < out.size(); ++i) out[i] *= b.at(static_cast<int64_t>(i));
    return make_node("mul", a.shape(), std::move(out), {a.ptr(), b.ptr()}, [](TensorNode& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.data[i];
        }
    });
}

inline Tensor scale(const Tensor& a, float c) {
    std::vector<float> out(a.vec());
    for (float& v : out) v *= c;
    return make_node("scale", a.shape(), std::move(out), {a.ptr()}, [c](TensorNode& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += c * n.grad[i];
    });
}

inline Tensor exp_t(const Tensor& a) {
    std::vector<float> out(a.vec());
    for (float& v : out) v = std::exp(v);
    return make_node("exp", a.shape(), std::move(out), {a.ptr()}, [](TensorNode& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * n.data[i];
    });
}

inline Tensor silu(const Tensor& a) {
    std::vector<float> out(a.vec());
    for (float& v : out) {
        const float s = 1.0f / (1.0f + std::exp(-v));
        v = v * s;
    }
    return make_node("silu", a.shape(), std::move(out), {a.ptr()}, [](TensorNode& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            const float x = p.data[i];
            const float s = 1.0f / (1.0f + std::exp(-x));
            p.grad[i] += n.grad[i] * (s * (1.0f + x * (1.0f - s)));
        }
    });
}

// out[i,j] = a[i,j] + b[j]
inline Tensor add_row_broadcast(const Tensor& a, const Tensor& b) {
    detail::expect_2d(a, "add_row_broadcast");
    const int64_t m = a.shape()[0], nn = a.shape()[1];
    if (b.numel() != nn)
        throw shape_error("add_row_broadcast: bias length " + std::to_string(b.numel()) +
                          " vs cols " + std::to_string(nn));
    std::vector<float> out(a.vec());
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < nn; ++j) out[static_cast<size_t>(i * nn + j)] += b.at(j);
    return make_node("add_row_broadcast", a.shape(), std::move(out), {a.ptr(), b.ptr()},
                     [m, nn](TensorNode& n) {
                         auto& pa = *n.parents[0];
                         auto& pb = *n.parents[1];
                         if (pa.requires_grad) {
                             pa.ensure_grad();
                             for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
                         }
                         if (pb.requires_grad) {
                             pb.ensure_grad();
                             for (int64_t i = 0; i < m; ++i)
                                 for (int64_t j = 0; j < nn; ++j)
                                     pb.grad[static_cast<size_t>(j)] +=
                                         n.grad[static_cast<size_t>(i * nn + j)];
                         }
                     });
}

// out[i,j] = a[i,j] * s[i]
inline Tensor scale_rows(const Tensor& a, const Tensor& s) {
    detail::expect_2d(a, "scale_rows");
    const int64_t m = a.shape()[0], nn = a.shape()[1];
    if (s.numel() != m)
        throw shape_error("scale_rows: scale length " + std::to_string(s.numel()) + " vs rows " +
                          std::to_string(m));
    std::vector<float> out(a.vec());
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < nn; ++j) out[static_cast<size_t>(i * nn + j)] *= s.at(i);
    return make_node("scale_rows", a.shape(), std::move(out), {a.ptr(), s.ptr()},
                     [m, nn](TensorNode& n) {
                         auto& pa = *n.parents[0];
                         auto& ps = *n.parents[1];
                         if (pa.requires_grad) {
                             pa.ensure_grad();
                             for (int64_t i = 0; i < m; ++i) {
                                 const float sv = ps.data[static_cast<size_t>(i)];
                                 for (int64_t j = 0; j < nn; ++j)
                                     pa.grad[static_cast<size_t>(i * nn + j)] +=
                                         sv * n.grad[static_cast<size_t>(i * nn + j)];
                             }
                         }
                         if (ps.requires_grad) {
                             ps.ensure_grad();
                             for (int64_t i = 0; i < m; ++i) {
                                 double acc = 0.0;
                                 for (int64_t j = 0; j < nn; ++j)
                                     acc += static_cast<double>(n.grad[static_cast<size_t>(i * nn + j)]) *
                                            pa.data[static_cast<size_t>(i * nn + j)];
                                 ps.grad[static_cast<size_t>(i)] += static_cast<float>(acc);
                             }
                         }
                     });
}

// out = a * s where s is a 1-element tensor (gradient flows to both).
inline Tensor mul_scalar(const Tensor& a, const Tensor& s) {
    if (s.numel() != 1) throw shape_error("mul_scalar: scale must be a scalar tensor");
    const float sv = s.at(0);
    std::vector<float> out(a.vec());
    for (float& v : out) v *= sv;
    return make_node("mul_scalar", a.shape(), std::move(out), {a.ptr(), s.ptr()},
                     [](TensorNode& n) {
                         auto& pa = *n.parents[0];
                         auto& ps = *n.parents[1];
                         const float sv2 = ps.data[0];
                         if (pa.requires_grad) {
                             pa.ensure_grad();
                             for (size_t i = 0; i < n.grad.size(); ++i)
                                 pa.grad[i] += sv2 * n.grad[i];
                         }
                         if (ps.requires_grad) {
                             ps.ensure_grad();
                             double acc = 0.0;
                             for (size_t i = 0; i < n.grad.size(); ++i)
                                 acc += static_cast<double>(n.grad[i]) * pa.data[i];
                             ps.grad[0] += static_cast<float>(acc);
                         }
                     });
}

// ---------------------------------------------------------------------------
// Matrix products and layout ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::expect_2d(a, "matmul");
    detail::expect_2d(b, "matmul");
    const int64_t m = a.shape()[0], k = a.shape()[1];
    if (b.shape()[0] != k)
        throw shape_error("matmul: inner dims " + shape_str(a.shape()) + " * " +
                          shape_str(b.shape()));
    const int64_t nn = b.shape()[1];
    std::vector<float> out(static_cast<size_t>(m * nn), 0.0f);
    mm_acc(out.data(), a.data(), b.data(), m, k, nn);
    return make_node("matmul", {m, nn}, std::move(out), {a.ptr(), b.ptr()},
                     [m, k, nn](TensorNode& n) {
                         auto& pa = *n.parents[0];
                         auto& pb = *n.parents[1];
                         if (pa.requires_grad) {
                             pa.ensure_grad();
                             mm_nt_acc(pa.grad.data(), n.grad.data(), pb.data.data(), m, nn, k);
                         }
                         if (pb.requires_grad) {
                             pb.ensure_grad();
                             mm_tn_acc(pb.grad.data(), pa.data.data(), n.grad.data(), m, k, nn);
                         }
                     });
}

// a[m,k] * b[n,k]^T -> [m,n]; avoids materializing transposes in hot paths.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::expect_2d(a, "matmul_nt");
    detail::expect_2d(b, "matmul_nt");
    const int64_t m = a.shape()[0], k = a.shape()[1];
    if (b.shape()[1] != k)
        throw shape_error("matmul_nt: inner dims " + shape_str(a.shape()) + " * " +
                          shape_str(b.shape()) + "^T");
    const int64_t nn = b.shape()[0];
    std::vector<float> out(static_cast<size_t>(m * nn), 0.0f);
    mm_nt_acc(out.data(), a.data(), b.data(), m, k, nn);
    return make_node("matmul_nt", {m, nn}, std::move(out), {a.ptr(), b.ptr()},
                     [m, k, nn](TensorNode& n) {
                         auto& pa = *n.parents[0];
                         auto& pb = *n.parents[1];
                         if (pa.requires_grad) {
                             pa.ensure_grad();
                             mm_acc(pa.grad.data(), n.grad.data(), pb.data.data(), m, nn, k);
                         }
                         if (pb.requires_grad) {
                             pb.ensure_grad();
                             mm_tn_acc(pb.grad.data(), n.grad.data(), pa.data.data(), m, nn, k);
                         }
                     });
}

inline Tensor transpose(const Tensor& a) {
    detail::expect_2d(a, "transpose");
    const int64_t m = a.shape()[0], nn = a.shape()[1];
    std::vector<float> out(static_cast<size_t>(m * nn));
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < nn; ++j)
            out[static_cast<size_t>(j * m + i)] = a.at(i, j);
    return make_node("transpose", {nn, m}, std::move(out), {a.ptr()}, [m, nn](TensorNode& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < nn; ++j)
                p.grad[static_cast<size_t>(i * nn + j)] += n.grad[static_cast<size_t>(j * m + i)];
    });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw shape_error("reshape: cannot view " + shape_str(a.shape()) + " as " +
                          shape_str(shape));
    return make_node("reshape", std::move(shape), a.vec(), {a.ptr()}, [](TensorNode& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    });
}

inline Tensor slice_rows(const Tensor& a, int64_t r0, int64_t r1) {
    detail::expect_2d(a, "slice_rows");
    const int64_t m = a.shape()[0], nn = a.shape()[1];
    if (r0 < 0 || r1 > m || r0 >= r1)
        throw shape_error("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                          ") of " + shape_str(a.shape()));
    std::vector<float> out(a.vec().begin() + r0 * nn, a.vec().begin() + r1 * nn);
    return make_node("slice_rows", {r1 - r0, nn}, std::move(out), {a.ptr()},
                     [r0, nn](TensorNode& n) {
                         auto& p = *n.parents[0];
                         if (!p.requires_grad) return;
                         p.ensure_grad();
                         for (size_t i = 0; i < n.grad.size(); ++i)
                             p.grad[static_cast<size_t>(r0 * nn) + i] += n.grad[i];
                     });
}

inline Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1) {
    detail::expect_2d(a, "slice_cols");
    const int64_t m = a.shape()[0], nn = a.shape()[1];
    if (c0 < 0 || c1 > nn || c0 >= c1)
        throw shape_error("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                          ") of " + shape_str(a.shape()));
    const int64_t w = c1 - c0;
    std::vector<float> out(static_cast<size_t>(m * w));
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < w; ++j) out[static_cast<size_t>(i * w + j)] = a.at(i, c0 + j);
    return make_node("slice_cols", {m, w}, std::move(out), {a.ptr()},
                     [m, nn, c0, w](TensorNode& n) {
                         auto& p = *n.parents[0];
                         if (!p.requires_grad) return;
                         p.ensure_grad();
                         for (int64_t i = 0; i < m; ++i)
                             for (int64_t j = 0; j < w; ++j)
                                 p.grad[static_cast<size_t>(i * nn + c0 + j)] +=
                                     n.grad[static_cast<size_t>(i * w + j)];
                     });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw shape_error("concat_rows: no inputs");
    const int64_t nn = parts[0].shape().back();
    int64_t m = 0;
    std::vector<std::shared_ptr<TensorNode>> parents;
    for (const auto& p : parts) {
        detail::expect_2d(p, "concat_rows");
        if (p.shape()[1] != nn) throw shape_error("concat_rows: column mismatch");
        m += p.shape()[0];
        parents.push_back(p.ptr());
    }
    std::vector<float> out;
    out.reserve(static_cast<size_t>(m * nn));
    for (const auto& p : parts) out.insert(out.end(), p.vec().begin(), p.vec().end());
    return make_node("concat_rows", {m, nn}, std::move(out), std::move(parents),
                     [](TensorNode& n) {
                         size_t off = 0;
                         for (auto& pp : n.parents) {
                             auto& p = *pp;
                             if (p.requires_grad) {
                                 p.ensure_grad();
                                 for (size_t i = 0; i < p.data.size(); ++i)
                                     p.grad[i] += n.grad[off + i];
                             }
                             off += p.data.size();
                         }
                     });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw shape_error("concat_cols: no inputs");
    const int64_t m = parts[0].shape()[0];
    int64_t nn = 0;
    std::vector<std::shared_ptr<TensorNode>> parents;
    for (const auto& p : parts) {
        detail::expect_2d(p, "concat_cols");
        if (p.shape()[0] != m) throw shape_error("concat_cols: row mismatch");
        nn += p.shape()[1];
        parents.push_back(p.ptr());
    }
    std::vector<float> out(static_cast<size_t>(m * nn));
    int64_t coff = 0;
    for (const auto& p : parts) {
        const int64_t w = p.shape()[1];
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < w; ++j)
                out[static_cast<size_t>(i * nn + coff + j)] = p.at(i, j);
        coff += w;
    }
    return make_node("concat_cols", {m, nn}, std::move(out), std::move(parents),
                     [m, nn](TensorNode& n) {
                         int64_t off = 0;
                         for (auto& pp : n.parents) {
                             auto& p = *pp;
                             const int64_t w = p.shape[1];
                             if (p.requires_grad) {
                                 p.ensure_grad();
                                 for (int64_t i = 0; i < m; ++i)
                                     for (int64_t j = 0; j < w; ++j)
                                         p.grad[static_cast<size_t>(i * w + j)] +=
                                             n.grad[static_cast<size_t>(i * nn + off + j)];
                             }
                             off += w;
                         }
                     });
}

inline Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids) {
    detail::expect_2d(table, "embedding_gather");
    const int64_t v = table.shape()[0], d = table.shape()[1];
    std::vector<float> out(ids.size() * static_cast<size_t>(d));
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= v)
            throw shape_error("embedding_gather: id " + std::to_string(ids[i]) +
                              " outside vocabulary of " + std::to_string(v));
        std::copy_n(table.data() + static_cast<int64_t>(ids[i]) * d, d,
                    out.begin() + static_cast<int64_t>(i) * d);
    }
    return make_node("embedding_gather", {static_cast<int64_t>(ids.size()), d}, std::move(out),
                     {table.ptr()}, [ids, d](TensorNode& n) {
                         auto& p = *n.parents[0];
                         if (!p.requires_grad) return;
                         p.ensure_grad();
                         for (size_t i = 0; i < ids.size(); ++i)
                             for (int64_t j = 0; j < d; ++j)
                                 p.grad[static_cast<size_t>(ids[i] * d + j)] +=
                                     n.grad[i * static_cast<size_t>(d) + static_cast<size_t>(j)];
                     });
}

// ---------------------------------------------------------------------------
// Reductions and normalizations
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.vec()) acc += v;
    return make_node("sum", {1}, {static_cast<float>(acc)}, {a.ptr()}, [](TensorNode& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (float& g : p.grad) g += n.grad[0];
    });
}

inline Tensor mean_all(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.vec()) acc += v;
    const float inv = 1.0f / static_cast<float>(a.numel());
    return make_node("mean", {1}, {static_cast<float>(acc / static_cast<double>(a.numel()))},
                     {a.ptr()}, [inv](TensorNode& n) {
                         auto& p = *n.parents[0];
                         if (!p.requires_grad) return;
                         p.ensure_grad();
                         for (float& g : p.grad) g += inv * n.grad[0];
                     });
}

namespace detail {

// Row-wise stabilized softmax into out; rows of width w, count r.
inline void softmax_rows_raw(float* out, const float* in, int64_t r, int64_t w) {
    for (int64_t i = 0; i < r; ++i) {
        const float* x = in + i * w;
        float* y = out + i * w;
        float mx = x[0];
        for (int64_t j = 1; j < w; ++j) mx = std::max(mx, x[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < w; ++j) {
            y[j] = std::exp(x[j] - mx);
            denom += y[j];
        }
        const float inv = static_cast<float>(1.0 / denom);
        for (int64_t j = 0; j < w; ++j) y[j] *= inv;
    }
}

} // namespace detail

// Softmax along `axis` (0 for vectors and column-wise, 1 for row-wise).
inline Tensor softmax(const Tensor& a, int axis) {
    if (a.numel() == 0) throw shape_error("softmax: empty tensor");
    const bool vec1d = a.shape().size() == 1;
    if (vec1d && axis != 0) throw shape_error("softmax: axis out of range for 1-D input");
    if (!vec1d && a.shape().size() != 2) throw shape_error("softmax: expected 1-D or 2-D");

    if (!vec1d && axis == 0) {
        // Column-wise: softmax of the transpose's rows, transposed back.
        return transpose(softmax(transpose(a), 1));
    }
    const int64_t r = vec1d ? 1 : a.shape()[0];
    const int64_t w = vec1d ? a.numel() : a.shape()[1];
    std::vector<float> out(a.vec().size());
    detail::softmax_rows_raw(out.data(), a.data(), r, w);
    return make_node("softmax", a.shape(), std::move(out), {a.ptr()}, [r, w](TensorNode& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int64_t i = 0; i < r; ++i) {
            const float* y = n.data.data() + i * w;
            const float* g = n.grad.data() + i * w;
            double dot = 0.0;
            for (int64_t j = 0; j < w; ++j) dot += static_cast<double>(g[j]) * y[j];
            float* px = p.grad.data() + i * w;
            for (int64_t j = 0; j < w; ++j)
                px[j] += y[j] * (g[j] - static_cast<float>(dot));
        }
    });
}

inline Tensor log_softmax_rows(const Tensor& a) {
    detail::expect_2d(a, "log_softmax_rows");
    const int64_t r = a.shape()[0], w = a.shape()[1];
    std::vector<float> out(a.vec().size());
    for (int64_t i = 0; i < r; ++i) {
        const float* x = a.data() + i * w;
        float* y = out.data() + i * w;
        float mx = x[0];
        for (int64_t j = 1; j < w; ++j) mx = std::max(mx, x[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < w; ++j) denom += std::exp(static_cast<double>(x[j]) - mx);
        const float lse = mx + static_cast<float>(std::log(denom));
        for (int64_t j = 0; j < w; ++j) y[j] = x[j] - lse;
    }
    return make_node("log_softmax_rows", a.shape(), std::move(out), {a.ptr()},
                     [r, w](TensorNode& n) {
                         auto& p = *n.parents[0];
                         if (!p.requires_grad) return;
                         p.ensure_grad();
                         for (int64_t i = 0; i < r; ++i) {
                             const float* y = n.data.data() + i * w;
                             const float* g = n.grad.data() + i * w;
                             double gsum = 0.0;
                             for (int64_t j = 0; j < w; ++j) gsum += g[j];
                             float* px = p.grad.data() + i * w;
                             for (int64_t j = 0; j < w; ++j)
                                 px[j] += g[j] - std::exp(y[j]) * static_cast<float>(gsum);
                         }
                     });
}

// Per-row standardization (population variance) followed by affine.
inline Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                        float eps = 1e-5f) {
    const bool vec1d = x.shape().size() == 1;
    const int64_t r = vec1d ? 1 : x.shape()[0];
    const int64_t w = vec1d ? x.numel() : x.shape()[1];
    if (gain.numel() != w || bias.numel() != w)
        throw shape_error("layernorm: gain/bias length " + std::to_string(gain.numel()) + "," +
                          std::to_string(bias.numel()) + " vs width " + std::to_string(w));

    std::vector<float> out(x.vec().size());
    auto xhat = std::make_shared<std::vector<float>>(x.vec().size());
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) {
        const float* xr = x.data() + i * w;
        double mean = 0.0;
        for (int64_t j = 0; j < w; ++j) mean += xr[j];
        mean /= static_cast<double>(w);
        double var = 0.0;
        for (int64_t j = 0; j < w; ++j) {
            const double dd = xr[j] - mean;
            var += dd * dd;
        }
        var /= static_cast<double>(w);
        const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*inv_std)[static_cast<size_t>(i)] = is;
        for (int64_t j = 0; j < w; ++j) {
            const float xh = (xr[j] - static_cast<float>(mean)) * is;
            (*xhat)[static_cast<size_t>(i * w + j)] = xh;
            out[static_cast<size_t>(i * w + j)] = xh * gain.at(j) + bias.at(j);
        }
    }
    return make_node(
        "layernorm", x.shape(), std::move(out), {x.ptr(), gain.ptr(), bias.ptr()},
        [r, w, xhat, inv_std](TensorNode& n) {
            auto& px = *n.parents[0];
            auto& pg = *n.parents[1];
            auto& pb = *n.parents[2];
            if (pg.requires_grad) pg.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            if (px.requires_grad) px.ensure_grad();
            for (int64_t i = 0; i < r; ++i) {
                const float* g = n.grad.data() + i * w;
                const float* xh = xhat->data() + i * w;
                if (pg.requires_grad || pb.requires_grad) {
                    for (int64_t j = 0; j < w; ++j) {
                        if (pg.requires_grad) pg.grad[static_cast<size_t>(j)] += g[j] * xh[j];
                        if (pb.requires_grad) pb.grad[static_cast<size_t>(j)] += g[j];
                    }
                }
                if (px.requires_grad) {
                    // d/dx of standardization: (gh - mean(gh) - xhat*mean(gh*xhat)) * inv_std
                    double mean_gh = 0.0, mean_ghx = 0.0;
                    for (int64_t j = 0; j < w; ++j) {
                        const double gh = static_cast<double>(g[j]) * pg.data[static_cast<size_t>(j)];
                        mean_gh += gh;
                        mean_ghx += gh * xh[j];
                    }
                    mean_gh /= static_cast<double>(w);
                    mean_ghx /= static_cast<double>(w);
                    const float is = (*inv_std)[static_cast<size_t>(i)];
                    float* px_row = px.grad.data() + i * w;
                    for (int64_t j = 0; j < w; ++j) {
                        const double gh = static_cast<double>(g[j]) * pg.data[static_cast<size_t>(j)];
                        px_row[j] += static_cast<float>((gh - mean_gh - xh[j] * mean_ghx) * is);
                    }
                }
            }
        });
}

// Mean NLL over non-ignored rows. Throws when every position is ignored.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            int ignore_index = -1) {
    detail::expect_2d(logits, "cross_entropy");
    const int64_t r = logits.shape()[0], v = logits.shape()[1];
    if (static_cast<int64_t>(targets.size()) != r)
        throw shape_error("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                          std::to_string(r) + " rows");
    int64_t used = 0;
    double total = 0.0;
    for (int64_t i = 0; i < r; ++i) {
        const int t = targets[static_cast<size_t>(i)];
        if (t == ignore_index) continue;
        if (t < 0 || t >= v)
            throw shape_error("cross_entropy: target " + std::to_string(t) + " outside [0," +
                              std::to_string(v) + ")");
        const float* x = logits.data() + i * v;
        float mx = x[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, x[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < v; ++j) denom += std::exp(static_cast<double>(x[j]) - mx);
        total += (mx + std::log(denom)) - x[t];
        ++used;
    }
    if (used == 0) throw degenerate_error("cross_entropy: all positions ignored, loss undefined");
    const float loss = static_cast<float>(total / static_cast<double>(used));
    return make_node("cross_entropy", {1}, {loss}, {logits.ptr()},
                     [targets, ignore_index, r, v, used](TensorNode& n) {
                         auto& p = *n.parents[0];
                         if (!p.requires_grad) return;
                         p.ensure_grad();
                         const float gscale = n.grad[0] / static_cast<float>(used);
                         std::vector<float> sm(static_cast<size_t>(v));
                         for (int64_t i = 0; i < r; ++i) {
                             const int t = targets[static_cast<size_t>(i)];
                             if (t == ignore_index) continue;
                             detail::softmax_rows_raw(sm.data(), p.data.data() + i * v, 1, v);
                             float* g = p.grad.data() + i * v;
                             for (int64_t j = 0; j < v; ++j) g[j] += gscale * sm[static_cast<size_t>(j)];
                             g[t] -= gscale;
                         }
                     });
}

inline Tensor row_l2_normalize(const Tensor& a, float min_norm = 1e-12f) {
    detail::expect_2d(a, "row_l2_normalize");
    const int64_t r = a.shape()[0], w = a.shape()[1];
    std::vector<float> out(a.vec().size());
    auto norms = std::make_shared<std::vector<float>>(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) {
        double nm = 0.0;
        const float* x = a.data() + i * w;
        for (int64_t j = 0; j < w; ++j) nm += static_cast<double>(x[j]) * x[j];
        nm = std::sqrt(nm);
        if (nm < min_norm)
            throw degenerate_error("row_l2_normalize: zero-norm row " + std::to_string(i));
        (*norms)[static_cast<size_t>(i)] = static_cast<float>(nm);
        for (int64_t j = 0; j < w; ++j)
            out[static_cast<size_t>(i * w + j)] = static_cast<float>(x[j] / nm);
    }
    return make_node("row_l2_normalize", a.shape(), std::move(out), {a.ptr()},
                     [r, w, norms](TensorNode& n) {
                         auto& p = *n.parents[0];
                         if (!p.requires_grad) return;
                         p.ensure_grad();
                         for (int64_t i = 0; i < r; ++i) {
                             const float* y = n.data.data() + i * w;
                             const float* g = n.grad.data() + i * w;
                             double dot = 0.0;
                             for (int64_t j = 0; j < w; ++j) dot += static_cast<double>(g[j]) * y[j];
                             const float inv = 1.0f / (*norms)[static_cast<size_t>(i)];
                             float* px = p.grad.data() + i * w;
                             for (int64_t j = 0; j < w; ++j)
                                 px[j] += (g[j] - static_cast<float>(dot) * y[j]) * inv;
                         }
                     });
}

// Cosine similarity of two vectors; rejects (near-)zero-norm inputs.
inline Tensor cosine_similarity(const Tensor& a, const Tensor& b, float min_norm = 1e-12f) {
    if (a.numel() != b.numel())
        throw shape_error("cosine_similarity: length mismatch " + std::to_string(a.numel()) +
                          " vs " + std::to_string(b.numel()));
    const int64_t n = a.numel();
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        dot += static_cast<double>(a.at(i)) * b.at(i);
        na += static_cast<double>(a.at(i)) * a.at(i);
        nb += static_cast<double>(b.at(i)) * b.at(i);
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < min_norm || nb < min_norm)
        throw degenerate_error("cosine_similarity: zero-norm input vector");
    const double c = dot / (na * nb);
    return make_node("cosine_similarity", {1}, {static_cast<float>(c)}, {a.ptr(), b.ptr()},
                     [n, na, nb, c](TensorNode& nd) {
                         auto& pa = *nd.parents[0];
                         auto& pb = *nd.parents[1];
                         const float g = nd.grad[0];
                         if (pa.requires_grad) {
                             pa.ensure_grad();
                             for (int64_t i = 0; i < n; ++i)
                                 pa.grad[static_cast<size_t>(i)] += g * static_cast<float>(
                                     pb.data[static_cast<size_t>(i)] / (na * nb) -
                                     c * pa.data[static_cast<size_t>(i)] / (na * na));
                         }
                         if (pb.requires_grad) {
                             pb.ensure_grad();
                             for (int64_t i = 0; i < n; ++i)
                                 pb.grad[static_cast<size_t>(i)] += g * static_cast<float>(
                                     pa.data[static_cast<size_t>(i)] / (na * nb) -
                                     c * pb.data[static_cast<size_t>(i)] / (nb * nb));
                         }
                     });
}

// Additive causal mask: 0 on and below the diagonal, -1e9 above. exp(-1e9)
// underflows to exactly zero, so masked positions contribute nothing at all.
inline Tensor causal_mask(int64_t m) {
    std::vector<float> out(static_cast<size_t>(m * m), 0.0f);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = i + 1; j < m; ++j) out[static_cast<size_t>(i * m + j)] = -1e9f;
    return Tensor::from({m, m}, std::move(out), false);
}

inline int64_t argmax_span(const float* x, int64_t n) {
    int64_t best = 0;
    for (int64_t j = 1; j < n; ++j)
        if (x[j] > x[best]) best = j;
    return best;
}

} // namespace mks2
