#include <gtest/gtest.h>

#include <cmath>

#include "mks2/adam.hpp"
#include "mks2/grad_check.hpp"
#include "mks2/ops.hpp"
#include "mks2/rng.hpp"

using namespace mks2;

namespace {

Tensor random_tensor(const Rng& rng, const std::string& label, Shape shape, double std = 1.0,
                     bool rg = true) {
    Tensor t = Tensor::zeros(shape, rg);
    rng.fill_normal(label, t.data(), t.vec().size(), std);
    return t;
}

} // namespace

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

TEST(Matmul, IdentityCase) {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor c = matmul(eye, a);
    for (int64_t i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(c.at(i), a.at(i));
}

TEST(Matmul, HandArithmetic) {
    Tensor a = Tensor::from({1, 2}, {1, 2});
    Tensor b = Tensor::from({2, 1}, {3, 4});
    EXPECT_FLOAT_EQ(matmul(a, b).item(), 11.0f);
}

TEST(Matmul, ShapeMismatchThrows) {
    Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from({2, 2}, {1, 2, 3, 4});
    EXPECT_THROW(matmul(a, b), shape_error);
}

TEST(Matmul, GradOfSumWrtLeftIsColumnSumsOfRight) {
    Rng rng(7);
    Tensor a = random_tensor(rng, "a", {3, 4});
    Tensor b = random_tensor(rng, "b", {4, 5}, 1.0, false);
    Tensor s = sum_all(matmul(a, b));
    s.backward();
    for (int64_t i = 0; i < 3; ++i) {
        for (int64_t k = 0; k < 4; ++k) {
            double rowsum = 0.0;
            for (int64_t j = 0; j < 5; ++j) rowsum += b.at(k, j);
            EXPECT_NEAR(a.grad_at(i * 4 + k), rowsum, 1e-5);
        }
    }
    // Same fact established independently by central differences.
    a.zero_grad();
    auto res = grad_check([&] { return sum_all(matmul(a, b)); }, {a}, 1e-3);
    EXPECT_LT(res.max_rel_err, 1e-3);
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

TEST(Softmax, Symmetry) {
    Tensor x = Tensor::from({2}, {0, 0});
    Tensor y = softmax(x, 0);
    EXPECT_NEAR(y.at(0), 0.5, 1e-7);
    EXPECT_NEAR(y.at(1), 0.5, 1e-7);
}

TEST(Softmax, ClosedForm) {
    Tensor x = Tensor::from({2}, {std::log(3.0f), 0.0f});
    Tensor y = softmax(x, 0);
    EXPECT_NEAR(y.at(0), 0.75, 1e-6);
    EXPECT_NEAR(y.at(1), 0.25, 1e-6);
}

TEST(Softmax, StableAtLargeMagnitude) {
    Tensor x = Tensor::from({2}, {1000.0f, 0.0f});
    Tensor y = softmax(x, 0);
    EXPECT_FLOAT_EQ(y.at(0), 1.0f);
    EXPECT_FLOAT_EQ(y.at(1), 0.0f);
}

TEST(Softmax, RowsSumToOneProperty) {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const int64_t r = 1 + static_cast<int64_t>(rng.uniform_int("r", trial, 6));
        const int64_t w = 2 + static_cast<int64_t>(rng.uniform_int("w", trial, 7));
        Tensor x = Tensor::zeros({r, w});
        for (int64_t i = 0; i < x.numel(); ++i)
            x.data()[i] = static_cast<float>(
                rng.normal("x" + std::to_string(trial), static_cast<uint64_t>(i)) * 1e3);
        Tensor y = softmax(x, 1);
        for (int64_t i = 0; i < r; ++i) {
            double s = 0.0;
            for (int64_t j = 0; j < w; ++j) {
                s += y.at(i, j);
                EXPECT_GE(y.at(i, j), 0.0f);
            }
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
}

TEST(Softmax, ColumnAxisMatchesTransposedRows) {
    Rng rng(13);
    Tensor x = random_tensor(rng, "x", {3, 4}, 1.0, false);
    Tensor a = softmax(x, 0);
    Tensor b = transpose(softmax(transpose(x), 1));
    for (int64_t i = 0; i < x.numel(); ++i) EXPECT_FLOAT_EQ(a.at(i), b.at(i));
}

TEST(Softmax, EmptyIsShapeError) {
    Tensor x = Tensor::from({0, 3}, {});
    EXPECT_THROW(softmax(x, 1), shape_error);
}

// ---------------------------------------------------------------------------
// layernorm
// ---------------------------------------------------------------------------

TEST(Layernorm, ConstantRowMapsToZero) {
    Tensor x = Tensor::from({1, 4}, {5, 5, 5, 5});
    Tensor g = Tensor::from({4}, {1, 1, 1, 1});
    Tensor b = Tensor::from({4}, {0, 0, 0, 0});
    Tensor y = layernorm(x, g, b);
    for (int64_t j = 0; j < 4; ++j) EXPECT_NEAR(y.at(j), 0.0, 1e-6);
}

TEST(Layernorm, AlreadyStandardizedRow) {
    Tensor x = Tensor::from({1, 2}, {1, -1});
    Tensor g = Tensor::from({2}, {1, 1});
    Tensor b = Tensor::from({2}, {0, 0});
    Tensor y = layernorm(x, g, b, 1e-12f);
    EXPECT_NEAR(y.at(0), 1.0, 1e-5);
    EXPECT_NEAR(y.at(1), -1.0, 1e-5);
}

TEST(Layernorm, GradMatchesFiniteDifferences) {
    Rng rng(17);
    Tensor x = random_tensor(rng, "x", {3, 6});
    Tensor g = random_tensor(rng, "g", {6}, 0.5);
    Tensor b = random_tensor(rng, "b", {6}, 0.5);
    auto res = grad_check([&] { return mean_all(mul(layernorm(x, g, b), layernorm(x, g, b))); },
                          {x, g, b}, 1e-3, 0, {"x", "gain", "bias"});
    EXPECT_LT(res.max_rel_err, 1e-3) << res.worst_tensor << "[" << res.worst_index << "]";
}

// ---------------------------------------------------------------------------
// cross entropy
// ---------------------------------------------------------------------------

TEST(CrossEntropy, UniformLogits) {
    Tensor logits = Tensor::zeros({3, 16});
    Tensor loss = cross_entropy(logits, {0, 7, 15});
    EXPECT_NEAR(loss.item(), std::log(16.0), 1e-5);
}

TEST(CrossEntropy, NearCertainCase) {
    Tensor logits = Tensor::zeros({1, 8});
    logits.data()[3] = 20.0f;
    EXPECT_NEAR(cross_entropy(logits, {3}).item(), 0.0, 1e-4);
}

TEST(CrossEntropy, IgnoredPrefixEqualsResponseOnlyLoss) {
    Rng rng(23);
    Tensor logits = random_tensor(rng, "l", {6, 12}, 2.0, false);
    std::vector<int> full = {-1, -1, 4, 9, -1, 2};
    Tensor a = cross_entropy(logits, full, -1);
    // Recompute over the response rows only.
    Tensor rows = concat_rows({slice_rows(logits, 2, 4), slice_rows(logits, 5, 6)});
    Tensor b = cross_entropy(rows, {4, 9, 2}, -1);
    EXPECT_NEAR(a.item(), b.item(), 1e-6);
}

TEST(CrossEntropy, AllIgnoredIsError) {
    Tensor logits = Tensor::zeros({2, 4});
    EXPECT_THROW(cross_entropy(logits, {-1, -1}, -1), degenerate_error);
}

TEST(CrossEntropy, GradMatchesFiniteDifferences) {
    Rng rng(29);
    Tensor logits = random_tensor(rng, "l", {5, 7}, 1.5);
    std::vector<int> targets = {1, -1, 3, 6, 0};
    auto res = grad_check([&] { return cross_entropy(logits, targets, -1); }, {logits}, 1e-3);
    EXPECT_LT(res.max_rel_err, 1e-3);
}

// ---------------------------------------------------------------------------
// cosine similarity
// ---------------------------------------------------------------------------

TEST(CosineSimilarity, SelfAndNegations) {
    Rng rng(31);
    Tensor v = random_tensor(rng, "v", {5}, 1.0, false);
    EXPECT_NEAR(cosine_similarity(v, v).item(), 1.0, 1e-6);
    EXPECT_NEAR(cosine_similarity(v, scale(v, -1.0f)).item(), -1.0, 1e-6);
}

TEST(CosineSimilarity, HandArithmetic) {
    Tensor a = Tensor::from({2}, {1, 0});
    Tensor b = Tensor::from({2}, {1, 1});
    EXPECT_NEAR(cosine_similarity(a, b).item(), std::sqrt(2.0) / 2.0, 1e-6);
}

TEST(CosineSimilarity, ZeroNormIsDegenerate) {
    Tensor a = Tensor::from({2}, {0, 0});
    Tensor b = Tensor::from({2}, {1, 1});
    EXPECT_THROW(cosine_similarity(a, b), degenerate_error);
}

TEST(CosineSimilarity, ValueInRangeProperty) {
    Rng rng(37);
    for (int trial = 0; trial < 30; ++trial) {
        Tensor a = random_tensor(rng, "a" + std::to_string(trial), {7}, 3.0, false);
        Tensor b = random_tensor(rng, "b" + std::to_string(trial), {7}, 3.0, false);
        const float c = cosine_similarity(a, b).item();
        EXPECT_LE(c, 1.0f + 1e-6f);
        EXPECT_GE(c, -1.0f - 1e-6f);
    }
}

// ---------------------------------------------------------------------------
// NaN policy
// ---------------------------------------------------------------------------

TEST(NanPolicy, OverflowFailsAtOpBoundary) {
    Tensor x = Tensor::from({1}, {1e5f});
    EXPECT_THROW(exp_t(x), numeric_error);
}

// ---------------------------------------------------------------------------
// adam
// ---------------------------------------------------------------------------

TEST(Adam, FirstStepMovesByLearningRate) {
    ParamStore store;
    Tensor& p = store.register_param("w", Tensor::from({4}, {1, 2, 3, 4}, true));
    store.finalize();
    store.set_trainable({"w"});
    p.node().ensure_grad();
    for (auto& g : p.node().grad) g = 1.0f;

    AdamState adam;
    adam.cfg.lr = 0.1f;
    adam.step(store);
    EXPECT_EQ(adam.t, 1);
    // Bias-corrected mhat = vhat = 1 on the first step, so each parameter
    // moves by -lr/(1+eps).
    for (int64_t i = 0; i < 4; ++i)
        EXPECT_NEAR(p.at(i), static_cast<float>(i + 1) - 0.1f, 1e-6);
}

TEST(Adam, ZeroGradLeavesParamsUnchanged) {
    ParamStore store;
    Tensor& p = store.register_param("w", Tensor::from({3}, {1, 2, 3}, true));
    store.finalize();
    store.set_trainable({"w"});
    p.node().ensure_grad();
    AdamState adam;
    adam.step(store);
    EXPECT_FLOAT_EQ(p.at(0), 1.0f);
    EXPECT_FLOAT_EQ(p.at(1), 2.0f);
    EXPECT_FLOAT_EQ(p.at(2), 3.0f);
}

TEST(Adam, FrozenTensorBitIdenticalDespiteGradient) {
    ParamStore store;
    store.register_param("trainable", Tensor::from({2}, {1, 1}, true));
    Tensor& frozen = store.register_param("frozen", Tensor::from({2}, {5, -3}, true));
    store.finalize();
    store.set_trainable({"trainable"});

    store.at("trainable").node().ensure_grad();
    store.at("trainable").node().grad = {1.0f, 1.0f};
    frozen.node().ensure_grad();
    frozen.node().grad = {9.0f, 9.0f};

    const auto before = store.tensor_bytes("frozen");
    AdamState adam;
    for (int i = 0; i < 10; ++i) adam.step(store);
    EXPECT_EQ(before, store.tensor_bytes("frozen"));
}

TEST(Adam, MissingGradientIsContractError) {
    ParamStore store;
    store.register_param("w", Tensor::from({2}, {1, 2}, true));
    store.finalize();
    store.set_trainable({"w"});
    AdamState adam;
    EXPECT_THROW(adam.step(store), contract_error);
}

// ---------------------------------------------------------------------------
// grad_check itself
// ---------------------------------------------------------------------------

TEST(GradCheck, SquareFunction) {
    Tensor x = Tensor::from({1}, {3.0f}, true);
    Tensor y = mul(x, x);
    y.backward();
    EXPECT_NEAR(x.grad_at(0), 6.0, 1e-5);
    auto res = grad_check([&] { return mul(x, x); }, {x}, 1e-3);
    EXPECT_LT(res.max_rel_err, 1e-4);
}

TEST(GradCheck, LinearIsExactToRounding) {
    Tensor x = Tensor::from({4}, {1, -2, 0.5f, 3}, true);
    auto res = grad_check([&] { return sum_all(scale(x, 2.5f)); }, {x}, 1e-3);
    // No truncation error for a linear objective; what remains is the 32-bit
    // rounding of the difference quotient, about |f|*eps/(2h) ~ 2e-4.
    EXPECT_LT(res.max_rel_err, 5e-4);
}

// ---------------------------------------------------------------------------
// Per-op finite-difference property: every differentiable op on random
// small inputs (dims <= 8) within rel tol 1e-3.
// ---------------------------------------------------------------------------

TEST(GradCheck, EveryOpOnRandomSmallInputs) {
    Rng rng(101);
    struct Case {
        const char* name;
        std::function<double()> run; // returns max rel err
    };
    auto mk = [&](const char* label, Shape shape, double std = 1.0) {
        return random_tensor(rng, label, std::move(shape), std);
    };

    std::vector<Case> cases;
    {
        Tensor a = mk("add.a", {4, 5}), b = mk("add.b", {4, 5});
        cases.push_back({"add", [=] { return grad_check([=] { return mean_all(add(a, b)); }, {a, b}).max_rel_err; }});
    }
    {
        Tensor a = mk("sub.a", {3, 3}), b = mk("sub.b", {3, 3});
        cases.push_back({"sub", [=] { return grad_check([=] { return mean_all(sub(a, b)); }, {a, b}).max_rel_err; }});
    }
    {
        Tensor a = mk("mul.a", {4, 4}), b = mk("mul.b", {4, 4});
        cases.push_back({"mul", [=] { return grad_check([=] { return mean_all(mul(a, b)); }, {a, b}).max_rel_err; }});
    }
    {
        Tensor a = mk("scale.a", {8});
        cases.push_back({"scale", [=] { return grad_check([=] { return mean_all(scale(a, -1.7f)); }, {a}).max_rel_err; }});
    }
    {
        Tensor a = mk("exp.a", {6}, 0.5);
        cases.push_back({"exp", [=] { return grad_check([=] { return mean_all(exp_t(a)); }, {a}).max_rel_err; }});
    }
    {
        Tensor a = mk("silu.a", {8}, 2.0);
        cases.push_back({"silu", [=] { return grad_check([=] { return mean_all(silu(a)); }, {a}).max_rel_err; }});
    }
    {
        Tensor a = mk("arb.a", {5, 4}), b = mk("arb.b", {4});
        cases.push_back({"add_row_broadcast", [=] {
            return grad_check([=] { return mean_all(mul(add_row_broadcast(a, b), add_row_broadcast(a, b))); }, {a, b}).max_rel_err;
        }});
    }
    {
        Tensor a = mk("sr.a", {5, 3}), s = mk("sr.s", {5});
        cases.push_back({"scale_rows", [=] {
            return grad_check([=] { return mean_all(mul(scale_rows(a, s), a)); }, {a, s}).max_rel_err;
        }});
    }
    {
        Tensor a = mk("ms.a", {4, 4}), s = mk("ms.s", {1});
        cases.push_back({"mul_scalar", [=] {
            return grad_check([=] { return mean_all(mul(mul_scalar(a, s), a)); }, {a, s}).max_rel_err;
        }});
    }
    {
        Tensor a = mk("mm.a", {3, 4}), b = mk("mm.b", {4, 5});
        cases.push_back({"matmul", [=] {
            return grad_check([=] { return mean_all(mul(matmul(a, b), matmul(a, b))); }, {a, b}).max_rel_err;
        }});
    }
    {
        Tensor a = mk("mmnt.a", {3, 4}), b = mk("mmnt.b", {5, 4});
        cases.push_back({"matmul_nt", [=] {
            return grad_check([=] { return mean_all(mul(matmul_nt(a, b), matmul_nt(a, b))); }, {a, b}).max_rel_err;
        }});
    }
    {
        Tensor a = mk("tr.a", {4, 6});
        cases.push_back({"transpose", [=] {
            return grad_check([=] { return mean_all(mul(transpose(a), transpose(a))); }, {a}).max_rel_err;
        }});
    }
    {
        Tensor a = mk("rs.a", {2, 6});
        cases.push_back({"reshape", [=] {
            return grad_check([=] { return mean_all(mul(reshape(a, {3, 4}), reshape(a, {3, 4}))); }, {a}).max_rel_err;
        }});
    }
    {
        Tensor a = mk("slr.a", {6, 3});
        cases.push_back({"slice_rows", [=] {
            return grad_check([=] { return mean_all(mul(slice_rows(a, 1, 4), slice_rows(a, 1, 4))); }, {a}).max_rel_err;
        }});
    }
    {
        Tensor a = mk("slc.a", {3, 8});
        cases.push_back({"slice_cols", [=] {
            return grad_check([=] { return mean_all(mul(slice_cols(a, 2, 6), slice_cols(a, 2, 6))); }, {a}).max_rel_err;
        }});
    }
    {
        Tensor a = mk("ccr.a", {2, 4}), b = mk("ccr.b", {3, 4});
        cases.push_back({"concat_rows", [=] {
            return grad_check([=] { return mean_all(mul(concat_rows({a, b}), concat_rows({a, b}))); }, {a, b}).max_rel_err;
        }});
    }
    {
        Tensor a = mk("ccc.a", {3, 2}), b = mk("ccc.b", {3, 5});
        cases.push_back({"concat_cols", [=] {
            return grad_check([=] { return mean_all(mul(concat_cols({a, b}), concat_cols({a, b}))); }, {a, b}).max_rel_err;
        }});
    }
    {
        Tensor t = mk("eg.t", {6, 4});
        std::vector<int> ids = {0, 3, 3, 5};
        cases.push_back({"embedding_gather", [=] {
            return grad_check([=] { return mean_all(mul(embedding_gather(t, ids), embedding_gather(t, ids))); }, {t}).max_rel_err;
        }});
    }
    {
        Tensor a = mk("sm.a", {4, 6}, 2.0);
        cases.push_back({"softmax", [=] {
            return grad_check([=] { return mean_all(mul(softmax(a, 1), a)); }, {a}).max_rel_err;
        }});
    }
    {
        Tensor a = mk("lsm.a", {4, 6}, 2.0);
        cases.push_back({"log_softmax_rows", [=] {
            return grad_check([=] { return mean_all(mul(log_softmax_rows(a), a)); }, {a}).max_rel_err;
        }});
    }
    {
        Tensor a = mk("rln.a", {4, 5});
        cases.push_back({"row_l2_normalize", [=] {
            return grad_check([=] { return mean_all(mul(row_l2_normalize(a), a)); }, {a}).max_rel_err;
        }});
    }
    {
        Tensor a = mk("cos.a", {6}), b = mk("cos.b", {6});
        cases.push_back({"cosine_similarity", [=] {
            return grad_check([=] { return cosine_similarity(a, b); }, {a, b}).max_rel_err;
        }});
    }
    {
        Tensor a = mk("sumall.a", {3, 5});
        cases.push_back({"sum_all", [=] {
            return grad_check([=] { return sum_all(mul(a, a)); }, {a}).max_rel_err;
        }});
    }

    for (auto& c : cases) {
        EXPECT_LT(c.run(), 1e-3) << "op: " << c.name;
    }
}

// ---------------------------------------------------------------------------
// rng determinism
// ---------------------------------------------------------------------------

TEST(Rng, PureFunctionOfSeedLabelIndex) {
    Rng a(42), b(42), c(43);
    EXPECT_EQ(a.bits("x", 5), b.bits("x", 5));
    EXPECT_NE(a.bits("x", 5), c.bits("x", 5));
    EXPECT_NE(a.bits("x", 5), a.bits("y", 5));
    EXPECT_NE(a.bits("x", 5), a.bits("x", 6));
    EXPECT_DOUBLE_EQ(a.uniform("u", 9), b.uniform("u", 9));
    EXPECT_DOUBLE_EQ(a.normal("n", 3), b.normal("n", 3));
    auto p1 = a.permutation("p", 100);
    auto p2 = b.permutation("p", 100);
    EXPECT_EQ(p1, p2);
    std::vector<bool> seen(100, false);
    for (auto v : p1) seen[static_cast<size_t>(v)] = true;
    for (bool s : seen) EXPECT_TRUE(s);
}

TEST(Rng, SplitChangesStream) {
    Rng a(42);
    Rng s = a.split("child");
    EXPECT_NE(a.bits("x", 0), s.bits("x", 0));
    EXPECT_EQ(s.bits("x", 0), a.split("child").bits("x", 0));
}
