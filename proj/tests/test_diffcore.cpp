#include <cmath>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "tdaa/adam.hpp"
#include "tdaa/graph.hpp"
#include "tdaa/ops.hpp"
#include "tdaa/rng.hpp"

using namespace tdaa;
using namespace tdaa::testing;

TEST_CASE("conv2d: all-ones 3x3 against all-ones 3x3 kernel sums to 9") {
    Graph g;
    int x = g.constant(Tensor::full({1, 1, 3, 3}, 1.0f));
    int w = g.constant(Tensor::full({1, 1, 3, 3}, 1.0f));
    int b = g.constant(Tensor::zeros({1}));
    int y = conv2d(g, x, w, b, 1, 0);
    REQUIRE(g.value(y).shape == std::vector<int>{1, 1, 1, 1});
    CHECK(g.value(y).data[0] == doctest::Approx(9.0f));
}

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input") {
    SplitMix64 rng(7);
    Tensor x({2, 1, 4, 5});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform_real(0, 1));
    Graph g;
    int xn = g.constant(x);
    int w = g.constant(Tensor::full({1, 1, 1, 1}, 1.0f));
    int b = g.constant(Tensor::zeros({1}));
    int y = conv2d(g, xn, w, b, 1, 0);
    REQUIRE(g.value(y).shape == x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) CHECK(g.value(y).data[i] == x.data[i]);
}

TEST_CASE("conv2d: matches the naive direct-loop oracle (64-bit)") {
    SplitMix64 rng(11);
    auto run_case = [&](int n, int c, int h, int w, int o, int kh, int kw, int stride, int pad) {
        Tensor64 x = random_tensor({n, c, h, w}, rng);
        Tensor64 k = random_tensor({o, c, kh, kw}, rng);
        Tensor64 b = random_tensor({o}, rng);
        Tensor64 want = naive_conv2d(x, k, b, stride, pad);
        Graph64 g;
        int y = conv2d(g, g.constant(x), g.constant(k), g.constant(b), stride, pad);
        REQUIRE(g.value(y).shape == want.shape);
        for (size_t i = 0; i < want.data.size(); ++i)
            CHECK(std::abs(g.value(y).data[i] - want.data[i]) <= 1e-10);
    };
    // the stated reference configuration
    run_case(2, 3, 8, 8, 4, 3, 3, 2, 1);
    // five random configurations
    for (int t = 0; t < 5; ++t) {
        const int stride = static_cast<int>(rng.uniform_int(1, 2));
        const int pad = static_cast<int>(rng.uniform_int(0, 2));
        const int kh = static_cast<int>(rng.uniform_int(1, 3));
        const int kw = static_cast<int>(rng.uniform_int(1, 3));
        run_case(static_cast<int>(rng.uniform_int(1, 3)), static_cast<int>(rng.uniform_int(1, 3)),
                 static_cast<int>(rng.uniform_int(kh, 7)), static_cast<int>(rng.uniform_int(kw, 7)),
                 static_cast<int>(rng.uniform_int(1, 4)), kh, kw, stride, pad);
    }
}

TEST_CASE("conv2d: shape violations name the offending axes") {
    Graph g;
    int x = g.constant(Tensor::zeros({1, 3, 8, 8}));
    int w = g.constant(Tensor::zeros({4, 2, 3, 3}));  // wrong channel count
    int b = g.constant(Tensor::zeros({4}));
    CHECK_THROWS_WITH_AS(conv2d(g, x, w, b, 1, 0),
                         doctest::Contains("channel axis mismatch"), ShapeError);
    int wbig = g.constant(Tensor::zeros({4, 3, 11, 3}));
    CHECK_THROWS_AS(conv2d(g, x, wbig, b, 1, 0), ShapeError);
}

TEST_CASE("backward: d(x^2)/dx at x=3 is 6") {
    Graph g;
    int x = g.leaf(Tensor::scalar(3.0f));
    int y = mul(g, x, x);
    g.backward(y);
    CHECK(g.grad(x).data[0] == doctest::Approx(6.0f));
}

TEST_CASE("backward: clamp passes gradients through its interior") {
    Graph g;
    int x = g.leaf(Tensor({5}, {0.1f, 0.3f, 0.5f, 0.7f, 0.9f}));
    int y = sum_all(g, clamp_st(g, x, 0.0f, 1.0f));
    g.backward(y);
    for (float v : g.grad(x).data) CHECK(v == 1.0f);
}

TEST_CASE("backward: non-scalar output is rejected, unreachable leaves get zeros") {
    Graph g;
    int x = g.leaf(Tensor({2}, {1.0f, 2.0f}));
    CHECK_THROWS_AS(g.backward(x), ShapeError);
    int unused = g.leaf(Tensor::scalar(5.0f));
    int y = sum_all(g, x);
    g.backward(y);
    CHECK(g.grad_or_zero(unused).data[0] == 0.0f);
    CHECK_FALSE(g.has_grad(unused));
}

TEST_CASE("clamp_st: values and subgradient convention") {
    Graph g;
    int x = g.leaf(Tensor({3}, {-2.0f, 0.5f, 2.0f}));
    int y = clamp_st(g, x, 0.0f, 1.0f);
    CHECK(g.value(y).data == std::vector<float>{0.0f, 0.5f, 1.0f});
    g.backward(sum_all(g, y));
    CHECK(g.grad(x).data == std::vector<float>{0.0f, 1.0f, 0.0f});
    CHECK_THROWS_AS(clamp_st(g, x, 1.0f, 1.0f), ValueError);
}

// ---------------------------------------------------------------------------
// finite-difference suite: every primitive, >= 20 random instances each
// ---------------------------------------------------------------------------

TEST_CASE("gradcheck: elementwise arithmetic") {
    SplitMix64 rng(100);
    for (int t = 0; t < 20; ++t) {
        auto a = random_tensor({3, 4}, rng);
        auto b = random_tensor({3, 4}, rng);
        grad_check([](Graph64& g, const std::vector<int>& in) { return add(g, in[0], in[1]); },
                   {a, b}, rng.next());
        grad_check([](Graph64& g, const std::vector<int>& in) { return sub(g, in[0], in[1]); },
                   {a, b}, rng.next());
        grad_check([](Graph64& g, const std::vector<int>& in) { return mul(g, in[0], in[1]); },
                   {a, b}, rng.next());
        grad_check([](Graph64& g, const std::vector<int>& in) { return scale(g, in[0], 2.5); },
                   {a}, rng.next());
        grad_check([](Graph64& g, const std::vector<int>& in) { return add_const(g, in[0], 0.7); },
                   {a}, rng.next());
    }
}

TEST_CASE("gradcheck: broadcast add over leading axis") {
    SplitMix64 rng(101);
    for (int t = 0; t < 20; ++t) {
        auto a = random_tensor({4, 2, 3}, rng);
        auto b = random_tensor({2, 3}, rng);
        grad_check([](Graph64& g, const std::vector<int>& in) { return add_bcast0(g, in[0], in[1]); },
                   {a, b}, rng.next());
    }
}

TEST_CASE("gradcheck: relu and tanh") {
    SplitMix64 rng(102);
    for (int t = 0; t < 20; ++t) {
        auto x = random_tensor({4, 5}, rng, -1.0, 1.0, /*margin=*/5e-3);
        grad_check([](Graph64& g, const std::vector<int>& in) { return relu(g, in[0]); }, {x},
                   rng.next());
        grad_check([](Graph64& g, const std::vector<int>& in) { return tanh_op(g, in[0]); }, {x},
                   rng.next());
    }
}

TEST_CASE("gradcheck: clamp_st away from its boundaries") {
    SplitMix64 rng(103);
    for (int t = 0; t < 20; ++t) {
        // values in [-1,1] with lo=-0.5, hi=0.5; keep a margin around the kinks
        Tensor64 x({3, 4});
        for (auto& v : x.data) {
            do {
                v = rng.uniform_real(-1.0, 1.0);
            } while (std::abs(std::abs(v) - 0.5) < 5e-3);
        }
        grad_check(
            [](Graph64& g, const std::vector<int>& in) { return clamp_st(g, in[0], -0.5, 0.5); },
            {x}, rng.next());
    }
}

TEST_CASE("gradcheck: reductions") {
    SplitMix64 rng(104);
    for (int t = 0; t < 20; ++t) {
        auto x = random_tensor({3, 5}, rng);
        grad_check([](Graph64& g, const std::vector<int>& in) { return sum_all(g, in[0]); }, {x},
                   rng.next());
        grad_check([](Graph64& g, const std::vector<int>& in) { return mean_all(g, in[0]); }, {x},
                   rng.next());
    }
}

TEST_CASE("gradcheck: matmul and linear") {
    SplitMix64 rng(105);
    for (int t = 0; t < 20; ++t) {
        auto a = random_tensor({3, 4}, rng);
        auto b = random_tensor({4, 2}, rng);
        grad_check([](Graph64& g, const std::vector<int>& in) { return matmul(g, in[0], in[1]); },
                   {a, b}, rng.next());
        auto x = random_tensor({3, 4}, rng);
        auto w = random_tensor({5, 4}, rng);
        auto bias = random_tensor({5}, rng);
        grad_check(
            [](Graph64& g, const std::vector<int>& in) { return linear(g, in[0], in[1], in[2]); },
            {x, w, bias}, rng.next());
    }
}

TEST_CASE("gradcheck: conv2d over random geometries") {
    SplitMix64 rng(106);
    for (int t = 0; t < 20; ++t) {
        const int kh = static_cast<int>(rng.uniform_int(1, 3));
        const int kw = static_cast<int>(rng.uniform_int(1, 3));
        const int stride = static_cast<int>(rng.uniform_int(1, 2));
        const int pad = static_cast<int>(rng.uniform_int(0, 1));
        const int c = static_cast<int>(rng.uniform_int(1, 3));
        const int o = static_cast<int>(rng.uniform_int(1, 3));
        auto x = random_tensor({static_cast<int>(rng.uniform_int(1, 2)), c,
                                static_cast<int>(rng.uniform_int(kh, 6)),
                                static_cast<int>(rng.uniform_int(kw, 6))},
                               rng);
        auto w = random_tensor({o, c, kh, kw}, rng);
        auto b = random_tensor({o}, rng);
        grad_check(
            [stride, pad](Graph64& g, const std::vector<int>& in) {
                return conv2d(g, in[0], in[1], in[2], stride, pad);
            },
            {x, w, b}, rng.next());
    }
}

TEST_CASE("gradcheck: pooling, upsampling, reshapes, concats") {
    SplitMix64 rng(107);
    for (int t = 0; t < 20; ++t) {
        auto x = random_tensor({2, 3, 4, 4}, rng);
        grad_check([](Graph64& g, const std::vector<int>& in) { return global_avg_pool(g, in[0]); },
                   {x}, rng.next());
        grad_check(
            [](Graph64& g, const std::vector<int>& in) { return upsample2x_nearest(g, in[0]); },
            {x}, rng.next());
        auto m = random_tensor({3, 4}, rng);
        grad_check(
            [](Graph64& g, const std::vector<int>& in) { return reshape(g, in[0], {2, 6}); }, {m},
            rng.next());
        auto a = random_tensor({2, 3}, rng);
        auto b = random_tensor({4, 3}, rng);
        grad_check(
            [](Graph64& g, const std::vector<int>& in) { return concat_rows(g, in[0], in[1]); },
            {a, b}, rng.next());
        auto c = random_tensor({2, 5}, rng);
        auto d = random_tensor({2, 2}, rng);
        grad_check(
            [](Graph64& g, const std::vector<int>& in) { return concat_cols(g, in[0], in[1]); },
            {c, d}, rng.next());
    }
}

TEST_CASE("gradcheck: norms, normalization, similarities") {
    SplitMix64 rng(108);
    for (int t = 0; t < 20; ++t) {
        auto x = random_rows_min_norm(4, 6, rng);
        grad_check([](Graph64& g, const std::vector<int>& in) { return row_l2norm(g, in[0]); },
                   {x}, rng.next());
        grad_check([](Graph64& g, const std::vector<int>& in) { return normalize_rows(g, in[0]); },
                   {x}, rng.next());
        grad_check([](Graph64& g, const std::vector<int>& in) { return gram_rows(g, in[0]); }, {x},
                   rng.next());
        Tensor64 anchor = random_rows_min_norm(1, 6, rng);
        anchor.shape = {6};
        grad_check(
            [anchor](Graph64& g, const std::vector<int>& in) {
                return cosine_to_anchor(g, in[0], anchor);
            },
            {x}, rng.next());
        Tensor64 row = random_tensor({6}, rng);
        grad_check(
            [row](Graph64& g, const std::vector<int>& in) { return sub_row_const(g, in[0], row); },
            {x}, rng.next());
    }
}

TEST_CASE("gradcheck: softmax cross entropy and masked variants") {
    SplitMix64 rng(109);
    for (int t = 0; t < 20; ++t) {
        auto logits = random_tensor({4, 6}, rng, -2.0, 2.0);
        std::vector<int> labels;
        for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.uniform_int(0, 5)));
        grad_check(
            [labels](Graph64& g, const std::vector<int>& in) {
                return softmax_cross_entropy(g, in[0], labels);
            },
            {logits}, rng.next());

        // masked CE with a random mask that always keeps the target active
        std::vector<uint8_t> mask(4 * 6);
        std::vector<int> targets;
        for (int i = 0; i < 4; ++i) {
            targets.push_back(static_cast<int>(rng.uniform_int(0, 5)));
            for (int j = 0; j < 6; ++j)
                mask[static_cast<size_t>(i) * 6 + j] =
                    (j == targets[i] || rng.uniform_int(0, 1)) ? 1 : 0;
        }
        grad_check(
            [targets, mask](Graph64& g, const std::vector<int>& in) {
                return ce_rows_masked(g, in[0], targets, mask);
            },
            {logits}, rng.next());

        // supcon on a square logits matrix with guaranteed positives
        auto sq = random_tensor({6, 6}, rng, -2.0, 2.0);
        std::vector<int> lab = {0, 1, 0, 1, 0, 1};
        grad_check(
            [lab](Graph64& g, const std::vector<int>& in) {
                return supcon_from_logits(g, in[0], lab);
            },
            {sq}, rng.next());
    }
}

// ---------------------------------------------------------------------------
// adam
// ---------------------------------------------------------------------------

TEST_CASE("adam: zero gradients leave parameters untouched at every step") {
    Tensor p({3}, {1.0f, -2.0f, 0.5f});
    const Tensor orig = p;
    Tensor zero = Tensor::zeros({3});
    AdamState st(0.1f);
    for (int i = 0; i < 25; ++i) adam_step(p, zero, st);
    CHECK(p.data == orig.data);
    CHECK(st.step == 25);
}

TEST_CASE("adam: first step moves by exactly lr under constant unit gradient") {
    Tensor p = Tensor::scalar(1.0f);
    Tensor gr = Tensor::scalar(1.0f);
    AdamState st(0.1f);
    adam_step(p, gr, st);
    CHECK(p.data[0] == doctest::Approx(0.9f).epsilon(1e-6));
}

TEST_CASE("adam: 10-step scalar trajectory matches the hand-rolled recurrence") {
    Tensor64 p = Tensor64::scalar(1.0);
    AdamStateT<double> st(0.1);
    ScalarAdamOracle oracle;
    double want = 1.0;
    SplitMix64 rng(42);
    for (int i = 0; i < 10; ++i) {
        const double grad = rng.uniform_real(-1.0, 1.0);
        want = oracle.step(want, grad, 0.1, 0.9, 0.999, 1e-8);
        adam_step(p, Tensor64::scalar(grad), st);
        CHECK(p.data[0] == doctest::Approx(want).epsilon(1e-7));
    }
}

TEST_CASE("adam: shape mismatch and non-finite gradients are rejected") {
    Tensor p = Tensor::zeros({3});
    AdamState st;
    CHECK_THROWS_AS(adam_step(p, Tensor::zeros({4}), st), ShapeError);
    Tensor bad({3}, {0.0f, std::numeric_limits<float>::quiet_NaN(), 0.0f});
    CHECK_THROWS_AS(adam_step(p, bad, st), ValueError);
}

// ---------------------------------------------------------------------------
// softmax cross entropy values
// ---------------------------------------------------------------------------

TEST_CASE("softmax_cross_entropy: uniform logits give ln(K)") {
    Graph g;
    int logits = g.constant(Tensor::full({2, 10}, 0.25f));
    int loss = softmax_cross_entropy(g, logits, {3, 7});
    CHECK(g.value(loss).data[0] == doctest::Approx(std::log(10.0)).epsilon(1e-6));
}

TEST_CASE("softmax_cross_entropy: saturated correct logit gives ~0 loss") {
    Graph g;
    Tensor l = Tensor::zeros({1, 10});
    l.data[4] = 1000.0f;
    int loss = softmax_cross_entropy(g, g.constant(l), {4});
    CHECK(g.value(loss).data[0] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(std::isfinite(g.value(loss).data[0]));
}

TEST_CASE("softmax_cross_entropy: random batch matches the direct formula") {
    SplitMix64 rng(55);
    auto logits = random_tensor({4, 10}, rng, -3.0, 3.0);
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.uniform_int(0, 9)));
    Graph64 g;
    int loss = softmax_cross_entropy(g, g.constant(logits), labels);
    CHECK(g.value(loss).data[0] == doctest::Approx(naive_softmax_ce(logits, labels)).epsilon(1e-6));
}

TEST_CASE("softmax_cross_entropy: out-of-range label is rejected") {
    Graph g;
    int logits = g.constant(Tensor::zeros({2, 5}));
    CHECK_THROWS_AS(softmax_cross_entropy(g, logits, {1, 5}), ValueError);
}

TEST_CASE("softmax rows sum to one") {
    SplitMix64 rng(56);
    auto logits = random_tensor({8, 13}, rng, -5.0, 5.0);
    auto p = softmax_rows(logits);
    for (int i = 0; i < 8; ++i) {
        double s = 0.0;
        for (int j = 0; j < 13; ++j) s += p.data[static_cast<size_t>(i) * 13 + j];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

// ---------------------------------------------------------------------------
// finiteness contract
// ---------------------------------------------------------------------------

TEST_CASE("non-finite inputs are surfaced as errors, not propagated") {
    Graph g;
    Tensor bad({2}, {1.0f, std::numeric_limits<float>::infinity()});
    CHECK_THROWS_AS(g.leaf(bad), ValueError);
    CHECK_THROWS_AS(g.constant(bad), ValueError);
}

TEST_CASE("ops stay finite on finite inputs within their preconditions") {
    SplitMix64 rng(57);
    for (int t = 0; t < 50; ++t) {
        Graph g;
        auto x64 = random_rows_min_norm(4, 8, rng);
        int x = g.leaf(x64.cast<float>());
        int y = normalize_rows(g, x);
        int n = row_l2norm(g, y);
        int s = mean_all(g, n);
        g.backward(s);
        CHECK(g.value(s).all_finite());
        CHECK(g.grad_or_zero(x).all_finite());
    }
}
