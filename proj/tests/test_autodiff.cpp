#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fewshot/graph.hpp"
#include "fewshot/rng.hpp"
#include "test_util.hpp"

using namespace fewshot;
using namespace fewshot::ad;

TEST_CASE("elementwise arithmetic") {
    Graph g;
    auto a = tensor({2}, {1, 2});
    auto b = tensor({2}, {3, 4});
    CHECK(g.add(a, b)->data == std::vector<double>{4, 6});
    CHECK(g.sub(b, a)->data == std::vector<double>{2, 2});
    CHECK(g.mul(a, b)->data == std::vector<double>{3, 8});
    CHECK(g.div(b, a)->data == std::vector<double>{3, 2});
    CHECK(g.exp(zeros({2}))->data == std::vector<double>{1, 1});
    CHECK(g.relu(tensor({3}, {-1, 0, 2}))->data == std::vector<double>{0, 0, 2});
    CHECK(g.scale(a, 2.0)->data == std::vector<double>{2, 4});
}

TEST_CASE("scalar broadcast") {
    Graph g;
    auto a = tensor({2, 2}, {1, 2, 3, 4});
    auto s = scalar(10.0);
    CHECK(g.add(a, s)->data == std::vector<double>{11, 12, 13, 14});
    CHECK(g.mul(s, a)->data == std::vector<double>{10, 20, 30, 40});
    CHECK(g.sub(s, a)->data == std::vector<double>{9, 8, 7, 6});
}

TEST_CASE("shape mismatch errors name both shapes") {
    Graph g;
    auto a = zeros({2, 3});
    auto b = zeros({3, 2});
    CHECK_THROWS_WITH_AS(g.add(a, b), doctest::Contains("[2x3]"), std::invalid_argument);
    CHECK_THROWS_AS(g.matmul(zeros({2, 3}), zeros({2, 3})), std::invalid_argument);
}

TEST_CASE("log and div guard their domains") {
    Graph g;
    CHECK_THROWS_AS(g.log(tensor({2}, {1.0, 0.0})), std::invalid_argument);
    CHECK_THROWS_AS(g.log(tensor({1}, {-3.0})), std::invalid_argument);
    CHECK_THROWS_AS(g.div(tensor({2}, {1, 1}), tensor({2}, {1, 0})), std::invalid_argument);
    CHECK_THROWS_AS(g.exp(tensor({1}, {1e4})), std::invalid_argument);
}

TEST_CASE("log inverts exp") {
    Rng rng(11);
    Graph g;
    for (int t = 0; t < 50; ++t) {
        auto x = tensor({4}, {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3),
                              rng.uniform(-3, 3)});
        auto back = g.log(g.exp(x));
        for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(back->data[i] - x->data[i]) < 1e-12);
    }
}

TEST_CASE("matmul identity and hand example") {
    Graph g;
    auto eye = zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye->data[i * 3 + i] = 1.0;
    auto a = tensor({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    CHECK(g.matmul(a, eye)->data == a->data);

    auto row = tensor({1, 2}, {1, 2});
    auto col = tensor({2, 1}, {3, 4});
    CHECK(g.matmul(row, col)->data == std::vector<double>{11});
}

TEST_CASE("matmul matches the triple-loop oracle") {
    Rng rng(7);
    for (int t = 0; t < 20; ++t) {
        auto a = testutil::random_tensor({4, 5}, rng);
        auto b = testutil::random_tensor({5, 3}, rng);
        Graph g;
        auto c = g.matmul(tensor(a.shape, a.data), tensor(b.shape, b.data));
        const auto want = testutil::matmul_oracle(a.data, b.data, 4, 5, 3);
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(c->data[i] - want[i]) < 1e-12);
    }
}

TEST_CASE("softmax basics") {
    Graph g;
    auto u = g.softmax(zeros({2}));
    CHECK(u->data[0] == doctest::Approx(0.5).epsilon(1e-12));

    // hand-computed: softmax([ln 1, ln 2, ln 3]) = [1/6, 2/6, 3/6]
    auto v = g.softmax(tensor({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
    CHECK(std::abs(v->data[0] - 1.0 / 6.0) < 1e-12);
    CHECK(std::abs(v->data[1] - 2.0 / 6.0) < 1e-12);
    CHECK(std::abs(v->data[2] - 3.0 / 6.0) < 1e-12);
}

TEST_CASE("softmax rows sum to one and shifts cancel") {
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        auto x = testutil::random_tensor({3, 5}, rng, -10, 10);
        Graph g;
        auto y = g.softmax(tensor(x.shape, x.data));
        for (std::size_t r = 0; r < 3; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 5; ++c) {
                const double v = y->data[r * 5 + c];
                CHECK(v > 0.0);
                CHECK(v < 1.0);
                s += v;
            }
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
        const double shift = rng.uniform(-100, 100);
        auto xs = x;
        for (auto& v : xs.data) v += shift;
        auto y2 = g.softmax(tensor(xs.shape, xs.data));
        for (std::size_t i = 0; i < y->numel(); ++i) CHECK(std::abs(y->data[i] - y2->data[i]) < 1e-12);
    }
}

TEST_CASE("layer_norm closed-form cases") {
    Graph g;
    auto gain = full({4}, 1.0);
    auto bias = zeros({4});

    auto constant = g.layer_norm(full({4}, 3.0), gain, bias, 1e-5);
    for (double v : constant->data) CHECK(std::abs(v) < 1e-9);

    auto two = g.layer_norm(tensor({2}, {1, -1}), full({2}, 1.0), zeros({2}), 1e-12);
    CHECK(two->data[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(two->data[1] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("layer_norm matches the direct formula") {
    Rng rng(5);
    const double eps = 1e-5;
    for (int t = 0; t < 50; ++t) {
        auto x = testutil::random_tensor({2, 6}, rng, -4, 4);
        auto gv = testutil::random_tensor({6}, rng, 0.5, 2.0);
        auto bv = testutil::random_tensor({6}, rng, -1, 1);
        Graph g;
        auto y = g.layer_norm(tensor(x.shape, x.data), tensor(gv.shape, gv.data),
                              tensor(bv.shape, bv.data), eps);
        for (std::size_t r = 0; r < 2; ++r) {
            double mu = 0.0;
            for (std::size_t c = 0; c < 6; ++c) mu += x.data[r * 6 + c];
            mu /= 6.0;
            double var = 0.0;
            for (std::size_t c = 0; c < 6; ++c) {
                var += (x.data[r * 6 + c] - mu) * (x.data[r * 6 + c] - mu);
            }
            var /= 6.0;
            for (std::size_t c = 0; c < 6; ++c) {
                const double want =
                    (x.data[r * 6 + c] - mu) / std::sqrt(var + eps) * gv.data[c] + bv.data[c];
                CHECK(std::abs(y->data[r * 6 + c] - want) < 1e-12);
            }
        }
    }
}

TEST_CASE("normalized rows have zero mean and unit variance") {
    Rng rng(9);
    auto x = testutil::random_tensor({1, 32}, rng, -5, 5);
    Graph g;
    auto y = g.layer_norm(tensor(x.shape, x.data), full({32}, 1.0), zeros({32}), 1e-9);
    double mu = 0.0;
    for (double v : y->data) mu += v;
    mu /= 32.0;
    CHECK(std::abs(mu) < 1e-9);
    double var = 0.0;
    for (double v : y->data) var += (v - mu) * (v - mu);
    var /= 32.0;
    CHECK(std::abs(var - 1.0) < 1e-6);
}

TEST_CASE("backward of sum is all ones; of sum of squares is 2x") {
    Graph g;
    auto x = tensor({2, 3}, {1, -2, 3, 0.5, -0.25, 4}, true);
    auto loss = g.sum(x);
    g.backward(loss);
    for (double v : x->grad) CHECK(v == 1.0);

    Graph g2;
    auto y = tensor({4}, {1, -2, 3, 0.5}, true);
    g2.backward(g2.sum(g2.mul(y, y)));
    for (std::size_t i = 0; i < 4; ++i) CHECK(y->grad[i] == doctest::Approx(2 * y->data[i]));
}

TEST_CASE("two consumers accumulate additively") {
    // z = sum(x*x) + sum(x*c): grad = 2x + c
    auto x = tensor({3}, {1, 2, 3}, true);
    auto c = tensor({3}, {10, 20, 30});
    Graph g;
    auto loss = g.add(g.sum(g.mul(x, x)), g.sum(g.mul(x, c)));
    g.backward(loss);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(x->grad[i] == doctest::Approx(2 * x->data[i] + c->data[i]));
    }

    // equals the sum of the two single-consumer gradients
    auto x1 = tensor({3}, {1, 2, 3}, true);
    Graph g1;
    g1.backward(g1.sum(g1.mul(x1, x1)));
    auto x2 = tensor({3}, {1, 2, 3}, true);
    Graph g2;
    g2.backward(g2.sum(g2.mul(x2, c)));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(x->grad[i] == doctest::Approx(x1->grad[i] + x2->grad[i]));
    }
}

TEST_CASE("backward rejects non-scalar loss and empty graphs") {
    Graph g;
    auto x = tensor({2}, {1, 2}, true);
    CHECK_THROWS_AS(g.backward(x), std::invalid_argument);  // empty graph
    auto y = g.mul(x, x);
    CHECK_THROWS_AS(g.backward(y), std::invalid_argument);  // non-scalar
}

TEST_CASE("every op kind passes finite-difference checks") {
    Rng rng(1234);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        auto a = testutil::random_tensor({3, 4}, rng, 0.3, 2.0);  // positive: feeds log/div
        auto b = testutil::random_tensor({3, 4}, rng, 0.3, 2.0);
        auto m = testutil::random_tensor({4, 3}, rng, -1.5, 1.5);
        auto gain = testutil::random_tensor({3}, rng, 0.5, 1.5);
        auto bias = testutil::random_tensor({3}, rng, -0.5, 0.5);
        const double err = grad_check(
            [](Graph& g, const std::vector<TensorPtr>& xs) {
                auto [a, b, m, gain, bias] = std::tuple{xs[0], xs[1], xs[2], xs[3], xs[4]};
                auto mixed = g.div(g.mul(g.add(a, b), g.exp(g.scale(g.sub(a, b), 0.5))), b);
                auto logd = g.log(g.add(mixed, full(mixed->shape, 0.5)));
                auto prod = g.matmul(logd, m);                       // [3,3]
                auto normed = g.layer_norm(prod, gain, bias, 1e-5);  // row-wise
                auto soft = g.softmax(normed);
                auto lse = g.logsumexp_rows(g.relu(g.transpose(prod)));
                auto pooled = g.sum(g.gather_rows(soft, {0, 2, 1, 0}));
                return g.add(g.add(pooled, g.sum(lse)),
                             g.sum(g.slice_cols(g.concat_rows({soft, normed}), 1, 2)));
            },
            {a, b, m, gain, bias});
        worst = std::max(worst, err);
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("gather, concat and slice round values through") {
    Graph g;
    auto m = tensor({3, 2}, {1, 2, 3, 4, 5, 6});
    auto picked = g.gather_rows(m, {2, 0, 2});
    CHECK(picked->data == std::vector<double>{5, 6, 1, 2, 5, 6});
    CHECK_THROWS_AS(g.gather_rows(m, {3}), std::invalid_argument);

    auto ab = g.concat_rows({tensor({1, 2}, {1, 2}), tensor({2, 2}, {3, 4, 5, 6})});
    CHECK(ab->shape == Shape{3, 2});
    auto cc = g.concat_cols({tensor({2, 1}, {1, 2}), tensor({2, 2}, {3, 4, 5, 6})});
    CHECK(cc->data == std::vector<double>{1, 3, 4, 2, 5, 6});
    CHECK(g.slice_cols(cc, 1, 2)->data == std::vector<double>{3, 4, 5, 6});
}

TEST_CASE("repeated gather ids accumulate embedding grads") {
    auto m = tensor({2, 2}, {1, 2, 3, 4}, true);
    Graph g;
    g.backward(g.sum(g.gather_rows(m, {0, 0, 1})));
    CHECK(m->grad == std::vector<double>{2, 2, 1, 1});
}

TEST_CASE("grad_check is near-exact for linear programs") {
    Rng rng(99);
    auto x = testutil::random_tensor({5}, rng, -2, 2);
    const double err = grad_check(
        [](Graph& g, const std::vector<TensorPtr>& xs) { return g.sum(xs[0]); }, {x});
    CHECK(err < 1e-10);
}

TEST_CASE("grad_check validates its step size") {
    Rng rng(1);
    auto x = testutil::random_tensor({2}, rng, -1, 1);
    GradCheckOptions opts;
    opts.step = 1e-2;
    CHECK_THROWS_AS(grad_check([](Graph& g, const std::vector<TensorPtr>& xs) { return g.sum(xs[0]); },
                               {x}, opts),
                    std::invalid_argument);
}

TEST_CASE("ops are deterministic bit for bit") {
    Rng rng(42);
    auto x = testutil::random_tensor({4, 4}, rng, -2, 2);
    auto w = testutil::random_tensor({4, 4}, rng, -2, 2);
    auto run = [&]() {
        Graph g;
        auto y = g.softmax(g.matmul(tensor(x.shape, x.data), tensor(w.shape, w.data)));
        return y->data;
    };
    CHECK(run() == run());
}

TEST_CASE("dropout scales kept entries and is off at rate zero") {
    Graph g;
    auto x = full({100}, 1.0);
    CHECK(g.dropout(x, 0.0, 7) == x);  // identity, not recorded
    auto y = g.dropout(x, 0.5, 7);
    std::size_t kept = 0;
    for (double v : y->data) {
        CHECK((v == 0.0 || v == 2.0));
        kept += v != 0.0;
    }
    CHECK(kept > 20);
    CHECK(kept < 80);
    auto y2 = g.dropout(x, 0.5, 7);
    CHECK(y->data == y2->data);  // same draw seed, same mask
}
