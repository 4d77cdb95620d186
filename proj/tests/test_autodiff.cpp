#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "lvit/tape.hpp"
#include "testing.hpp"

using lvit::ContractError;
using lvit::NumericError;
using lvit::OpKind;
using lvit::Parameter;
using lvit::Rng;
using lvit::Shape;
using lvit::ShapeError;
using lvit::Tape;
using lvit::Tensor;
using lvit::ValueError;

namespace {

// Finite-difference property harness: checks the reverse-mode gradient of an
// arbitrary builder against central differences via grad_check. The builder
// output is reduced through random constant weights so the incoming cotangent
// is non-uniform.
double vjp_error(const std::function<Tensor(Tape&)>& op, std::vector<Parameter*> params,
                 Shape out_shape, std::uint64_t weight_seed) {
    Rng wrng(weight_seed);
    Tensor weights = testutil::random_tensor(std::move(out_shape), wrng, -1.0, 1.0);
    auto f = [&](Tape& t) -> Tensor {
        Tensor y = op(t);
        return t.reduce_sum(t.cmul(y, weights));
    };
    return lvit::grad_check(f, params, 1e-5).max_rel_err;
}

}  // namespace

TEST_CASE("matmul values") {
    Tape t;
    Tensor a = t.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    Tensor b = t.constant(Tensor({2, 2}, {5, 6, 7, 8}));
    Tensor c = t.matmul(a, b);
    REQUIRE(c.shape == Shape{2, 2});
    CHECK(c.data == std::vector<double>{19, 22, 43, 50});

    Tensor eye = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    Tensor d = t.matmul(a, eye);
    CHECK(d.data == a.data);

    Tensor bad = t.constant(Tensor({3, 2}));
    REQUIRE_THROWS_MATCHES(t.matmul(a, bad), ShapeError,
                           Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("[2x2]") &&
                                                           Catch::Matchers::ContainsSubstring("[3x2]")));
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(11);
    Parameter a("a", testutil::random_tensor({3, 4}, rng));
    Parameter b("b", testutil::random_tensor({4, 2}, rng));
    const double err = vjp_error(
        [&](Tape& t) { return t.matmul(t.watch(a), t.watch(b)); }, {&a, &b}, {3, 2}, 101);
    CHECK(err < 1e-6);
}

TEST_CASE("softmax rows") {
    Tape t;
    Tensor u = t.softmax_lastaxis(t.constant(Tensor({1, 4}, {0, 0, 0, 0})));
    for (double v : u.data) CHECK(v == Catch::Approx(0.25).margin(1e-15));

    // Direct-formula oracle on one row.
    Tensor s = t.softmax_lastaxis(t.constant(Tensor({1, 3}, {1, 2, 3})));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(std::abs(s.data[0] - std::exp(1.0) / z) < 1e-15);
    CHECK(std::abs(s.data[1] - std::exp(2.0) / z) < 1e-15);
    CHECK(std::abs(s.data[2] - std::exp(3.0) / z) < 1e-15);

    // Shift invariance and normalization on random rows.
    Rng rng(5);
    Tensor x = testutil::random_tensor({6, 9}, rng, -4.0, 4.0);
    Tensor shifted = x;
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 9; ++c) shifted.data[r * 9 + c] += 137.0;
    Tensor p0 = t.softmax_lastaxis(t.constant(x));
    Tensor p1 = t.softmax_lastaxis(t.constant(shifted));
    for (std::size_t i = 0; i < p0.numel(); ++i) {
        CHECK(std::abs(p0.data[i] - p1.data[i]) < 1e-12);
        CHECK(p0.data[i] > 0.0);
        CHECK(p0.data[i] <= 1.0);
    }
    for (std::size_t r = 0; r < 6; ++r) {
        double sum = 0;
        for (std::size_t c = 0; c < 9; ++c) sum += p0.data[r * 9 + c];
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax gradient matches finite differences") {
    Rng rng(12);
    Parameter x("x", testutil::random_tensor({4, 5}, rng, -2.0, 2.0));
    const double err =
        vjp_error([&](Tape& t) { return t.softmax_lastaxis(t.watch(x)); }, {&x}, {4, 5}, 102);
    CHECK(err < 1e-6);
}

TEST_CASE("layer_norm values") {
    Tape t;
    Tensor gain = t.constant(Tensor({3}, {1, 1, 1}));
    Tensor bias = t.constant(Tensor({3}, {0, 0, 0}));

    // A constant row has zero deviation, so the output is exactly the bias.
    Tensor c = t.layer_norm(t.constant(Tensor({1, 3}, {7, 7, 7})), gain, bias);
    CHECK(c.data == std::vector<double>{0, 0, 0});
    Tensor b2 = t.constant(Tensor({3}, {0.5, -1.5, 2.0}));
    Tensor c2 = t.layer_norm(t.constant(Tensor({1, 3}, {7, 7, 7})), gain, b2);
    CHECK(c2.data == std::vector<double>{0.5, -1.5, 2.0});

    // Direct-formula oracle for one row.
    Tensor y = t.layer_norm(t.constant(Tensor({1, 3}, {1, 2, 3})), gain, bias);
    const double mean = 2.0;
    const double var = 2.0 / 3.0;
    const double rstd = 1.0 / std::sqrt(var + 1e-5);
    CHECK(std::abs(y.data[0] - (1.0 - mean) * rstd) < 1e-12);
    CHECK(std::abs(y.data[1] - 0.0) < 1e-12);
    CHECK(std::abs(y.data[2] - (3.0 - mean) * rstd) < 1e-12);

    // Normalized rows have near-zero mean and near-unit variance.
    Rng rng(6);
    Tensor x = testutil::random_tensor({5, 16}, rng);
    Tensor n = t.layer_norm(t.constant(x),
                            t.constant(Tensor({16}, std::vector<double>(16, 1.0))),
                            t.constant(Tensor({16})));
    for (std::size_t r = 0; r < 5; ++r) {
        double m = 0, v = 0;
        for (std::size_t c = 0; c < 16; ++c) m += n.data[r * 16 + c] / 16.0;
        for (std::size_t c = 0; c < 16; ++c) {
            const double d = n.data[r * 16 + c] - m;
            v += d * d / 16.0;
        }
        CHECK(std::abs(m) < 1e-9);
        CHECK(std::abs(v - 1.0) < 1e-4);
    }

    REQUIRE_THROWS_AS(t.layer_norm(t.constant(Tensor({2, 4})), gain, bias), ShapeError);
    REQUIRE_THROWS_AS(
        t.layer_norm(t.constant(Tensor({1, 3})), gain, bias, 0.0), ValueError);
}

TEST_CASE("layer_norm gradient matches finite differences") {
    Rng rng(13);
    Parameter x("x", testutil::random_tensor({3, 6}, rng));
    Parameter gain("gain", testutil::random_tensor({6}, rng, 0.5, 1.5));
    Parameter bias("bias", testutil::random_tensor({6}, rng));
    const double err = vjp_error(
        [&](Tape& t) { return t.layer_norm(t.watch(x), t.watch(gain), t.watch(bias)); },
        {&x, &gain, &bias}, {3, 6}, 103);
    CHECK(err < 1e-6);
}

TEST_CASE("gelu values") {
    Tape t;
    Tensor y = t.gelu(t.constant(Tensor({4}, {0.0, 10.0, -10.0, 1.0})));
    CHECK(y.data[0] == 0.0);
    CHECK(std::abs(y.data[1] - 10.0) < 1e-6);
    CHECK(std::abs(y.data[2]) < 1e-6);
    // Published tanh approximation evaluated directly.
    const double u = 0.7978845608028654 * (1.0 + 0.044715);
    CHECK(std::abs(y.data[3] - 0.5 * (1.0 + std::tanh(u))) < 1e-12);
}

TEST_CASE("gelu gradient matches finite differences") {
    Rng rng(14);
    Parameter x("x", testutil::random_tensor({4, 4}, rng, -2.5, 2.5));
    const double err = vjp_error([&](Tape& t) { return t.gelu(t.watch(x)); }, {&x}, {4, 4}, 104);
    CHECK(err < 1e-6);
}

TEST_CASE("dropout modes") {
    Rng rng(7);
    Tensor ones({100000}, std::vector<double>(100000, 1.0));

    SECTION("identity when p is zero or when evaluating") {
        Tape t;
        Rng r1(1), r2(1);
        Tensor a = t.dropout(t.constant(ones), 0.0, r1, true);
        CHECK(a.data == ones.data);
        Tensor b = t.dropout(t.constant(ones), 0.3, r2, false);
        CHECK(b.data == ones.data);
        // Neither path consumed randomness.
        Rng fresh(1);
        CHECK(r1.next_u64() == fresh.next_u64());
    }

    SECTION("inverted scaling keeps the mean near one") {
        Tape t;
        const double p = 0.3;
        Tensor y = t.dropout(t.constant(ones), p, rng, true);
        double mean = 0;
        const double keep = 1.0 / (1.0 - p);
        for (double v : y.data) {
            CHECK((v == 0.0 || v == keep));
            mean += v / double(y.numel());
        }
        // Var of one element is p/(1-p); allow three standard errors.
        const double se = std::sqrt(p / (1.0 - p) / double(y.numel()));
        CHECK(std::abs(mean - 1.0) < 3.0 * se);
    }

    SECTION("same seed gives the same mask") {
        Tape t;
        Rng r1(99), r2(99);
        Tensor a = t.dropout(t.constant(Tensor({64}, std::vector<double>(64, 2.0))), 0.5, r1, true);
        Tensor b = t.dropout(t.constant(Tensor({64}, std::vector<double>(64, 2.0))), 0.5, r2, true);
        CHECK(a.data == b.data);
    }

    SECTION("invalid rate") {
        Tape t;
        Rng r(1);
        REQUIRE_THROWS_AS(t.dropout(t.constant(Tensor({4})), 1.0, r, true), ValueError);
        REQUIRE_THROWS_AS(t.dropout(t.constant(Tensor({4})), -0.1, r, true), ValueError);
    }
}

TEST_CASE("dropout gradient matches finite differences") {
    Rng rng(15);
    Parameter x("x", testutil::random_tensor({8, 8}, rng));
    // A fixed internal seed keeps the mask identical across the re-evaluations
    // that finite differencing performs.
    const double err = vjp_error(
        [&](Tape& t) {
            Rng mask_rng(4242);
            return t.dropout(t.watch(x), 0.4, mask_rng, true);
        },
        {&x}, {8, 8}, 105);
    CHECK(err < 1e-6);
}

TEST_CASE("shape ops") {
    Tape t;
    Rng rng(8);

    SECTION("transpose is an involution") {
        Tensor x = t.constant(testutil::random_tensor({3, 5}, rng));
        Tensor back = t.transpose(t.transpose(x));
        CHECK(back.shape == x.shape);
        CHECK(back.data == x.data);
        Tensor tr = t.transpose(x);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 5; ++j) CHECK(tr.data[j * 3 + i] == x.data[i * 5 + j]);
        REQUIRE_THROWS_AS(t.transpose(x, 0, 2), ShapeError);
    }

    SECTION("reshape keeps element order") {
        Tensor x = t.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
        Tensor y = t.reshape(x, {3, 2});
        CHECK(y.shape == Shape{3, 2});
        CHECK(y.data == x.data);
        REQUIRE_THROWS_AS(t.reshape(x, {4, 2}), ShapeError);
    }

    SECTION("concat stacks rows") {
        Tensor a = t.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
        Tensor b = t.constant(Tensor({1, 3}, {7, 8, 9}));
        Tensor c = t.concat({a, b}, 0);
        REQUIRE(c.shape == Shape{3, 3});
        CHECK(c.data == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
        Tensor d = t.concat({a, t.constant(Tensor({2, 1}, {10, 20}))}, 1);
        REQUIRE(d.shape == Shape{2, 4});
        CHECK(d.data == std::vector<double>{1, 2, 3, 10, 4, 5, 6, 20});
        REQUIRE_THROWS_AS(t.concat({a, b}, 1), ShapeError);
        REQUIRE_THROWS_AS(t.concat({}, 0), ShapeError);
    }

    SECTION("slice extracts a contiguous band") {
        Tensor x = t.constant(Tensor({3, 4}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}));
        Tensor rows = t.slice(x, 0, 1, 2);
        CHECK(rows.data == std::vector<double>{4, 5, 6, 7, 8, 9, 10, 11});
        Tensor cols = t.slice(x, 1, 1, 2);
        REQUIRE(cols.shape == Shape{3, 2});
        CHECK(cols.data == std::vector<double>{1, 2, 5, 6, 9, 10});
        REQUIRE_THROWS_AS(t.slice(x, 1, 3, 2), ShapeError);
    }
}

TEST_CASE("shape op gradients match finite differences") {
    Rng rng(16);
    Parameter x("x", testutil::random_tensor({3, 4}, rng));
    Parameter y("y", testutil::random_tensor({2, 4}, rng));

    CHECK(vjp_error([&](Tape& t) { return t.transpose(t.watch(x)); }, {&x}, {4, 3}, 106) < 1e-6);
    CHECK(vjp_error([&](Tape& t) { return t.reshape(t.watch(x), {2, 6}); }, {&x}, {2, 6}, 107) <
          1e-6);
    CHECK(vjp_error([&](Tape& t) { return t.concat({t.watch(x), t.watch(y)}, 0); }, {&x, &y},
                    {5, 4}, 108) < 1e-6);
    CHECK(vjp_error([&](Tape& t) { return t.slice(t.watch(x), 1, 1, 2); }, {&x}, {3, 2}, 109) <
          1e-6);
    CHECK(vjp_error([&](Tape& t) { return t.add(t.watch(x), t.scale(t.watch(x), 2.0)); }, {&x},
                    {3, 4}, 110) < 1e-6);

    Parameter row("row", testutil::random_tensor({4}, rng));
    CHECK(vjp_error([&](Tape& t) { return t.add_row(t.watch(x), t.watch(row)); }, {&x, &row},
                    {3, 4}, 111) < 1e-6);
    CHECK(vjp_error([&](Tape& t) { return t.cmul(t.watch(x), Tensor({3, 4}, std::vector<double>(12, 0.5))); },
                    {&x}, {3, 4}, 112) < 1e-6);
}

TEST_CASE("reductions") {
    Tape t;
    Tensor z = t.reduce_sum(t.constant(Tensor({4, 4})));
    REQUIRE(z.numel() == 1);
    CHECK(z.data[0] == 0.0);

    Tensor m = t.reduce_mean(t.constant(Tensor({3}, {1, 2, 3})));
    CHECK(m.data[0] == Catch::Approx(2.0).margin(1e-15));

    Tensor x = t.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    Tensor rows = t.reduce_sum(x, 1);
    REQUIRE(rows.shape == Shape{2});
    CHECK(rows.data == std::vector<double>{6, 15});
    Tensor cols = t.reduce_sum(x, 0);
    REQUIRE(cols.shape == Shape{3});
    CHECK(cols.data == std::vector<double>{5, 7, 9});
    REQUIRE_THROWS_AS(t.reduce_sum(x, 2), ShapeError);

    // Gradient of the mean is uniform 1/n.
    Parameter p("p", Tensor({3}, {1, 2, 3}));
    Tape t2;
    Tensor loss = t2.reduce_mean(t2.watch(p));
    p.zero_grad();
    t2.backward(loss);
    for (double g : p.grad.data) CHECK(std::abs(g - 1.0 / 3.0) < 1e-15);
}

TEST_CASE("reduction gradients match finite differences") {
    Rng rng(17);
    Parameter x("x", testutil::random_tensor({3, 4}, rng));
    CHECK(vjp_error([&](Tape& t) { return t.reduce_sum(t.watch(x), 0); }, {&x}, {4}, 113) < 1e-6);
    CHECK(vjp_error([&](Tape& t) { return t.reduce_mean(t.watch(x), 1); }, {&x}, {3}, 114) < 1e-6);
    CHECK(vjp_error([&](Tape& t) { return t.reduce_mean(t.watch(x)); }, {&x}, {1}, 115) < 1e-6);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    Rng rng(18);
    Parameter logits("logits", testutil::random_tensor({3, 5}, rng, -2.0, 2.0));
    auto f = [&](Tape& t) { return t.cross_entropy(t.watch(logits), {1, 4, 0}); };
    CHECK(lvit::grad_check(f, {&logits}, 1e-5).max_rel_err < 1e-6);
}

TEST_CASE("backward accumulates and validates") {
    SECTION("sum of a watched parameter gives unit gradients") {
        Parameter w("w", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
        Tape t;
        Tensor loss = t.reduce_sum(t.watch(w));
        w.zero_grad();
        t.backward(loss);
        for (double g : w.grad.data) CHECK(g == 1.0);
    }

    SECTION("repeated watch shares one node and one gradient slot") {
        Parameter w("w", Tensor({3}, {1, 2, 3}));
        Tape t;
        Tensor a = t.watch(w);
        Tensor b = t.watch(w);
        CHECK(a.node == b.node);
        Tensor loss = t.reduce_sum(t.add(a, b));
        w.zero_grad();
        t.backward(loss);
        for (double g : w.grad.data) CHECK(g == 2.0);
    }

    SECTION("two backward passes double the stored gradient") {
        Parameter w("w", Tensor({4}, {0.5, -1, 2, 3}));
        Tape t;
        Tensor loss = t.reduce_sum(t.gelu(t.watch(w)));
        w.zero_grad();
        t.backward(loss);
        const std::vector<double> once = w.grad.data;
        t.backward(loss);
        for (std::size_t i = 0; i < once.size(); ++i) CHECK(w.grad.data[i] == 2.0 * once[i]);
    }

    SECTION("rejects non-scalar losses and foreign tensors") {
        Parameter w("w", Tensor({2, 2}, {1, 2, 3, 4}));
        Tape t;
        Tensor y = t.watch(w);
        REQUIRE_THROWS_AS(t.backward(y), ContractError);
        Tape other;
        Tensor z = other.reduce_sum(other.constant(Tensor({2}, {1, 2})));
        REQUIRE_THROWS_AS(t.backward(z), ContractError);
        Tensor detached;
        REQUIRE_THROWS_AS(t.index_of(detached), ContractError);
    }
}

TEST_CASE("tape inspection") {
    Parameter w("w", Tensor({2, 2}, {1, 2, 3, 4}));
    Tape t;
    Tensor s = t.softmax_lastaxis(t.watch(w));
    Tensor loss = t.reduce_sum(s);
    (void)loss;
    REQUIRE(t.size() == 3);
    CHECK(t.entry(0).kind == OpKind::kLeaf);
    CHECK(t.entry(1).kind == OpKind::kSoftmax);
    CHECK(t.entry(2).kind == OpKind::kReduceSum);
    const Tensor& recorded = t.value(t.index_of(s));
    CHECK(recorded.data == s.data);
    CHECK(t.all_values_finite());
}

TEST_CASE("grad_check quadratic form is exact to rounding") {
    Parameter w("w", Tensor({1, 3}, {0.3, -1.2, 0.7}));
    Tensor a({3, 3}, {2, 1, 0, 1, 3, -1, 0, -1, 1});
    auto f = [&](Tape& t) {
        Tensor wt = t.watch(w);
        return t.matmul(t.matmul(wt, t.constant(a)), t.transpose(wt));
    };
    const auto report = lvit::grad_check(f, {&w}, 1e-5);
    CHECK(report.max_rel_err < 1e-8);
    CHECK(report.worst_param == "w");
    REQUIRE(report.per_param.size() == 1);
}

TEST_CASE("grad_check handles constants and rejects bad inputs") {
    Parameter w("w", Tensor({2}, {1, 2}));
    auto constant_f = [&](Tape& t) { return t.reduce_sum(t.constant(Tensor({3}, {1, 2, 3}))); };
    CHECK(lvit::grad_check(constant_f, {&w}, 1e-5).max_rel_err == 0.0);

    auto f = [&](Tape& t) { return t.reduce_sum(t.watch(w)); };
    REQUIRE_THROWS_AS(lvit::grad_check(f, {&w}, 0.0), ValueError);

    const double inf = std::numeric_limits<double>::infinity();
    Parameter bad("spike", Tensor({2}, {1, 2}));
    auto inf_f = [&](Tape& t) {
        return t.reduce_sum(t.cmul(t.watch(bad), Tensor({2}, {inf, 1.0})));
    };
    REQUIRE_THROWS_MATCHES(
        lvit::grad_check(inf_f, {&bad}, 1e-5), NumericError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("spike")));
}

TEST_CASE("backward fault injection perturbs gradients") {
    Rng rng(19);
    Parameter a("a", testutil::random_tensor({2, 3}, rng));
    Parameter b("b", testutil::random_tensor({3, 2}, rng));
    auto f = [&](Tape& t) {
        t.inject_backward_fault(OpKind::kMatMul, 2.0);
        return t.reduce_sum(t.matmul(t.watch(a), t.watch(b)));
    };
    const auto report = lvit::grad_check(f, {&a, &b}, 1e-5);
    CHECK(report.max_rel_err > 1e-3);
}
