#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stormcast/autodiff.hpp"
#include "stormcast/verify.hpp"

using namespace stormcast;

TEST_CASE("softmax of a constant row is uniform and rows sum to one") {
    Tape tape;
    Var x = tape.leaf(Tensor({2, 3}, {0, 0, 0, 1.0, 2.0, 3.0}), true);
    Var y = softmax_lastdim(x);
    const auto& d = y.value().data;
    CHECK(d[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(d[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(d[2] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(std::abs(d[0] + d[1] + d[2] - 1.0) < 1e-12);
    CHECK(std::abs(d[3] + d[4] + d[5] - 1.0) < 1e-12);
}

TEST_CASE("masked positions get weight below 1e-30") {
    Tape tape;
    Var x = tape.leaf(Tensor({1, 4}, {0.3, -1.2, 2.0, 0.9}), false);
    Tensor mask({1, 4}, {0.0, 1.0, 0.0, 1.0});
    Var y = softmax_lastdim(masked_fill(x, mask, -1e30));
    CHECK(y.value().data[1] < 1e-30);
    CHECK(y.value().data[3] < 1e-30);
    CHECK(y.value().data[0] + y.value().data[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("relu value and gradient mask") {
    Tape tape;
    Var x = tape.leaf(Tensor({1, 2}, {-1.0, 2.0}), true);
    Var y = relu(x);
    CHECK(y.value().data[0] == 0.0);
    CHECK(y.value().data[1] == 2.0);

    Var loss = scale(reduce_mean(y), 2.0);  // = sum
    tape.backward(loss);
    CHECK(x.grad().data[0] == 0.0);
    CHECK(x.grad().data[1] == 1.0);
}

TEST_CASE("matmul values and shape errors") {
    Tape tape;
    Var a = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}), false);
    Var b = tape.leaf(Tensor({2, 2}, {5, 6, 7, 8}), false);
    Var c = matmul(a, b);
    CHECK(c.value().data == std::vector<double>{19, 22, 43, 50});

    Var bad = tape.leaf(Tensor::zeros({3, 2}), false);
    CHECK_THROWS_WITH_AS(matmul(a, bad) /* (2,2)x(3,2) */,
                         doctest::Contains("matmul"), ShapeError);
}

TEST_CASE("add broadcasts a trailing-shape bias") {
    Tape tape;
    Var x = tape.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), true);
    Var b = tape.leaf(Tensor({3}, {10, 20, 30}), true);
    Var y = add(x, b);
    CHECK(y.value().data == std::vector<double>{11, 22, 33, 14, 25, 36});

    tape.backward(scale(reduce_mean(y), 6.0));
    CHECK(b.grad().data == std::vector<double>{2, 2, 2});
    CHECK(x.grad().data == std::vector<double>(6, 1.0));
}

TEST_CASE("gradient accumulates when a value is used twice") {
    Tape tape;
    Var x = tape.leaf(Tensor({3}, {1.0, -2.0, 0.5}), true);
    Var y = mul(x, x);
    Var loss = scale(reduce_mean(y), 3.0);  // = sum of squares
    tape.backward(loss);
    CHECK(x.grad().data[0] == doctest::Approx(2.0));
    CHECK(x.grad().data[1] == doctest::Approx(-4.0));
    CHECK(x.grad().data[2] == doctest::Approx(1.0));
}

TEST_CASE("smooth_l1 values from the piecewise definition") {
    auto loss_of = [](double pred, double target) {
        Tape tape;
        Var p = tape.leaf(Tensor({1, 1}, {pred}), false);
        return smooth_l1(p, Tensor({1, 1}, {target}), 1.0).value().item();
    };
    CHECK(loss_of(3.0, 3.0) == doctest::Approx(0.0));
    CHECK(loss_of(3.5, 3.0) == doctest::Approx(0.125));
    CHECK(loss_of(5.0, 3.0) == doctest::Approx(1.5));
}

TEST_CASE("smooth_l1 is continuous and once-differentiable at the transition") {
    const double beta = 1.0;
    auto eval = [&](double d, double* grad_out) {
        Tape tape;
        Var p = tape.leaf(Tensor({1, 1}, {d}), true);
        Var loss = smooth_l1(p, Tensor({1, 1}, {0.0}), beta);
        double value = loss.value().item();
        tape.backward(loss);
        *grad_out = p.grad().data[0];
        return value;
    };
    double g_below = 0.0, g_above = 0.0;
    double v_below = eval(beta * (1.0 - 1e-10), &g_below);
    double v_above = eval(beta * (1.0 + 1e-10), &g_above);
    CHECK(std::abs(v_below - v_above) < 1e-9);
    CHECK(std::abs(g_below - g_above) < 1e-9);
}

TEST_CASE("smooth_l1 averages over the batch and sums over coordinates") {
    Tape tape;
    Var p = tape.leaf(Tensor({2, 2}, {0.5, 0.0, 2.0, 0.5}), false);
    Tensor target({2, 2}, {0.0, 0.0, 0.0, 0.0});
    // rows: (0.125 + 0) and (1.5 + 0.125) -> mean = 0.875
    CHECK(smooth_l1(p, target, 1.0).value().item() == doctest::Approx(0.875));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamMap params = {{"w", Tensor({2}, {1.0, -2.0})}};
    ParamMap grads = {{"w", Tensor::zeros({2})}};
    AdamState state;
    adam_step(params, grads, state);
    CHECK(params["w"].data[0] == 1.0);
    CHECK(params["w"].data[1] == -2.0);
    CHECK(state.t == 1);
}

TEST_CASE("adam: first bias-corrected step moves by about lr") {
    ParamMap params = {{"w", Tensor({1}, {1.0})}};
    ParamMap grads = {{"w", Tensor({1}, {1.0})}};
    AdamState state;
    adam_step(params, grads, state);
    double expected = 1.0 - 1e-4 * (1.0 / (1.0 + 1e-8));
    CHECK(params["w"].data[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("adam matches a textbook reference on f(p) = p^2") {
    ParamMap params = {{"p", Tensor({1}, {5.0})}};
    AdamState state;
    state.hyper.lr = 1e-2;

    // independent textbook recurrence
    double ref_p = 5.0, ref_m = 0.0, ref_v = 0.0;
    double prev_abs = 5.0;
    for (int t = 1; t <= 100; ++t) {
        double g = 2.0 * params["p"].data[0];
        adam_step(params, {{"p", Tensor({1}, {g})}}, state);

        double ref_g = 2.0 * ref_p;
        ref_m = 0.9 * ref_m + 0.1 * ref_g;
        ref_v = 0.999 * ref_v + 0.001 * ref_g * ref_g;
        double m_hat = ref_m / (1.0 - std::pow(0.9, t));
        double v_hat = ref_v / (1.0 - std::pow(0.999, t));
        ref_p -= 1e-2 * m_hat / (std::sqrt(v_hat) + 1e-8);

        CHECK(params["p"].data[0] == doctest::Approx(ref_p).epsilon(1e-12));
        if (t > 5) {
            CHECK(std::abs(params["p"].data[0]) < prev_abs);
        }
        prev_abs = std::abs(params["p"].data[0]);
    }
}

TEST_CASE("adam rejects non-finite gradients by name") {
    ParamMap params = {{"w", Tensor({1}, {1.0})}};
    ParamMap grads = {{"w", Tensor({1}, {std::nan("")})}};
    AdamState state;
    CHECK_THROWS_WITH_AS(adam_step(params, grads, state), doctest::Contains("w"),
                         std::runtime_error);
}

TEST_CASE("grad_check on x^2 is exact to rounding") {
    ModelClosure closure = [](const ParamMap& params, ParamMap* grads) {
        double x = params.at("x").data[0];
        if (grads) {
            Tape tape;
            Var v = tape.leaf(params.at("x"), true);
            Var loss = reduce_mean(mul(v, v));
            tape.backward(loss);
            (*grads)["x"] = v.grad();
        }
        return x * x;
    };
    auto report = grad_check(closure, {{"x", Tensor({1}, {3.0})}});
    CHECK(report.max_rel_err < 1e-9);
    CHECK(report.coords_checked == 1);
}

TEST_CASE("finite-difference suite passes for every op") {
    for (const auto& result : run_gradcheck_suite(12345)) {
        INFO(result.name, " rel err ", result.max_rel_err, " threshold ", result.threshold);
        CHECK(result.passed);
    }
}

TEST_CASE("transpose, narrow and take_rows move the right elements") {
    Tape tape;
    Var x = tape.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), false);
    CHECK(transpose_last2(x).value().data == std::vector<double>{1, 4, 2, 5, 3, 6});
    CHECK(narrow_last(x, 1, 2).value().data == std::vector<double>{2, 3, 5, 6});
    CHECK(take_rows(x, {1, 0}).value().data == std::vector<double>{4, 5, 6, 1, 2, 3});
    CHECK(take_row(x, 1).value().data == std::vector<double>{4, 5, 6});
    CHECK(take_row(x, 1).value().shape == std::vector<int>{3});
}

TEST_CASE("layer_norm normalizes each row") {
    Tape tape;
    Var x = tape.leaf(Tensor({2, 4}, {1, 2, 3, 4, -1, 0, 1, 2}), false);
    Var gain = tape.leaf(Tensor::full({4}, 1.0), false);
    Var bias = tape.leaf(Tensor::zeros({4}), false);
    Var y = layer_norm(x, gain, bias);
    for (int r = 0; r < 2; ++r) {
        double mean = 0.0, var = 0.0;
        for (int j = 0; j < 4; ++j) mean += y.value().data[static_cast<std::size_t>(r * 4 + j)];
        mean /= 4;
        for (int j = 0; j < 4; ++j) {
            double d = y.value().data[static_cast<std::size_t>(r * 4 + j)] - mean;
            var += d * d;
        }
        var /= 4;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps shrinks it slightly
    }
}

TEST_CASE("shape errors carry both shapes") {
    Tape tape;
    Var a = tape.leaf(Tensor::zeros({2, 3}), false);
    Var b = tape.leaf(Tensor::zeros({2, 2}), false);
    CHECK_THROWS_WITH_AS(mul(a, b), doctest::Contains("(2,3)"), ShapeError);
    CHECK_THROWS_WITH_AS(add(a, tape.leaf(Tensor::zeros({4}), false)),
                         doctest::Contains("add"), ShapeError);
}

TEST_CASE("backward requires a scalar loss") {
    Tape tape;
    Var a = tape.leaf(Tensor::zeros({2, 2}), true);
    CHECK_THROWS_AS(tape.backward(a), ShapeError);
}
