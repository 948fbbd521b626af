#include <catch2/catch_amalgamated.hpp>

#include "cycleqp/autodiff.hpp"
#include "cycleqp/diagnostics.hpp"
#include "cycleqp/models.hpp"
#include "synthetic.hpp"

using namespace cycleqp;
using testutil::random_batch_d;

namespace {

using Loss = std::function<ad::Var<double>(const std::vector<ad::Var<double>>&)>;

void expect_gradcheck(const char* name, const Loss& f, std::vector<ad::Var<double>> params, double tol = 1e-6) {
    std::mt19937_64 rng(123);
    auto rep = finite_difference_gradcheck<double>(f, std::move(params), 60, 1e-6, rng, tol);
    INFO(name << ": " << rep.summary());
    CHECK(rep.passed);
}

}  // namespace

TEST_CASE("gradients of elementwise ops and reductions") {
    auto x = ad::leaf(random_batch_d({2, 2, 3, 3}, 1, -1.5, 1.5), true);
    auto y = ad::leaf(random_batch_d({2, 2, 3, 3}, 2, 0.5, 2.0), true);
    expect_gradcheck("add/mul/tanh", [](auto& ps) {
        return ad::mean_all(ad::tanh_(ad::mul(ad::add(ps[0], ps[1]), ps[1])));
    }, {x, y});
    expect_gradcheck("div/square", [](auto& ps) {
        return ad::mean_all(ad::div(ad::square(ps[0]), ps[1]));
    }, {x, y});
    expect_gradcheck("leaky_relu", [](auto& ps) {
        return ad::mean_all(ad::square(ad::leaky_relu(ps[0], 0.2)));
    }, {x});
    expect_gradcheck("mean_per_sample", [](auto& ps) {
        return ad::mean_all(ad::square(ad::mean_per_sample(ps[0])));
    }, {x});
}

TEST_CASE("gradients of convolution ops") {
    std::mt19937_64 wr(3);
    auto x = ad::leaf(random_batch_d({2, 3, 6, 6}, 4), true);
    auto w = ad::leaf(glorot_uniform_init<double>({4, 3, 3, 3}, 27, 36, wr), true);
    auto b = ad::leaf(Tensor<double>({4}, 0.05), true);
    expect_gradcheck("conv2d stride 1 pad 1", [](auto& ps) {
        return ad::mean_all(ad::tanh_(ad::conv2d(ps[0], ps[1], ps[2], 1L, 1L)));
    }, {x, w, b});
    expect_gradcheck("conv2d stride 2", [](auto& ps) {
        return ad::mean_all(ad::tanh_(ad::conv2d(ps[0], ps[1], ps[2], 2L, 1L)));
    }, {x, w, b});

    auto wt = ad::leaf(glorot_uniform_init<double>({3, 4, 3, 3}, 27, 36, wr), true);
    expect_gradcheck("conv_transpose2d", [](auto& ps) {
        return ad::mean_all(ad::tanh_(ad::conv_transpose2d(ps[0], ps[1], ps[2], 2L, 1L, 1L)));
    }, {x, wt, b});
}

TEST_CASE("gradients of padding, upsampling, and instance norm") {
    auto x = ad::leaf(random_batch_d({2, 3, 5, 5}, 7), true);
    auto gamma = ad::leaf(Tensor<double>({3}, 1.3), true);
    auto beta = ad::leaf(Tensor<double>({3}, -0.2), true);
    expect_gradcheck("reflect_pad2d", [](auto& ps) {
        return ad::mean_all(ad::square(ad::reflect_pad2d(ps[0], 2L)));
    }, {x});
    expect_gradcheck("upsample_nearest2x", [](auto& ps) {
        return ad::mean_all(ad::square(ad::upsample_nearest2x(ps[0])));
    }, {x});
    expect_gradcheck("instance_norm", [](auto& ps) {
        return ad::mean_all(ad::tanh_(ad::instance_norm(ps[0], ps[1], ps[2])));
    }, {x, gamma, beta});
}

TEST_CASE("backward accumulates through shared subexpressions") {
    // y = x * x reuses the same node twice; gradient must be 2x
    Tensor<double> t({3});
    t[0] = 1.0;
    t[1] = -2.0;
    t[2] = 0.5;
    auto x = ad::leaf(t, true);
    auto y = ad::mean_all(ad::mul(x, x));
    ad::backward(y);
    for (long i = 0; i < 3; ++i) CHECK(x->grad[i] == Catch::Approx(2.0 * t[i] / 3.0));
}

TEST_CASE("detach blocks gradient flow") {
    auto x = ad::leaf(Tensor<double>({2}, 1.5), true);
    auto d = ad::detach(ad::scale(x, 3.0));
    auto y = ad::mean_all(ad::mul(d, x));
    ad::backward(y);
    CHECK(x->grad[0] == Catch::Approx(4.5 / 2.0));  // only the direct factor contributes
}

TEST_CASE("NoGradGuard builds no tape") {
    auto x = ad::leaf(Tensor<double>({2}, 1.0), true);
    ad::NoGradGuard ng;
    auto y = ad::scale(x, 2.0);
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
}

TEST_CASE("shape mismatches are rejected") {
    auto a = ad::constant(Tensor<double>({2, 2}));
    auto b = ad::constant(Tensor<double>({2, 3}));
    CHECK_THROWS_AS(ad::add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(ad::backward(ad::constant(Tensor<double>({4}))), std::invalid_argument);
}
