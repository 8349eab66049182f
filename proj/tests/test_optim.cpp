// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "bugprio/optim.hpp"

using namespace bugprio;

namespace {

struct Scalar {
    ad::Parameter<double> p;
    std::vector<ad::Parameter<double>*> ps;
    AdamWState<double> state;

    explicit Scalar(double v) : p(Tensor<double>({1}, v)), ps{&p}, state(AdamWState<double>::for_params(ps)) {}

    void step(double grad, double lr, const AdamWOptions& o) {
        p.grad[0] = grad;
        adamw_step(std::span<ad::Parameter<double>* const>(ps), state, lr, o);
    }
};

}  // namespace

TEST_CASE("zero gradient and zero decay leave parameters unchanged") {
    Scalar s(1.5);
    AdamWOptions o;
    o.weight_decay = 0.0;
    for (int i = 0; i < 5; ++i) {
        s.step(0.0, 0.1, o);
    }
    CHECK(s.p.value[0] == 1.5);
}

TEST_CASE("first step with unit gradient moves by about lr") {
    Scalar s(1.0);
    AdamWOptions o;
    o.weight_decay = 0.0;
    s.step(1.0, 0.1, o);
    CHECK(s.p.value[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("decoupled decay shrinks by (1 - lr * wd) when the gradient is zero") {
    Scalar s(2.0);
    AdamWOptions o;
    o.weight_decay = 0.01;
    s.step(0.0, 0.5, o);
    CHECK(s.p.value[0] == doctest::Approx(2.0 * (1.0 - 0.5 * 0.01)).epsilon(1e-12));
}

TEST_CASE("adamw matches a hand-rolled reference over several steps") {
    Scalar s(0.3);
    AdamWOptions o;
    double p = 0.3, m = 0, v = 0;
    const double grads[] = {0.5, -1.0, 0.25, 2.0};
    for (int t = 1; t <= 4; ++t) {
        const double g = grads[t - 1], lr = 0.01;
        s.step(g, lr, o);
        p *= 1.0 - lr * o.weight_decay;
        m = o.beta1 * m + (1 - o.beta1) * g;
        v = o.beta2 * v + (1 - o.beta2) * g * g;
        const double mh = m / (1 - std::pow(o.beta1, t)), vh = v / (1 - std::pow(o.beta2, t));
        p -= lr * mh / (std::sqrt(vh) + o.epsilon);
        CHECK(s.p.value[0] == doctest::Approx(p).epsilon(1e-12));
    }
}

TEST_CASE("state shape mismatch is rejected") {
    Scalar s(1.0);
    ad::Parameter<double> other(Tensor<double>({2}, 0.0));
    std::vector<ad::Parameter<double>*> ps = {&other};
    CHECK_THROWS_AS(adamw_step(std::span<ad::Parameter<double>* const>(ps), s.state, 0.1, AdamWOptions{}),
                    ShapeError);
}

TEST_CASE("learning-rate schedule: warmup then linear decay") {
    CHECK(lr_schedule(0, 1000, 275000, 5e-5) == 0.0);
    CHECK(lr_schedule(1000, 1000, 275000, 5e-5) == doctest::Approx(5e-5));
    CHECK(lr_schedule(500, 1000, 275000, 5e-5) == doctest::Approx(2.5e-5));
    const std::int64_t mid = (1000 + 275000) / 2;
    CHECK(lr_schedule(mid, 1000, 275000, 5e-5) == doctest::Approx(5e-5 * (275000.0 - mid) / (275000.0 - 1000.0)));
    CHECK(lr_schedule(275000, 1000, 275000, 5e-5) == 0.0);
    CHECK_THROWS_AS(lr_schedule(0, 10, 5, 1.0), std::invalid_argument);
    CHECK_THROWS(lr_schedule(6, 1, 5, 1.0));
}
