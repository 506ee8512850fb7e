#include <doctest.h>

#include <cmath>

#include "fedlppa/optim.hpp"

using namespace fedlppa;

TEST_CASE("poly schedule endpoints and midpoint") {
    CHECK(poly_lr(0.01f, 0, 100) == doctest::Approx(0.01f));
    CHECK(poly_lr(0.01f, 100, 100) == doctest::Approx(0.0f));
    const double mid = 0.01 * std::pow(0.5, 0.9);
    CHECK(poly_lr(0.01f, 50, 100) == doctest::Approx(mid).epsilon(1e-6));
    CHECK_THROWS_AS((void)poly_lr(0.01f, 0, 0), std::invalid_argument);
    CHECK_THROWS_AS((void)poly_lr(0.01f, -1, 10), std::invalid_argument);
    CHECK_THROWS_AS((void)poly_lr(0.01f, 11, 10), std::invalid_argument);
}

TEST_CASE("adamw first step matches the closed-form reference") {
    AdamW::Hyper h;
    AdamW opt(h);
    const float x0 = 0.5f, g = 0.2f, lr = 0.01f;
    Tensor p(Shape{1}, {x0}, true);
    p.grad_mut().assign(1, g);
    std::vector<Tensor> params{p};
    opt.step(params, lr);

    // bias-corrected first step with decoupled weight decay (double ref)
    const double m = (1.0 - h.beta1) * g, v = (1.0 - h.beta2) * g * g;
    const double mh = m / (1.0 - h.beta1), vh = v / (1.0 - h.beta2);
    const double expect = x0 - lr * (mh / (std::sqrt(vh) + h.eps) + h.weight_decay * x0);
    CHECK(p.data()[0] == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("adamw two steps track a double-precision replica") {
    AdamW::Hyper h;
    AdamW opt(h);
    Tensor p(Shape{2}, {1.0f, -0.3f}, true);
    std::vector<Tensor> params{p};
    double x[2] = {1.0, -0.3}, m[2] = {0, 0}, v[2] = {0, 0};
    const float grads[2][2] = {{0.4f, -0.1f}, {-0.2f, 0.3f}};
    for (int t = 1; t <= 2; ++t) {
        p.grad_mut().assign(grads[t - 1], grads[t - 1] + 2);
        opt.step(params, 0.05f);
        for (int i = 0; i < 2; ++i) {
            const double g = grads[t - 1][i];
            m[i] = h.beta1 * m[i] + (1 - h.beta1) * g;
            v[i] = h.beta2 * v[i] + (1 - h.beta2) * g * g;
            const double mh = m[i] / (1.0 - std::pow(h.beta1, t));
            const double vh = v[i] / (1.0 - std::pow(h.beta2, t));
            x[i] -= 0.05 * (mh / (std::sqrt(vh) + h.eps) + h.weight_decay * x[i]);
        }
    }
    CHECK(p.data()[0] == doctest::Approx(x[0]).epsilon(1e-5));
    CHECK(p.data()[1] == doctest::Approx(x[1]).epsilon(1e-5));
}

TEST_CASE("adamw rejects a negative learning rate and skips missing grads") {
    AdamW opt;
    Tensor p(Shape{1}, {1.0f}, true);
    std::vector<Tensor> params{p};
    CHECK_THROWS_AS(opt.step(params, -0.1f), std::invalid_argument);
    opt.step(params, 0.1f);  // no grad allocated: parameter must not move
    CHECK(p.data()[0] == 1.0f);
}
