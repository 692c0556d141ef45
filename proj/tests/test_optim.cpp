#include <doctest.h>

#include <cmath>

#include "feddes/optim.hpp"

using namespace feddes;

TEST_CASE("zero gradient leaves parameters unchanged") {
    Matrix p(2, 2, {1, 2, 3, 4});
    Matrix g(2, 2);
    AdamState state;
    adam_step(state, {&p}, {&g});
    CHECK(p == Matrix(2, 2, {1, 2, 3, 4}));
    CHECK(state.step == 1);
}

TEST_CASE("constant gradient drives parameters opposite its sign") {
    Matrix p(1, 2, {0.0, 0.0});
    Matrix g(1, 2, {1.0, -2.0});
    AdamState state;
    state.learning_rate = 1e-2;
    for (int i = 0; i < 50; ++i) adam_step(state, {&p}, {&g});
    CHECK(p(0, 0) < 0.0);
    CHECK(p(0, 1) > 0.0);
    CHECK(state.step == 50);
}

TEST_CASE("first step from fresh state matches the hand-evaluated recurrence") {
    Matrix p(1, 1, {0.0});
    Matrix g(1, 1, {1.0});
    AdamState state;
    state.learning_rate = 1e-3;
    adam_step(state, {&p}, {&g});
    // m-hat = v-hat = 1 after bias correction, so the step is -lr / (1 + eps)
    const double want = -1e-3 / (1.0 + 1e-8);
    CHECK(p(0, 0) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("non-finite gradients surface as training errors") {
    Matrix p(1, 1, {0.0});
    Matrix g(1, 1, {std::nan("")});
    AdamState state;
    CHECK_THROWS_AS(adam_step(state, {&p}, {&g}), TrainingError);
}

TEST_CASE("state is tied to one parameter set") {
    Matrix p1(1, 2), p2(1, 2), g(1, 2, {1, 1});
    AdamState state;
    adam_step(state, {&p1}, {&g});
    Matrix extra(1, 1), ge(1, 1, {1});
    CHECK_THROWS_AS(adam_step(state, {&p1, &extra}, {&g, &ge}), DimensionError);
}

TEST_CASE("autodiff-leaf overload updates values and clears gradients") {
    auto x = ad::leaf(Matrix(1, 2, {0.5, -0.5}));
    x->grad = Matrix(1, 2, {1.0, 1.0});
    AdamState state;
    state.learning_rate = 1e-3;
    adam_step(state, std::vector<ad::NodePtr>{x});
    CHECK(x->value(0, 0) < 0.5);
    for (double g : x->grad.raw()) CHECK(g == 0.0);
}
