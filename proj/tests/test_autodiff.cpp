#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "feddes/autodiff.hpp"
#include "feddes/kernels.hpp"
#include "feddes/rng.hpp"

using namespace feddes;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -2.0,
                     double hi = 2.0) {
    Matrix m(rows, cols);
    for (auto& v : m.raw()) v = rng.uniform(lo, hi);
    return m;
}

// Central finite differences against the analytic gradient for a scalar-valued
// builder over a set of leaf parameters. The builder must rebuild the graph
// from the leaves on every call.
void check_gradients(const std::vector<ad::NodePtr>& leaves,
                     const std::function<ad::NodePtr()>& build, double step = 1e-5,
                     double tol = 1e-4) {
    auto root = build();
    ad::zero_all_grads(root);
    ad::backward(root);
    for (const auto& leaf : leaves) {
        Matrix analytic = leaf->grad;
        double max_abs = 1e-8;
        for (double g : analytic.raw()) max_abs = std::max(max_abs, std::fabs(g));
        for (std::size_t i = 0; i < leaf->value.size(); ++i) {
            const double saved = leaf->value.raw()[i];
            leaf->value.raw()[i] = saved + step;
            const double up = build()->value(0, 0);
            leaf->value.raw()[i] = saved - step;
            const double down = build()->value(0, 0);
            leaf->value.raw()[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            CHECK(std::fabs(analytic.raw()[i] - numeric) / max_abs < tol);
        }
    }
}

} // namespace

TEST_CASE("gradient of sum is all ones") {
    auto x = ad::leaf(Matrix(2, 3, {1, -2, 3, 4, -5, 6}));
    auto loss = ad::sum_all(x);
    ad::backward(loss);
    for (double g : x->grad.raw()) CHECK(g == 1.0);
}

TEST_CASE("sigmoid-sum gradient at zero is a quarter") {
    auto x = ad::leaf(Matrix(2, 2));
    auto loss = ad::sum_all(ad::sigmoid(x));
    ad::backward(loss);
    for (double g : x->grad.raw()) CHECK(g == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar root") {
    auto x = ad::leaf(Matrix(2, 2));
    CHECK_THROWS_AS(ad::backward(ad::sigmoid(x)), ValidationError);
}

TEST_CASE("repeated backward after zeroing reproduces identical gradients") {
    Rng rng(9);
    auto w = ad::leaf(random_matrix(3, 3, rng));
    auto x = ad::constant(random_matrix(4, 3, rng));
    auto build = [&] { return ad::mean_all(ad::sigmoid(ad::matmul(x, w))); };
    auto r1 = build();
    ad::backward(r1);
    Matrix g1 = w->grad;
    w->zero_grad();
    auto r2 = build();
    ad::backward(r2);
    CHECK(w->grad == g1);
}

TEST_CASE("gradients accumulate across backward calls without zeroing") {
    auto x = ad::leaf(Matrix(1, 2, {0.0, 0.0}));
    auto l1 = ad::sum_all(x);
    ad::backward(l1);
    auto l2 = ad::sum_all(x);
    ad::backward(l2);
    for (double g : x->grad.raw()) CHECK(g == 2.0);
}

TEST_CASE("finite differences validate every differentiable op") {
    Rng rng(1234);

    SUBCASE("matmul + add_rowvec + sigmoid composite") {
        auto w = ad::leaf(random_matrix(3, 4, rng));
        auto b = ad::leaf(random_matrix(1, 4, rng));
        auto x = ad::constant(random_matrix(5, 3, rng));
        check_gradients({w, b},
                        [&] { return ad::mean_all(ad::sigmoid(ad::add_rowvec(ad::matmul(x, w), b))); });
    }
    SUBCASE("mul and scale") {
        auto a = ad::leaf(random_matrix(3, 3, rng));
        auto b = ad::leaf(random_matrix(3, 3, rng));
        check_gradients({a, b}, [&] { return ad::mean_all(ad::scale(ad::mul(a, b), 1.7)); });
    }
    SUBCASE("leaky_relu away from the kink") {
        Matrix init = random_matrix(4, 4, rng);
        for (auto& v : init.raw())
            if (std::fabs(v) < 0.05) v = 0.5; // FD is ill-posed at the kink itself
        auto a = ad::leaf(init);
        check_gradients({a}, [&] { return ad::mean_all(ad::leaky_relu(a, 0.2)); });
    }
    SUBCASE("elu away from the kink") {
        Matrix init = random_matrix(4, 4, rng);
        for (auto& v : init.raw())
            if (std::fabs(v) < 0.05) v = -0.5;
        auto a = ad::leaf(init);
        check_gradients({a}, [&] { return ad::mean_all(ad::elu(a)); });
    }
    SUBCASE("gather_rows") {
        auto a = ad::leaf(random_matrix(5, 3, rng));
        std::vector<std::size_t> rows{4, 0, 2, 0, 1};
        check_gradients({a}, [&] { return ad::mean_all(ad::sigmoid(ad::gather_rows(a, rows))); });
    }
    SUBCASE("headwise_dot") {
        auto s = ad::leaf(random_matrix(6, 8, rng));
        auto a = ad::leaf(random_matrix(1, 8, rng));
        check_gradients({s, a}, [&] { return ad::mean_all(ad::sigmoid(ad::headwise_dot(s, a, 2))); });
    }
    SUBCASE("segment_softmax") {
        auto l = ad::leaf(random_matrix(7, 2, rng));
        std::vector<std::size_t> seg{0, 0, 1, 1, 1, 2, 0};
        check_gradients(
            {l}, [&] { return ad::mean_all(ad::mul(ad::segment_softmax(l, seg, 3),
                                                   ad::segment_softmax(l, seg, 3))); });
    }
    SUBCASE("segment_weighted_sum") {
        auto alpha = ad::leaf(random_matrix(6, 2, rng, 0.1, 1.0));
        auto msg = ad::leaf(random_matrix(6, 8, rng));
        std::vector<std::size_t> dst{0, 1, 1, 2, 0, 2};
        check_gradients({alpha, msg}, [&] {
            return ad::mean_all(ad::sigmoid(ad::segment_weighted_sum(alpha, msg, dst, 3, 2)));
        });
    }
    SUBCASE("row_scale") {
        auto a = ad::leaf(random_matrix(4, 3, rng));
        std::vector<double> f{0.5, 2.0, 0.0, -1.0};
        check_gradients({a}, [&] { return ad::mean_all(ad::row_scale(a, f)); });
    }
    SUBCASE("bce_with_logits_mean") {
        auto s = ad::leaf(random_matrix(4, 3, rng));
        Matrix z(4, 3);
        for (auto& v : z.raw()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
        check_gradients({s}, [&] { return ad::bce_with_logits_mean(s, z); });
    }
    SUBCASE("softmax_xent_mean with class weights") {
        auto s = ad::leaf(random_matrix(5, 3, rng));
        std::vector<std::size_t> labels{0, 2, 1, 2, 0};
        std::vector<double> weights{1.0, 2.0, 0.5};
        check_gradients({s}, [&] { return ad::softmax_xent_mean(s, labels, weights); });
    }
    SUBCASE("deep composite graph") {
        auto w1 = ad::leaf(random_matrix(3, 6, rng));
        auto b1 = ad::leaf(random_matrix(1, 6, rng));
        auto w2 = ad::leaf(random_matrix(6, 2, rng));
        auto x = ad::constant(random_matrix(4, 3, rng));
        Matrix z(4, 2);
        for (auto& v : z.raw()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
        check_gradients({w1, b1, w2}, [&] {
            auto h = ad::elu(ad::add_rowvec(ad::matmul(x, w1), b1));
            return ad::bce_with_logits_mean(ad::matmul(h, w2), z);
        });
    }
}

TEST_CASE("segment softmax rows sum to one within each segment and head") {
    Rng rng(55);
    Matrix logits(9, 3);
    for (auto& v : logits.raw()) v = rng.uniform(-30.0, 30.0);
    std::vector<std::size_t> seg{0, 2, 1, 1, 0, 2, 2, 0, 1};
    auto out = ad::segment_softmax(ad::constant(logits), seg, 3);
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t h = 0; h < 3; ++h) {
            double sum = 0.0;
            for (std::size_t e = 0; e < seg.size(); ++e)
                if (seg[e] == s) sum += out->value(e, h);
            CHECK(std::fabs(sum - 1.0) < 1e-9);
        }
}

TEST_CASE("constants block gradient flow") {
    auto c = ad::constant(Matrix(2, 2, {1, 2, 3, 4}));
    auto x = ad::leaf(Matrix(2, 2, {1, 1, 1, 1}));
    auto loss = ad::sum_all(ad::mul(c, x));
    ad::backward(loss);
    CHECK(x->grad(0, 1) == 2.0);
    for (double g : c->grad.raw()) CHECK(g == 0.0); // untouched
}

TEST_CASE("softmax_xent rejects out-of-range labels") {
    auto s = ad::leaf(Matrix(2, 3));
    CHECK_THROWS_AS((void)ad::softmax_xent_mean(s, {0, 3}, {}), ValidationError);
}
