#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "feddes/decision_space.hpp"
#include "feddes/hetero_graph.hpp"
#include "feddes/kernels.hpp"
#include "feddes/neighborhood.hpp"
#include "feddes/rng.hpp"

using namespace feddes;

namespace {

// random but internally consistent decision space: P holds softmax blocks,
// Z is the argmax-vs-label indicator
DecisionSpace random_ds(std::size_t n, std::size_t m, std::size_t c,
                        std::vector<std::size_t>& labels, Rng& rng) {
    DecisionSpace ds;
    ds.class_count = c;
    ds.pool_size = m;
    ds.p = Matrix(n, m * c);
    labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = rng.uniform_index(c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t mm = 0; mm < m; ++mm) {
            Matrix logit(1, c);
            for (auto& v : logit.raw()) v = rng.uniform(-2.0, 2.0);
            Matrix p = softmax_rows(logit);
            std::copy_n(p.data(), c, ds.p.row_ptr(i) + mm * c);
        }
    }
    ds.z = Matrix(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t mm = 0; mm < m; ++mm)
            ds.z(i, mm) = ds.block_argmax(i, mm) == labels[i] ? 1.0 : 0.0;
    return ds;
}

// linear model with identity weights over one-hot features: block argmax == feature argmax
MlpModel one_hot_model(std::size_t c) {
    MlpModel m({{}, "relu"}, c, c);
    m.weights()[0] = Matrix::identity(c);
    for (auto& v : m.weights()[0].raw()) v *= 8.0;
    std::vector<std::size_t> known(c);
    std::iota(known.begin(), known.end(), std::size_t{0});
    m.set_known_classes(known);
    return m;
}

} // namespace

TEST_CASE("projection: perfect single classifier gives an all-ones meta-label column") {
    const std::size_t c = 2, n = 8;
    ClassifierPool pool;
    PoolEntry e;
    e.model = std::make_shared<MlpModel>(one_hot_model(c));
    e.home_client = 0;
    pool.entries.push_back(e);

    Matrix x(n, c);
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % c;
        x(i, y[i]) = 1.0;
    }
    DecisionSpace ds = project_decision_space(pool, 0, x, y, {});
    CHECK(ds.p.cols() == 1 * c);
    for (std::size_t i = 0; i < n; ++i) CHECK(ds.z(i, 0) == 1.0);
}

TEST_CASE("projection: row width is M*C and blocks are calibrated probabilities") {
    const std::size_t c = 3, m_count = 4, n = 6;
    ClassifierPool pool;
    Rng rng(2);
    for (std::size_t m = 0; m < m_count; ++m) {
        PoolEntry e;
        auto model = one_hot_model(c);
        for (auto& v : model.weights()[0].raw()) v += rng.uniform(-0.5, 0.5);
        e.model = std::make_shared<MlpModel>(std::move(model));
        e.home_client = m;
        e.temperature = 0.5 + rng.uniform() * 2.0;
        pool.entries.push_back(e);
    }
    Matrix x(n, c);
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % c;
        for (std::size_t j = 0; j < c; ++j) x(i, j) = rng.uniform(-1.0, 1.0);
    }
    DecisionSpace ds = project_decision_space(pool, 0, x, y, {});
    CHECK(ds.p.cols() == m_count * c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t m = 0; m < m_count; ++m) {
            double sum = 0.0;
            for (std::size_t j = 0; j < c; ++j) sum += ds.prob(i, m, j);
            CHECK(std::fabs(sum - 1.0) < 1e-9);
        }
}

TEST_CASE("projection: Z matches a per-entry argmax oracle") {
    const std::size_t c = 3, m_count = 3, n = 5;
    Rng rng(3);
    ClassifierPool pool;
    for (std::size_t m = 0; m < m_count; ++m) {
        PoolEntry e;
        MlpModel model({{}, "relu"}, 4, c);
        for (auto& v : model.weights()[0].raw()) v = rng.uniform(-1.5, 1.5);
        for (auto& v : model.biases()[0].raw()) v = rng.uniform(-0.5, 0.5);
        e.model = std::make_shared<MlpModel>(std::move(model));
        e.home_client = m;
        e.temperature = 1.0 + 0.3 * static_cast<double>(m);
        pool.entries.push_back(e);
    }
    Matrix x(n, 4);
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = rng.uniform_index(c);
        for (std::size_t j = 0; j < 4; ++j) x(i, j) = rng.uniform(-2.0, 2.0);
    }
    DecisionSpace ds = project_decision_space(pool, 0, x, y, {});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t m = 0; m < m_count; ++m) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (ds.prob(i, m, j) > ds.prob(i, m, best)) best = j;
            CHECK(ds.z(i, m) == (best == y[i] ? 1.0 : 0.0));
        }
}

TEST_CASE("projection: home OOF logits replace the full model for training rows") {
    const std::size_t c = 2, n = 4;
    ClassifierPool pool;
    PoolEntry e;
    e.model = std::make_shared<MlpModel>(one_hot_model(c));
    e.home_client = 0;
    e.local_index = 0;
    pool.entries.push_back(e);
    Matrix x(n, c);
    std::vector<std::size_t> y(n, 0);
    // OOF logits that contradict the full model
    Matrix oof(n, c);
    for (std::size_t i = 0; i < n; ++i) oof(i, 1) = 5.0;
    DecisionSpace with_oof = project_decision_space(pool, 0, x, y, {oof});
    DecisionSpace without = project_decision_space(pool, 1, x, y, {oof}); // wrong client: ignored
    CHECK(with_oof.z(0, 0) == 0.0);
    CHECK(with_oof.prob(0, 0, 1) > 0.9);
    CHECK_FALSE(with_oof.p == without.p);
}

TEST_CASE("class-balanced neighbors match an exhaustive per-class sort") {
    Rng rng(4);
    std::vector<std::size_t> labels;
    DecisionSpace ds = random_ds(30, 2, 3, labels, rng);
    const std::size_t k = 4;
    for (std::size_t j = 0; j < 30; ++j) {
        Neighborhood nb =
            class_balanced_neighbors(ds.p, labels, 3, ds.p.row_ptr(j), j, k);
        for (const auto& cn : nb.classes) {
            // brute-force oracle: sort all candidates of the class by (distance, index)
            std::vector<std::pair<double, std::size_t>> all;
            for (std::size_t i = 0; i < 30; ++i)
                if (i != j && labels[i] == cn.cls)
                    all.emplace_back(l1_distance(ds.p.row_ptr(i), ds.p.row_ptr(j), ds.p.cols()),
                                     i);
            std::sort(all.begin(), all.end());
            REQUIRE(cn.indices.size() == std::min(k, all.size()));
            for (std::size_t i = 0; i < cn.indices.size(); ++i) {
                CHECK(cn.indices[i] == all[i].second);
                CHECK(cn.distances[i] == all[i].first);
            }
        }
    }
}

TEST_CASE("k beyond the class population returns the whole class") {
    Rng rng(5);
    std::vector<std::size_t> labels;
    DecisionSpace ds = random_ds(12, 1, 2, labels, rng);
    Neighborhood nb = class_balanced_neighbors(ds.p, labels, 2, ds.p.row_ptr(0), 0, 50);
    std::size_t expected0 = 0, expected1 = 0;
    for (std::size_t i = 1; i < 12; ++i) (labels[i] == 0 ? expected0 : expected1) += 1;
    for (const auto& cn : nb.classes)
        CHECK(cn.indices.size() == (cn.cls == 0 ? expected0 : expected1));
}

TEST_CASE("a duplicate of the target is its nearest neighbor at distance zero") {
    Rng rng(6);
    std::vector<std::size_t> labels;
    DecisionSpace ds = random_ds(10, 1, 2, labels, rng);
    std::copy_n(ds.p.row_ptr(3), ds.p.cols(), ds.p.row_ptr(7));
    labels[7] = labels[3];
    Neighborhood nb = class_balanced_neighbors(ds.p, labels, 2, ds.p.row_ptr(3), 3, 3);
    for (const auto& cn : nb.classes) {
        if (cn.cls != labels[3]) continue;
        CHECK(cn.indices[0] == 7);
        CHECK(cn.distances[0] == 0.0);
    }
}

TEST_CASE("cmdw stability fixed cases and scalar oracle") {
    SUBCASE("single neighbor equals its L1 distance") {
        Matrix embed(2, 3, {1, 2, 3, 4, 6, 3});
        const double d = cmdw_stability(embed, {1}, embed.row_ptr(0));
        CHECK(d == doctest::Approx(3.0 + 4.0 + 0.0).epsilon(1e-15));
    }
    SUBCASE("neighbors identical to the target give zero") {
        Matrix embed(3, 2, {1, 1, 1, 1, 1, 1});
        CHECK(cmdw_stability(embed, {1, 2}, embed.row_ptr(0)) == 0.0);
    }
    SUBCASE("matches a direct running-mean evaluation") {
        Rng rng(7);
        Matrix embed(4, 5);
        for (auto& v : embed.raw()) v = rng.uniform(-2.0, 2.0);
        std::vector<std::size_t> order{1, 3, 2};
        const double got = cmdw_stability(embed, order, embed.row_ptr(0));
        // independent scalar implementation
        double total = 0.0;
        for (std::size_t r = 1; r <= 3; ++r) {
            double drift = 0.0;
            for (std::size_t d = 0; d < 5; ++d) {
                double mean = 0.0;
                for (std::size_t i = 0; i < r; ++i) mean += embed(order[i], d);
                mean /= static_cast<double>(r);
                drift += std::fabs(mean - embed(0, d));
            }
            total += drift;
        }
        CHECK(std::fabs(got - total / 3.0) < 1e-12);
    }
}

TEST_CASE("hierarchical weights: one class with equal distances is uniform") {
    Matrix embed(5, 1, {0.0, 1.0, -1.0, 1.0, -1.0});
    std::vector<std::size_t> labels{0, 0, 0, 0, 0};
    Neighborhood nb = compute_neighborhood(embed, labels, 1, embed.row_ptr(0), 0, 4);
    REQUIRE(nb.weights.size() == 4);
    for (double w : nb.weights) CHECK(w == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("hierarchical weights: class masses follow inverse stability") {
    // one neighbor per class at distances 1 and 3 -> stabilities 1 and 3
    Matrix embed(3, 1, {0.0, 1.0, 3.0});
    std::vector<std::size_t> labels{9, 0, 1}; // target's own label unused
    Neighborhood nb = class_balanced_neighbors(embed, labels, 2, embed.row_ptr(0), 0, 1);
    hierarchical_weights(embed, embed.row_ptr(0), nb);
    REQUIRE(nb.classes.size() == 2);
    CHECK(nb.classes[0].mass == doctest::Approx(0.75).epsilon(1e-6));
    CHECK(nb.classes[1].mass == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("neighborhood weights always form a probability distribution") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::size_t> labels;
        DecisionSpace ds = random_ds(20, 2, 3, labels, rng);
        const std::size_t j = rng.uniform_index(20);
        Neighborhood nb = compute_neighborhood(ds.p, labels, 3, ds.p.row_ptr(j), j, 3);
        double sum = 0.0;
        for (double w : nb.weights) {
            CHECK(w >= 0.0);
            sum += w;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("gain scores fixed cases") {
    SUBCASE("uniformly correct pool earns zero gain everywhere") {
        std::vector<std::size_t> labels;
        Rng rng(9);
        DecisionSpace ds = random_ds(10, 3, 2, labels, rng);
        for (auto& v : ds.z.raw()) v = 1.0;
        Neighborhood nb = compute_neighborhood(ds.p, labels, 2, ds.p.row_ptr(0), 0, 3);
        GainResult g = gain_scores(nb, ds, labels);
        for (double v : g.gain) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));
    }
    SUBCASE("lone expert among four on a single neighbor") {
        DecisionSpace ds;
        ds.class_count = 2;
        ds.pool_size = 4;
        ds.p = Matrix(2, 8, {0.9, 0.1, 0.9, 0.1, 0.9, 0.1, 0.9, 0.1,
                             0.9, 0.1, 0.2, 0.8, 0.2, 0.8, 0.2, 0.8});
        ds.z = Matrix(2, 4, {1, 1, 1, 1, 1, 0, 0, 0}); // row 1: only classifier 0 correct
        std::vector<std::size_t> labels{0, 0};
        Neighborhood nb;
        ClassNeighbors cn;
        cn.cls = 0;
        cn.indices = {1};
        cn.distances = {0.5};
        nb.classes.push_back(cn);
        nb.neighbor_indices = {1};
        nb.weights = {1.0};
        GainResult g = gain_scores(nb, ds, labels);
        CHECK(g.gain[0] == doctest::Approx(0.75).epsilon(1e-12));
        for (std::size_t m = 1; m < 4; ++m)
            CHECK(g.gain[m] == doctest::Approx(-0.25).epsilon(1e-12));
    }
}

TEST_CASE("gain scores are zero-sum across the pool") {
    Rng rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::size_t> labels;
        DecisionSpace ds = random_ds(15, 4, 3, labels, rng);
        const std::size_t j = rng.uniform_index(15);
        Neighborhood nb = compute_neighborhood(ds.p, labels, 3, ds.p.row_ptr(j), j, 4);
        GainResult g = gain_scores(nb, ds, labels);
        double sum = 0.0;
        for (double v : g.gain) sum += v;
        CHECK(std::fabs(sum) < 1e-12);
    }
}

TEST_CASE("graph shape: node counts and classifier feature width") {
    Rng rng(11);
    std::vector<std::size_t> labels;
    DecisionSpace ds = random_ds(25, 3, 4, labels, rng);
    Matrix raw(25, 6);
    for (auto& v : raw.raw()) v = rng.uniform(-1.0, 1.0);
    HeteroGraph g = build_graph(raw, ds, labels, {});
    CHECK(g.num_samples() == 25);
    CHECK(g.num_classifiers() == 3);
    CHECK(g.classifier_features.cols() == 3 * 4 + 2);
    CHECK(g.class_count == 4);
}

TEST_CASE("classifier-sample edges choose the exhaustively ranked top k") {
    Rng rng(12);
    std::vector<std::size_t> labels;
    const std::size_t n = 50, m_count = 6, c = 3;
    DecisionSpace ds = random_ds(n, m_count, c, labels, rng);
    Matrix raw(n, 4);
    for (auto& v : raw.raw()) v = rng.uniform(-1.0, 1.0);
    GraphParams params;
    HeteroGraph g = build_graph(raw, ds, labels, params);

    for (std::size_t j = 0; j < n; ++j) {
        // independent gain computation straight from the definitions
        Neighborhood nb = compute_neighborhood(ds.p, labels, c, ds.p.row_ptr(j), j, params.k_ss);
        std::vector<double> gain(m_count, 0.0), ll(m_count, 0.0);
        for (std::size_t t = 0; t < nb.neighbor_indices.size(); ++t) {
            const std::size_t i = nb.neighbor_indices[t];
            double cbar = 0.0;
            for (std::size_t m = 0; m < m_count; ++m) cbar += ds.z(i, m);
            cbar /= static_cast<double>(m_count);
            for (std::size_t m = 0; m < m_count; ++m) {
                gain[m] += nb.weights[t] * (ds.z(i, m) - cbar);
                ll[m] += nb.weights[t] * -std::log(std::max(ds.prob(i, m, labels[i]), 1e-15));
            }
        }
        std::vector<std::size_t> order(m_count);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (gain[a] != gain[b]) return gain[a] > gain[b];
            if (ll[a] != ll[b]) return ll[a] < ll[b];
            return a < b;
        });
        std::vector<std::size_t> expected(order.begin(), order.begin() + params.k_cs);
        std::sort(expected.begin(), expected.end());

        std::vector<std::size_t> got;
        for (const auto& e : g.classifier_sample)
            if (e.dst == j) got.push_back(e.src);
        std::sort(got.begin(), got.end());
        CHECK(got == expected);
    }
}

TEST_CASE("graph weight invariants hold for every sample node") {
    Rng rng(13);
    std::vector<std::size_t> labels;
    DecisionSpace ds = random_ds(30, 4, 3, labels, rng);
    Matrix raw(30, 5);
    for (auto& v : raw.raw()) v = rng.uniform(-1.0, 1.0);
    HeteroGraph g = build_graph(raw, ds, labels, {});

    std::vector<double> ss_sum(g.num_samples(), 0.0), cs_sum(g.num_samples(), 0.0);
    std::vector<std::size_t> cs_count(g.num_samples(), 0);
    for (const auto& e : g.sample_sample) {
        CHECK(e.weight >= 0.0);
        ss_sum[e.dst] += e.weight;
    }
    for (const auto& e : g.classifier_sample) {
        CHECK(e.weight >= 0.0);
        cs_sum[e.dst] += e.weight;
        cs_count[e.dst] += 1;
    }
    for (std::size_t i = 0; i < g.num_samples(); ++i) {
        CHECK(std::fabs(ss_sum[i] - 1.0) < 1e-9);
        CHECK(std::fabs(cs_sum[i] - 1.0) < 1e-9);
        CHECK(cs_count[i] >= 1);
    }
}

TEST_CASE("graph construction is a pure function of its inputs") {
    Rng rng(14);
    std::vector<std::size_t> labels;
    DecisionSpace ds = random_ds(20, 3, 3, labels, rng);
    Matrix raw(20, 4);
    for (auto& v : raw.raw()) v = rng.uniform(-1.0, 1.0);
    HeteroGraph a = build_graph(raw, ds, labels, {});
    HeteroGraph b = build_graph(raw, ds, labels, {});
    CHECK(a == b);
}

TEST_CASE("single-classifier pools put unit weight on their only edge") {
    Rng rng(15);
    std::vector<std::size_t> labels;
    DecisionSpace ds = random_ds(15, 1, 2, labels, rng);
    Matrix raw(15, 3);
    for (auto& v : raw.raw()) v = rng.uniform(-1.0, 1.0);
    HeteroGraph g = build_graph(raw, ds, labels, {});
    for (const auto& e : g.classifier_sample) {
        CHECK(e.src == 0);
        CHECK(e.weight == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("query insertion is non-destructive and matches per-query views") {
    Rng rng(16);
    std::vector<std::size_t> labels;
    DecisionSpace ds = random_ds(20, 3, 3, labels, rng);
    Matrix raw(20, 4);
    for (auto& v : raw.raw()) v = rng.uniform(-1.0, 1.0);
    GraphParams params;
    HeteroGraph g = build_graph(raw, ds, labels, params);
    const std::string before = graph_to_json(g).dump();

    Matrix q_embed(3, ds.p.cols());
    Matrix q_raw(3, 4);
    for (auto& v : q_embed.raw()) v = rng.uniform(0.0, 1.0);
    for (auto& v : q_raw.raw()) v = rng.uniform(-1.0, 1.0);

    HeteroGraph batch = insert_queries(g, ds, labels, q_embed, q_raw, {}, params);
    CHECK(graph_to_json(g).dump() == before); // base untouched
    CHECK(batch.num_samples() == 23);
    CHECK(batch.sample_labels[20] == kUnlabeled);

    // each query's in-edges equal the single-insertion result; no cross-query edges
    for (std::size_t qi = 0; qi < 3; ++qi) {
        HeteroGraph single =
            insert_query(g, ds, labels, q_embed.row_ptr(qi), q_raw.row_ptr(qi), params);
        std::vector<Edge> want, got;
        for (const auto& e : single.sample_sample)
            if (e.dst == 20) want.push_back(e);
        for (const auto& e : batch.sample_sample)
            if (e.dst == 20 + qi) got.push_back({e.src, 20, e.weight});
        CHECK(got == want);
        for (const auto& e : batch.sample_sample) CHECK(e.src < 20); // queries have no out-edges
    }
}

TEST_CASE("a query duplicating a training sample sees that sample at distance zero") {
    Rng rng(17);
    std::vector<std::size_t> labels;
    DecisionSpace ds = random_ds(18, 2, 3, labels, rng);
    Matrix raw(18, 4);
    for (auto& v : raw.raw()) v = rng.uniform(-1.0, 1.0);
    GraphParams params;
    params.k_ss = 50; // exhaust every class so the sets are directly comparable
    HeteroGraph g = build_graph(raw, ds, labels, params);

    const std::size_t j = 5;
    HeteroGraph aug = insert_query(g, ds, labels, ds.p.row_ptr(j), raw.row_ptr(j), params);

    std::set<std::size_t> train_nb, query_nb;
    for (const auto& e : g.sample_sample)
        if (e.dst == j) train_nb.insert(e.src);
    for (const auto& e : aug.sample_sample)
        if (e.dst == 18) query_nb.insert(e.src);
    // identical modulo self-exclusion: the query additionally sees j itself
    std::set<std::size_t> expected = train_nb;
    expected.insert(j);
    CHECK(query_nb == expected);
}

TEST_CASE("classifier node features match their definitions") {
    const std::size_t c = 2, n = 6;
    DecisionSpace ds;
    ds.class_count = c;
    ds.pool_size = 1;
    // block probabilities chosen so recall and confidence are easy to read off
    ds.p = Matrix(n, 2, {0.9, 0.1, 0.8, 0.2, 0.4, 0.6, 0.3, 0.7, 0.2, 0.8, 0.6, 0.4});
    std::vector<std::size_t> labels{0, 0, 0, 1, 1, 1};
    ds.z = Matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i)
        ds.z(i, 0) = ds.block_argmax(i, 0) == labels[i] ? 1.0 : 0.0;

    Matrix f = classifier_node_features(ds, labels);
    REQUIRE(f.cols() == 3 * c + 2);
    // class 0: correct on rows 0,1 of 3 -> recall 2/3
    CHECK(f(0, 0) == doctest::Approx(2.0 / 3.0));
    // class 1: correct on rows 3,4 of 3 -> recall 2/3
    CHECK(f(0, 1) == doctest::Approx(2.0 / 3.0));
    const double se = std::sqrt((2.0 / 3.0) * (1.0 / 3.0) / 3.0);
    CHECK(f(0, 2) == doctest::Approx(se));
    CHECK(f(0, 3) == doctest::Approx(se));
    // mean confidence on the true class
    CHECK(f(0, 4) == doctest::Approx((0.9 + 0.8 + 0.4) / 3.0));
    CHECK(f(0, 5) == doctest::Approx((0.7 + 0.8 + 0.4) / 3.0));
    CHECK(f(0, 6) == doctest::Approx(4.0 / 6.0)); // overall accuracy
    CHECK(f(0, 7) == doctest::Approx(2.0 / 3.0)); // balanced accuracy
}

TEST_CASE("graph json round-trip") {
    Rng rng(18);
    std::vector<std::size_t> labels;
    DecisionSpace ds = random_ds(12, 2, 2, labels, rng);
    Matrix raw(12, 3);
    for (auto& v : raw.raw()) v = rng.uniform(-1.0, 1.0);
    HeteroGraph g = build_graph(raw, ds, labels, {});
    HeteroGraph r = graph_from_json(graph_to_json(g));
    CHECK(r == g);
}
