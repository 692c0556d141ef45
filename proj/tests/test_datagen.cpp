#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "feddes/dataset.hpp"
#include "feddes/errors.hpp"
#include "feddes/rng.hpp"

using namespace feddes;

namespace {

// nearest-class-mean classifier, an independent linear baseline
double centroid_accuracy(const Dataset& d) {
    Matrix means(d.class_count, d.dim());
    std::vector<std::size_t> counts(d.class_count, 0);
    for (std::size_t i = 0; i < d.size(); ++i) {
        counts[d.labels[i]] += 1;
        for (std::size_t j = 0; j < d.dim(); ++j) means(d.labels[i], j) += d.features(i, j);
    }
    for (std::size_t c = 0; c < d.class_count; ++c)
        for (std::size_t j = 0; j < d.dim(); ++j) means(c, j) /= static_cast<double>(counts[c]);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        std::size_t best = 0;
        double best_d = 0.0;
        for (std::size_t c = 0; c < d.class_count; ++c) {
            double dist = 0.0;
            for (std::size_t j = 0; j < d.dim(); ++j) {
                const double diff = d.features(i, j) - means(c, j);
                dist += diff * diff;
            }
            if (c == 0 || dist < best_d) {
                best = c;
                best_d = dist;
            }
        }
        if (best == d.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(d.size());
}

std::vector<std::size_t> client_histogram(const Dataset& d, const Partition& p, std::size_t k) {
    std::vector<std::size_t> h(d.class_count, 0);
    for (std::size_t i = 0; i < d.size(); ++i)
        if (p.assignment[i] == k) h[d.labels[i]] += 1;
    return h;
}

} // namespace

TEST_CASE("widely separated mixture is linearly separable") {
    Dataset d = generate_gaussian_mixture(2, 6, 400, 50.0, 1);
    d.validate();
    CHECK(centroid_accuracy(d) > 0.99);
}

TEST_CASE("zero separation collapses to chance accuracy") {
    Dataset d = generate_gaussian_mixture(4, 6, 500, 0.0, 2);
    CHECK(centroid_accuracy(d) == doctest::Approx(0.25).epsilon(0.2)); // 1/C within 0.05 absolute
    CHECK(std::fabs(centroid_accuracy(d) - 0.25) < 0.05);
}

TEST_CASE("mixture generation is deterministic under a fixed seed") {
    Dataset a = generate_gaussian_mixture(3, 5, 50, 2.0, 99);
    Dataset b = generate_gaussian_mixture(3, 5, 50, 2.0, 99);
    CHECK(a.features == b.features);
    CHECK(a.labels == b.labels);
}

TEST_CASE("class means respect the separation floor") {
    Dataset d = generate_gaussian_mixture(5, 4, 200, 3.0, 7);
    Matrix means(5, 4);
    std::vector<std::size_t> counts(5, 0);
    for (std::size_t i = 0; i < d.size(); ++i) {
        counts[d.labels[i]] += 1;
        for (std::size_t j = 0; j < 4; ++j) means(d.labels[i], j) += d.features(i, j);
    }
    for (std::size_t c = 0; c < 5; ++c)
        for (std::size_t j = 0; j < 4; ++j) means(c, j) /= static_cast<double>(counts[c]);
    for (std::size_t a = 0; a < 5; ++a)
        for (std::size_t b = a + 1; b < 5; ++b) {
            double dist = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                const double diff = means(a, j) - means(b, j);
                dist += diff * diff;
            }
            // empirical means drift from true means by ~sigma/sqrt(n)
            CHECK(std::sqrt(dist) > 3.0 - 0.5);
        }
}

TEST_CASE("exdir IID limit reproduces global class proportions") {
    Dataset d = generate_gaussian_mixture(4, 3, 400, 2.0, 3);
    ExDirConfig cfg;
    cfg.classes_per_client = 4;
    cfg.concentration = 1e6;
    cfg.seed = 5;
    Partition p = exdir_partition(d, cfg, 8);
    for (std::size_t k = 0; k < 8; ++k) {
        auto h = client_histogram(d, p, k);
        const double total = static_cast<double>(h[0] + h[1] + h[2] + h[3]);
        for (std::size_t c = 0; c < 4; ++c)
            CHECK(std::fabs(static_cast<double>(h[c]) / total - 0.25) < 0.02);
    }
}

TEST_CASE("one class per client with K equal to class count is a bijection") {
    Dataset d = generate_gaussian_mixture(6, 3, 60, 2.0, 4);
    ExDirConfig cfg;
    cfg.classes_per_client = 1;
    cfg.concentration = 1.0;
    cfg.seed = 6;
    Partition p = exdir_partition(d, cfg, 6);
    std::set<std::size_t> seen;
    for (std::size_t k = 0; k < 6; ++k) {
        auto h = client_histogram(d, p, k);
        std::size_t nonzero = 0, which = 0;
        for (std::size_t c = 0; c < 6; ++c)
            if (h[c]) {
                ++nonzero;
                which = c;
            }
        CHECK(nonzero == 1);
        seen.insert(which);
    }
    CHECK(seen.size() == 6);
}

TEST_CASE("ExDir(2,1) with eight clients and six classes gives two-class clients") {
    Dataset d = generate_gaussian_mixture(6, 4, 300, 2.0, 11);
    ExDirConfig cfg;
    cfg.classes_per_client = 2;
    cfg.concentration = 1.0;
    cfg.seed = 12;
    Partition p = exdir_partition(d, cfg, 8);
    for (std::size_t k = 0; k < 8; ++k) {
        auto h = client_histogram(d, p, k);
        std::size_t nonzero = 0;
        for (std::size_t c : h)
            if (c) ++nonzero;
        CHECK(nonzero == 2);
    }
}

TEST_CASE("infeasible ExDir configurations are rejected") {
    Dataset d = generate_gaussian_mixture(6, 3, 30, 2.0, 1);
    ExDirConfig cfg;
    cfg.classes_per_client = 1;
    cfg.concentration = 1.0;
    CHECK_THROWS_AS((void)exdir_partition(d, cfg, 4), ConfigError); // 4*1 < 6
    cfg.classes_per_client = 9;
    CHECK_THROWS_AS((void)exdir_partition(d, cfg, 4), ConfigError);
    cfg.classes_per_client = 2;
    cfg.concentration = -1.0;
    CHECK_THROWS_AS((void)exdir_partition(d, cfg, 4), ConfigError);
}

TEST_CASE("partition covers the dataset exactly once and is deterministic") {
    Dataset d = generate_gaussian_mixture(5, 4, 120, 2.5, 21);
    ExDirConfig cfg;
    cfg.classes_per_client = 3;
    cfg.concentration = 1.0;
    cfg.seed = 22;
    Partition p = exdir_partition(d, cfg, 5);
    std::vector<std::size_t> seen(d.size(), 0);
    for (std::size_t k = 0; k < p.client_count; ++k) {
        for (std::size_t i : p.splits[k].train) seen[i] += 1;
        for (std::size_t i : p.splits[k].val) seen[i] += 1;
        for (std::size_t i : p.splits[k].test) seen[i] += 1;
    }
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(seen[i] == 1);
        CHECK(p.assignment[i] < p.client_count);
    }
    Partition q = exdir_partition(d, cfg, 5);
    CHECK(q.assignment == p.assignment);
    for (std::size_t k = 0; k < 5; ++k) {
        CHECK(q.splits[k].train == p.splits[k].train);
        CHECK(q.splits[k].val == p.splits[k].val);
        CHECK(q.splits[k].test == p.splits[k].test);
    }
}

TEST_CASE("split proportions: 20% test, then 25% of the rest validation") {
    std::vector<std::size_t> labels(100);
    for (std::size_t i = 0; i < 100; ++i) labels[i] = i % 2;
    std::vector<std::size_t> idx(100);
    for (std::size_t i = 0; i < 100; ++i) idx[i] = i;
    ClientSplit s = split_client(idx, labels, 1);
    CHECK(s.test.size() == 20);
    CHECK(s.val.size() == 20);
    CHECK(s.train.size() == 60);

    std::vector<std::size_t> small(10);
    for (std::size_t i = 0; i < 10; ++i) small[i] = i;
    std::vector<std::size_t> small_labels(10, 0);
    for (std::size_t i = 5; i < 10; ++i) small_labels[i] = 1;
    ClientSplit t = split_client(small, small_labels, 2);
    CHECK(t.test.size() == 2);
    CHECK(t.val.size() == 2);
    CHECK(t.train.size() == 6);
}

TEST_CASE("splits are stratified within one sample per class") {
    Rng rng(33);
    std::vector<std::size_t> labels;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < 90; ++i) {
        idx.push_back(i);
        labels.push_back(i < 60 ? 0 : (i < 80 ? 1 : 2)); // 60 / 20 / 10
    }
    ClientSplit s = split_client(idx, labels, 3);
    std::vector<double> class_total(3, 0), class_test(3, 0);
    for (std::size_t i : idx) class_total[labels[i]] += 1;
    for (std::size_t i : s.test) class_test[labels[i]] += 1;
    const double test_frac = static_cast<double>(s.test.size()) / 90.0;
    for (std::size_t c = 0; c < 3; ++c)
        CHECK(std::fabs(class_test[c] - class_total[c] * test_frac) <= 1.0);
}

TEST_CASE("clients below the size floor are rejected with a diagnostic") {
    std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<std::size_t> labels(9, 0);
    CHECK_THROWS_WITH_AS((void)split_client(idx, labels, 1),
                         doctest::Contains("at least 10"), ValidationError);
}

TEST_CASE("dirichlet proportions sum to one") {
    Rng rng(17);
    for (double alpha : {0.1, 1.0, 10.0, 1e6}) {
        auto v = rng.dirichlet(alpha, 7);
        double sum = 0.0;
        for (double x : v) {
            CHECK(x >= 0.0);
            sum += x;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("dataset json round-trip preserves content") {
    Dataset d = generate_gaussian_mixture(3, 4, 20, 2.0, 8);
    Dataset r = dataset_from_json(dataset_to_json(d));
    CHECK(r.features == d.features);
    CHECK(r.labels == d.labels);
    CHECK(r.class_count == d.class_count);

    ExDirConfig cfg;
    cfg.classes_per_client = 2;
    cfg.concentration = 1.0;
    cfg.seed = 9;
    Partition p = exdir_partition(d, cfg, 3);
    Partition q = partition_from_json(partition_to_json(p));
    CHECK(q.assignment == p.assignment);
    CHECK(q.client_count == p.client_count);
}

TEST_CASE("imbalance ratio over present classes") {
    std::vector<std::size_t> labels{0, 0, 0, 0, 0, 0, 1, 1, 2};
    CHECK(imbalance_ratio(labels, 3) == doctest::Approx(6.0));
    std::vector<std::size_t> balanced{0, 1, 2, 0, 1, 2};
    CHECK(imbalance_ratio(balanced, 3) == doctest::Approx(1.0));
}
