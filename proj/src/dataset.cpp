#include "feddes/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "feddes/errors.hpp"
#include "feddes/kernels.hpp"

namespace feddes {

void Dataset::validate() const {
    if (features.rows() != labels.size())
        throw ValidationError("Dataset: feature rows != label count");
    if (class_count == 0) throw ValidationError("Dataset: class_count is zero");
    features.check_finite("Dataset");
    std::vector<bool> seen(class_count, false);
    for (std::size_t y : labels) {
        if (y >= class_count)
            throw ValidationError("Dataset: label " + std::to_string(y) + " out of range");
        seen[y] = true;
    }
    for (std::size_t c = 0; c < class_count; ++c)
        if (!seen[c])
            throw ValidationError("Dataset: class " + std::to_string(c) + " has no samples");
}

namespace {

// Means with every pairwise distance >= separation, kept at that floor so
// `separation` actually controls class overlap. With dim >= class_count the
// scaled one-hot (regular simplex) construction hits the floor exactly;
// otherwise rejection sampling at a radius calibrated to the floor.
std::vector<std::vector<double>> place_class_means(std::size_t class_count, std::size_t dim,
                                                   double separation, Rng& rng) {
    std::vector<std::vector<double>> means;
    means.reserve(class_count);
    if (separation <= 0.0) {
        means.assign(class_count, std::vector<double>(dim, 0.0));
        return means;
    }
    if (dim >= class_count) {
        const double scale = separation / std::sqrt(2.0);
        for (std::size_t c = 0; c < class_count; ++c) {
            std::vector<double> m(dim, 0.0);
            m[c] = scale;
            means.push_back(std::move(m));
        }
        return means;
    }
    // E||x - y||^2 = 2 * dim * radius^2, so this radius puts typical pairs
    // near the floor; rejection enforces it
    double radius = separation / std::sqrt(2.0 * static_cast<double>(dim));
    while (means.size() < class_count) {
        bool placed = false;
        for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            std::vector<double> cand(dim);
            for (auto& v : cand) v = rng.normal(0.0, radius);
            bool ok = true;
            for (const auto& m : means) {
                double d2 = 0.0;
                for (std::size_t j = 0; j < dim; ++j) d2 += (cand[j] - m[j]) * (cand[j] - m[j]);
                if (std::sqrt(d2) < separation) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                means.push_back(std::move(cand));
                placed = true;
            }
        }
        if (!placed) radius *= 1.5;
    }
    return means;
}

} // namespace

Dataset generate_gaussian_mixture(std::size_t class_count, std::size_t dim,
                                  std::size_t per_class, double separation,
                                  std::uint64_t seed) {
    if (class_count == 0 || dim == 0 || per_class == 0)
        throw ConfigError("generate_gaussian_mixture: counts must be positive");
    Rng rng(seed);
    auto means = place_class_means(class_count, dim, separation, rng);

    Dataset d;
    d.class_count = class_count;
    d.features = Matrix(class_count * per_class, dim);
    d.labels.resize(class_count * per_class);
    std::size_t row = 0;
    for (std::size_t c = 0; c < class_count; ++c) {
        for (std::size_t s = 0; s < per_class; ++s, ++row) {
            d.labels[row] = c;
            for (std::size_t j = 0; j < dim; ++j)
                d.features(row, j) = means[c][j] + rng.normal();
        }
    }
    return d;
}

namespace {

// Round-robin over a cyclic shuffled class list; a client declines a class it
// already holds and takes the next one. Every class is assigned as long as
// K * quota >= class_count, because the first visit to a class always lands.
std::vector<std::vector<std::size_t>> assign_classes(std::size_t class_count, std::size_t clients,
                                                     std::size_t quota, Rng& rng) {
    std::vector<std::size_t> order(class_count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);

    std::vector<std::set<std::size_t>> held(clients);
    std::size_t cursor = 0;
    for (std::size_t round = 0; round < quota; ++round) {
        for (std::size_t k = 0; k < clients; ++k) {
            for (std::size_t probe = 0; probe < class_count; ++probe) {
                const std::size_t cls = order[cursor % class_count];
                ++cursor;
                if (held[k].insert(cls).second) break;
            }
        }
    }
    std::vector<std::vector<std::size_t>> holders(class_count);
    for (std::size_t k = 0; k < clients; ++k)
        for (std::size_t cls : held[k]) holders[cls].push_back(k);
    return holders;
}

// Sample counts per holder: one sample each first (when available), the rest
// by largest remainder of the Dirichlet proportions.
std::vector<std::size_t> allocate_counts(std::size_t total, const std::vector<double>& props) {
    const std::size_t h = props.size();
    std::vector<std::size_t> counts(h, 0);
    std::size_t floor_given = 0;
    if (total >= h) {
        counts.assign(h, 1);
        floor_given = h;
    } else {
        // fewer samples than holders: give to the largest proportions
        std::vector<std::size_t> idx(h);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return props[a] > props[b]; });
        for (std::size_t i = 0; i < total; ++i) counts[idx[i]] = 1;
        return counts;
    }
    const std::size_t rest = total - floor_given;
    std::vector<double> target(h);
    std::vector<std::size_t> base(h);
    std::size_t base_sum = 0;
    for (std::size_t i = 0; i < h; ++i) {
        target[i] = props[i] * static_cast<double>(rest);
        base[i] = static_cast<std::size_t>(std::floor(target[i]));
        base_sum += base[i];
    }
    std::vector<std::size_t> idx(h);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return target[a] - std::floor(target[a]) > target[b] - std::floor(target[b]);
    });
    std::size_t leftover = rest - base_sum;
    for (std::size_t i = 0; i < h; ++i) counts[i] += base[i];
    for (std::size_t i = 0; i < leftover; ++i) counts[idx[i % h]] += 1;
    return counts;
}

struct RawAssignment {
    std::vector<std::size_t> sample_to_client;
    bool feasible = true;
    std::string diagnostic;
};

RawAssignment try_exdir(const Dataset& data, const ExDirConfig& cfg, std::size_t clients,
                        Rng rng) {
    RawAssignment out;
    out.sample_to_client.assign(data.size(), 0);

    auto holders = assign_classes(data.class_count, clients, cfg.classes_per_client, rng);

    std::vector<std::vector<std::size_t>> by_class(data.class_count);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);

    std::vector<std::size_t> client_sizes(clients, 0);
    for (std::size_t c = 0; c < data.class_count; ++c) {
        auto& members = by_class[c];
        rng.shuffle(members);
        const auto& h = holders[c];
        auto props = rng.dirichlet(cfg.concentration, h.size());
        auto counts = allocate_counts(members.size(), props);
        std::size_t pos = 0;
        for (std::size_t hi = 0; hi < h.size(); ++hi) {
            for (std::size_t s = 0; s < counts[hi]; ++s, ++pos)
                out.sample_to_client[members[pos]] = h[hi];
            client_sizes[h[hi]] += counts[hi];
        }
    }
    for (std::size_t k = 0; k < clients; ++k) {
        if (client_sizes[k] < 10) {
            out.feasible = false;
            out.diagnostic = "client " + std::to_string(k) + " received " +
                             std::to_string(client_sizes[k]) + " samples (< 10)";
            return out;
        }
    }
    return out;
}

} // namespace

Partition exdir_partition(const Dataset& data, const ExDirConfig& cfg, std::size_t clients) {
    data.validate();
    if (clients == 0) throw ConfigError("exdir_partition: need at least one client");
    if (cfg.classes_per_client < 1 || cfg.classes_per_client > data.class_count)
        throw ConfigError("exdir_partition: classes_per_client must be in [1, " +
                          std::to_string(data.class_count) + "]");
    if (cfg.concentration <= 0.0) throw ConfigError("exdir_partition: alpha must be positive");
    if (clients * cfg.classes_per_client < data.class_count)
        throw ConfigError("exdir_partition: K * classes_per_client < total classes; "
                          "some class could not be assigned");

    Rng root(cfg.seed);
    std::string last_diag;
    constexpr int kMaxAttempts = 100;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        RawAssignment raw =
            try_exdir(data, cfg, clients, root.derive(static_cast<std::uint64_t>(attempt)));
        if (!raw.feasible) {
            last_diag = raw.diagnostic;
            continue;
        }

        Partition p;
        p.client_count = clients;
        p.assignment = raw.sample_to_client;
        p.splits.resize(clients);

        std::vector<std::vector<std::size_t>> per_client(clients);
        for (std::size_t i = 0; i < data.size(); ++i) per_client[p.assignment[i]].push_back(i);

        // A class stranded with a single train-split sample breaks 5-fold OOF
        // (one fold's complement goes single-class), so redraw. Same
        // rationale as the 10-sample client floor. Clients holding only one
        // class stay partitionable; training rejects them later.
        Rng split_rng(cfg.seed ^ 0x5eedbeefULL);
        bool splits_ok = true;
        for (std::size_t k = 0; k < clients && splits_ok; ++k) {
            p.splits[k] = split_client(per_client[k], data.labels, split_rng.derive(k).next_u64());
            std::vector<std::size_t> counts(data.class_count, 0);
            std::size_t held = 0;
            for (std::size_t i : p.splits[k].train) counts[data.labels[i]] += 1;
            for (std::size_t c = 0; c < data.class_count; ++c)
                if (counts[c] > 0) ++held;
            for (std::size_t c = 0; c < data.class_count; ++c) {
                if (held >= 2 && counts[c] == 1) {
                    splits_ok = false;
                    last_diag = "client " + std::to_string(k) + " train split holds a single " +
                                "sample of class " + std::to_string(c);
                }
            }
        }
        if (splits_ok) return p;
    }
    throw ConfigError("exdir_partition: no feasible assignment in " +
                      std::to_string(kMaxAttempts) + " attempts; last failure: " + last_diag);
}

namespace {

// Largest-remainder quota per class, capped by availability, summing to total.
std::vector<std::size_t> stratified_quota(const std::vector<std::size_t>& class_sizes,
                                          std::size_t n, std::size_t total) {
    const std::size_t c = class_sizes.size();
    std::vector<double> target(c);
    std::vector<std::size_t> quota(c);
    std::size_t given = 0;
    for (std::size_t i = 0; i < c; ++i) {
        target[i] = static_cast<double>(class_sizes[i]) * static_cast<double>(total) /
                    static_cast<double>(n);
        quota[i] = std::min(class_sizes[i], static_cast<std::size_t>(std::floor(target[i])));
        given += quota[i];
    }
    std::vector<std::size_t> idx(c);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return target[a] - std::floor(target[a]) > target[b] - std::floor(target[b]);
    });
    std::size_t cursor = 0;
    while (given < total && cursor < 4 * c) {
        const std::size_t i = idx[cursor % c];
        ++cursor;
        if (quota[i] < class_sizes[i]) {
            ++quota[i];
            ++given;
        }
    }
    return quota;
}

} // namespace

ClientSplit split_client(const std::vector<std::size_t>& indices,
                         const std::vector<std::size_t>& labels, std::uint64_t seed) {
    const std::size_t n = indices.size();
    if (n < 10)
        throw ValidationError("split_client: client has " + std::to_string(n) +
                              " samples; at least 10 required for 5-fold OOF prediction");

    const auto test_total = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
    const std::size_t remain = n - test_total;
    const auto val_total =
        static_cast<std::size_t>(std::llround(0.25 * static_cast<double>(remain)));

    std::size_t max_label = 0;
    for (std::size_t i : indices) max_label = std::max(max_label, labels[i]);
    std::vector<std::vector<std::size_t>> by_class(max_label + 1);
    for (std::size_t i : indices) by_class[labels[i]].push_back(i);

    Rng rng(seed);
    std::vector<std::size_t> class_sizes(by_class.size());
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        rng.shuffle(by_class[c]);
        class_sizes[c] = by_class[c].size();
    }

    auto test_quota = stratified_quota(class_sizes, n, test_total);
    std::vector<std::size_t> remaining_sizes(class_sizes.size());
    for (std::size_t c = 0; c < class_sizes.size(); ++c)
        remaining_sizes[c] = class_sizes[c] - test_quota[c];
    auto val_quota = stratified_quota(remaining_sizes, remain, val_total);

    ClientSplit s;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const auto& rows = by_class[c];
        std::size_t pos = 0;
        for (std::size_t i = 0; i < test_quota[c]; ++i) s.test.push_back(rows[pos++]);
        for (std::size_t i = 0; i < val_quota[c]; ++i) s.val.push_back(rows[pos++]);
        while (pos < rows.size()) s.train.push_back(rows[pos++]);
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

double imbalance_ratio(const std::vector<std::size_t>& labels, std::size_t class_count) {
    std::vector<std::size_t> counts(class_count, 0);
    for (std::size_t y : labels) counts.at(y) += 1;
    std::size_t mx = 0, mn = labels.size();
    for (std::size_t c : counts) {
        if (c == 0) continue;
        mx = std::max(mx, c);
        mn = std::min(mn, c);
    }
    if (mn == 0) return 1.0;
    return static_cast<double>(mx) / static_cast<double>(mn);
}

nlohmann::json dataset_to_json(const Dataset& d) {
    nlohmann::json j;
    j["class_count"] = d.class_count;
    j["dim"] = d.dim();
    auto rows = nlohmann::json::array();
    for (std::size_t i = 0; i < d.features.rows(); ++i) {
        auto row = nlohmann::json::array();
        for (std::size_t c = 0; c < d.features.cols(); ++c) row.push_back(d.features(i, c));
        rows.push_back(std::move(row));
    }
    j["features"] = std::move(rows);
    j["labels"] = d.labels;
    return j;
}

Dataset dataset_from_json(const nlohmann::json& j) {
    Dataset d;
    d.class_count = j.at("class_count").get<std::size_t>();
    const auto& rows = j.at("features");
    const std::size_t n = rows.size();
    const std::size_t dim = j.at("dim").get<std::size_t>();
    d.features = Matrix(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& row = rows.at(i);
        if (row.size() != dim) throw IoError("dataset_from_json: ragged feature row");
        for (std::size_t c = 0; c < dim; ++c) d.features(i, c) = row.at(c).get<double>();
    }
    d.labels = j.at("labels").get<std::vector<std::size_t>>();
    d.validate();
    return d;
}

nlohmann::json partition_to_json(const Partition& p) {
    nlohmann::json j;
    j["client_count"] = p.client_count;
    j["assignment"] = p.assignment;
    auto splits = nlohmann::json::array();
    for (const auto& s : p.splits)
        splits.push_back({{"train", s.train}, {"val", s.val}, {"test", s.test}});
    j["splits"] = std::move(splits);
    return j;
}

Partition partition_from_json(const nlohmann::json& j) {
    Partition p;
    p.client_count = j.at("client_count").get<std::size_t>();
    p.assignment = j.at("assignment").get<std::vector<std::size_t>>();
    for (const auto& s : j.at("splits")) {
        ClientSplit cs;
        cs.train = s.at("train").get<std::vector<std::size_t>>();
        cs.val = s.at("val").get<std::vector<std::size_t>>();
        cs.test = s.at("test").get<std::vector<std::size_t>>();
        p.splits.push_back(std::move(cs));
    }
    if (p.splits.size() != p.client_count)
        throw IoError("partition_from_json: split count != client count");
    return p;
}

} // namespace feddes
