#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "feddes/matrix.hpp"
#include "feddes/rng.hpp"

namespace feddes {

struct Dataset {
    Matrix features;                 // N x D
    std::vector<std::size_t> labels; // N entries in [0, class_count)
    std::size_t class_count = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols(); }
    void validate() const; // every class present, rows finite, labels in range
};

struct ClientSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;

    std::size_t size() const { return train.size() + val.size() + test.size(); }
};

struct Partition {
    std::size_t client_count = 0;
    std::vector<std::size_t> assignment; // sample index -> client id
    std::vector<ClientSplit> splits;     // per client, global dataset indices
};

struct ExDirConfig {
    std::size_t classes_per_client = 2; // the C in ExDir(C, alpha)
    double concentration = 1.0;         // alpha > 0
    std::uint64_t seed = 0;
};

// Samples per_class points per class around distinct means (unit covariance);
// means are placed so every pairwise distance is >= separation.
Dataset generate_gaussian_mixture(std::size_t class_count, std::size_t dim,
                                  std::size_t per_class, double separation,
                                  std::uint64_t seed);

// Extended Dirichlet partitioning: each client is assigned exactly
// classes_per_client labels (round-robin over a shuffled class list), then each
// class's samples are divided among its holders with Dirichlet(alpha)
// proportions. Clients below the 10-sample floor trigger a deterministic
// re-draw; repeated failure raises ConfigError.
Partition exdir_partition(const Dataset& data, const ExDirConfig& cfg, std::size_t clients);

// 20% test, then 25% of the remainder as validation, stratified by label
// where class counts permit. Requires >= 10 samples.
ClientSplit split_client(const std::vector<std::size_t>& indices,
                         const std::vector<std::size_t>& labels, std::uint64_t seed);

// max class count / min class count over classes present
double imbalance_ratio(const std::vector<std::size_t>& labels, std::size_t class_count);

nlohmann::json dataset_to_json(const Dataset& d);
Dataset dataset_from_json(const nlohmann::json& j);
nlohmann::json partition_to_json(const Partition& p);
Partition partition_from_json(const nlohmann::json& j);

} // namespace feddes
