#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "feddes/decision_space.hpp"
#include "feddes/matrix.hpp"
#include "feddes/neighborhood.hpp"

namespace feddes {

struct GraphParams {
    std::size_t k_ss = 5;  // neighbors per class for sample-sample edges
    std::size_t k_cs = 3;  // classifiers per sample for classifier-sample edges
    double epsilon = 1e-8; // CMDW mass regularizer
};

// Typed weighted edge; src/dst index into the role's node array.
struct Edge {
    std::size_t src = 0;
    std::size_t dst = 0;
    double weight = 0.0;

    bool operator==(const Edge&) const = default;
};

constexpr long kUnlabeled = -1;

// Sample nodes carry raw input features; classifier nodes carry the global
// behavior block (per-class recall, its standard error, per-class mean
// confidence, overall accuracy, balanced accuracy -> 3C+2 values).
struct HeteroGraph {
    Matrix sample_features;          // N x F_s
    Matrix classifier_features;      // M x (3C+2)
    std::vector<long> sample_labels; // kUnlabeled for query nodes
    std::vector<Edge> sample_sample;
    std::vector<Edge> classifier_sample;
    std::size_t class_count = 0;

    std::size_t num_samples() const { return sample_features.rows(); }
    std::size_t num_classifiers() const { return classifier_features.rows(); }

    void canonicalize(); // sorts edge lists by (dst, src)
    bool operator==(const HeteroGraph&) const = default;
};

Matrix classifier_node_features(const DecisionSpace& ds_train,
                                const std::vector<std::size_t>& y_train);

// Graph over the client's training samples: CMDW-weighted class-balanced
// sample-sample edges and gain-ranked classifier-sample edges. Pure function
// of its inputs; no randomness.
HeteroGraph build_graph(const Matrix& x_train_raw, const DecisionSpace& ds_train,
                        const std::vector<std::size_t>& y_train, const GraphParams& params);

// Non-destructive query insertion: returns an augmented copy with one node per
// query row, edged exactly like training nodes. Queries gain no out-edges, so
// a batch is equivalent to independent single insertions. labels may be empty
// (all nodes unlabeled) or one label per query row.
HeteroGraph insert_queries(const HeteroGraph& graph, const DecisionSpace& ds_train,
                           const std::vector<std::size_t>& y_train, const Matrix& query_embed,
                           const Matrix& query_raw, const std::vector<long>& labels,
                           const GraphParams& params);

HeteroGraph insert_query(const HeteroGraph& graph, const DecisionSpace& ds_train,
                         const std::vector<std::size_t>& y_train, const double* query_embed,
                         const double* query_raw, const GraphParams& params);

nlohmann::json graph_to_json(const HeteroGraph& g);
HeteroGraph graph_from_json(const nlohmann::json& j);

} // namespace feddes
