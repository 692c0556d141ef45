#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "feddes/autodiff.hpp"
#include "feddes/hetero_graph.hpp"
#include "feddes/rng.hpp"

namespace feddes {

struct MetaLearnerConfig {
    std::size_t hidden = 128;
    std::size_t heads = 4;
    std::size_t layers = 2;
    double dropout = 0.2;
    double leaky_slope = 0.2;
    // When false (adopted behavior), classifier embeddings are produced by the
    // input projection once and reused at every layer; they never aggregate
    // incoming messages. When true they are re-transformed per layer.
    bool refresh_classifier_nodes = false;
};

// Per edge type: GATv2 attention with the nonlinearity applied before the
// attention vector, so neighbor ranking depends on the query node. Graph edge
// weights enter as additive log-weight biases on the attention logits.
struct GatEdgeTypeParams {
    ad::NodePtr w_target;  // in x hidden
    ad::NodePtr w_source;  // in x hidden
    ad::NodePtr attention; // 1 x hidden, sliced per head
    ad::NodePtr bias;      // 1 x hidden
};

struct GatLayerParams {
    GatEdgeTypeParams sample_sample;
    GatEdgeTypeParams classifier_sample;
};

// Two-layer heterogeneous GATv2 mapping sample embeddings to M per-classifier
// competence logits. Messages flow classifier->sample and sample->sample only;
// the output head applies to sample nodes only.
class MetaLearner {
public:
    MetaLearner() = default;
    MetaLearner(const MetaLearnerConfig& cfg, std::size_t sample_in_dim,
                std::size_t classifier_in_dim, std::size_t pool_size, std::uint64_t seed);

    // Logits for every sample node (N x M). Dropout only when train_mode;
    // rng required in that case.
    ad::NodePtr forward(const HeteroGraph& graph, bool train_mode, Rng* rng) const;
    Matrix logits(const HeteroGraph& graph) const; // eval mode

    std::vector<ad::NodePtr> parameters() const;
    std::vector<std::pair<std::string, ad::NodePtr>> named_parameters() const;

    std::vector<Matrix> state() const;
    void set_state(const std::vector<Matrix>& s);

    const MetaLearnerConfig& config() const { return cfg_; }
    std::size_t pool_size() const { return pool_size_; }
    std::size_t sample_in_dim() const { return sample_in_; }
    std::size_t classifier_in_dim() const { return classifier_in_; }

    nlohmann::json to_json() const;
    static MetaLearner from_json(const nlohmann::json& j);

private:
    MetaLearnerConfig cfg_;
    std::size_t sample_in_ = 0;
    std::size_t classifier_in_ = 0;
    std::size_t pool_size_ = 0;

    ad::NodePtr sample_proj_w_, sample_proj_b_;
    ad::NodePtr classifier_proj_w_, classifier_proj_b_;
    std::vector<GatLayerParams> layers_;
    ad::NodePtr out_w_, out_b_;
};

} // namespace feddes
