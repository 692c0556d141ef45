#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "feddes/gat.hpp"
#include "feddes/hetero_graph.hpp"

namespace feddes {

struct MetaTrainConfig {
    double learning_rate = 1e-3;
    std::size_t max_epochs = 300;
    std::size_t patience = 20;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct MetaTrainResult {
    MetaLearner learner; // weights from the best-validation epoch
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
};

// Multi-label BCE over training sample nodes only; validation nodes
// participate in message passing but contribute no training loss.
// Mini-batches are node subsets with full-graph propagation.
MetaTrainResult train_meta_learner(const HeteroGraph& graph, const Matrix& meta_labels,
                                   const std::vector<std::size_t>& train_nodes,
                                   const std::vector<std::size_t>& val_nodes,
                                   const MetaLearnerConfig& model_cfg,
                                   const MetaTrainConfig& train_cfg);

// Mean BCE of the given sample-node rows against their meta-label rows.
double masked_bce(const Matrix& logits, const Matrix& meta_labels,
                  const std::vector<std::size_t>& nodes);

std::string history_to_csv(const std::vector<EpochStats>& history);

} // namespace feddes
