#pragma once

#include <vector>

#include "feddes/matrix.hpp"
#include "feddes/pool.hpp"

namespace feddes {

// Per-client decision-space view of a sample set: P stacks the concatenated
// calibrated probability vectors of all M pool classifiers, Z marks which
// classifiers predict each sample's true label.
struct DecisionSpace {
    Matrix p;                // N x (M*C)
    Matrix z;                // N x M, entries 0/1
    std::size_t class_count = 0;
    std::size_t pool_size = 0;

    // probability classifier m assigns to class c on row i
    double prob(std::size_t i, std::size_t m, std::size_t c) const {
        return p(i, m * class_count + c);
    }
    std::size_t block_argmax(std::size_t i, std::size_t m) const;
};

// Embedding rows only (no meta-labels): softmax(logits_m / T_m) concatenated
// over the pool, using the receiver's temperatures. Used for queries.
Matrix decision_embed(const ClassifierPool& pool, const Matrix& x);

// Full projection for labeled rows. home_oof_logits, when non-empty, supplies
// out-of-fold logits per local model of `client` (indexed by local_index);
// rows for those pool entries then come from OOF instead of the full retrain.
DecisionSpace project_decision_space(const ClassifierPool& pool, std::size_t client,
                                     const Matrix& x, const std::vector<std::size_t>& y,
                                     const std::vector<Matrix>& home_oof_logits);

} // namespace feddes
