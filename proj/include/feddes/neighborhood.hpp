#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "feddes/decision_space.hpp"
#include "feddes/matrix.hpp"

namespace feddes {

constexpr std::size_t kNoSelfExclude = std::numeric_limits<std::size_t>::max();

struct ClassNeighbors {
    std::size_t cls = 0;
    std::vector<std::size_t> indices; // candidate rows, ascending (distance, index)
    std::vector<double> distances;
    double stability = 0.0; // d-bar: drift of the cumulative neighbor mean
    double mass = 0.0;      // pi_c: share of total influence for this class
};

struct Neighborhood {
    std::vector<ClassNeighbors> classes; // ascending class id, only classes with neighbors
    // flattened (index, weight) pairs after hierarchical weighting; weights sum to 1
    std::vector<std::size_t> neighbor_indices;
    std::vector<double> weights;
};

// Per class with at least one candidate, the min(k, available) nearest rows of
// cand_embed to target by L1 distance; ties broken by smaller row index.
Neighborhood class_balanced_neighbors(const Matrix& cand_embed,
                                      const std::vector<std::size_t>& cand_labels,
                                      std::size_t class_count, const double* target,
                                      std::size_t self_exclude, std::size_t k);

// Average drift of the cumulative neighbor mean from the target, neighbors
// ordered by increasing distance.
double cmdw_stability(const Matrix& cand_embed, const std::vector<std::size_t>& neighbor_rows,
                      const double* target);

// Fills stability (via cmdw), class masses pi_c ~ 1/(stability + epsilon) and
// final per-neighbor weights: within a class, pi_c * softmax(-distance).
void hierarchical_weights(const Matrix& cand_embed, const double* target, Neighborhood& n,
                          double epsilon = 1e-8);

// All of the above for one target.
Neighborhood compute_neighborhood(const Matrix& cand_embed,
                                  const std::vector<std::size_t>& cand_labels,
                                  std::size_t class_count, const double* target,
                                  std::size_t self_exclude, std::size_t k,
                                  double epsilon = 1e-8);

struct GainResult {
    std::vector<double> gain;     // per classifier, relative to pool mean
    std::vector<double> log_loss; // weighted log-loss tie-break key, lower is better
};

// G(f_m) = sum_i w_i (Z[i,m] - mean_m' Z[i,m']) over the weighted neighborhood;
// zero-sum across the pool by construction.
GainResult gain_scores(const Neighborhood& n, const DecisionSpace& ds,
                       const std::vector<std::size_t>& cand_labels);

} // namespace feddes
