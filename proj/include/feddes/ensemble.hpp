#pragma once

#include <cstddef>
#include <vector>

#include "feddes/matrix.hpp"

namespace feddes {

// Per-query selection outcome: sigmoid competence scores, the strict > 0.5
// mask, normalized voting weights (uniform over all M on fallback), and the
// voted label once vote() has run.
struct EnsembleDecision {
    std::size_t query = 0;
    std::vector<double> scores;   // q in (0,1)
    std::vector<bool> selected;   // q > 0.5, strict
    std::vector<double> weights;  // sums to 1; zero off-mask unless fallback
    bool fallback = false;        // max q <= 0.5
    std::size_t size = 0;         // classifiers with nonzero weight
    std::size_t predicted = 0;
    std::vector<double> vote_mass; // per class, sums to 1
};

// Eq-style selection: q = sigmoid(s); select q > 0.5; weights = q renormalized
// over the selection, or uniform 1/M when nothing is selected.
EnsembleDecision decide(const std::vector<double>& logits);

// Competence-weighted hard voting; argmax ties break to the smallest class.
void vote(EnsembleDecision& d, const std::vector<std::size_t>& hard_predictions,
          std::size_t class_count);

// Inverse Simpson index 1 / sum w^2 of a weight vector summing to 1.
double effective_ensemble_size(const std::vector<double>& weights);

// Percentage of clients where method strictly beats local.
double win_rate(const std::vector<double>& method_metric,
                const std::vector<double>& local_metric);

// Uniform hard vote over a classifier subset; ties break to the smallest class.
std::size_t uniform_hard_vote(const std::vector<std::size_t>& preds_per_model,
                              const std::vector<std::size_t>& subset, std::size_t class_count);

struct SpearmanResult {
    double rho = 0.0;
    bool degenerate = false; // a rank variance was zero; rho reported as 0
};

SpearmanResult spearman(const std::vector<double>& a, const std::vector<double>& b);

struct CorrelationPair {
    std::size_t classifier = 0;
    std::size_t home_client = 0;
    std::size_t cls = 0;
    double home_class_frequency = 0.0; // share of cls in the home client's training data
    double mean_score = 0.0;           // mean q over all clients' test samples of cls
    double home_mean_score = 0.0;      // same, home client's test samples only
    std::size_t n_total = 0;
    std::size_t n_home = 0;
};

struct CorrelationResult {
    std::vector<CorrelationPair> pairs; // one per (classifier, class)
    SpearmanResult overall;
};

// Selection score vs home-class-frequency analysis. decisions/test_labels are
// per client; home_frequency is M x C (training-label shares at each model's
// home client); classifier_home maps classifier -> home client.
CorrelationResult selection_frequency_correlation(
    const std::vector<std::vector<EnsembleDecision>>& decisions_per_client,
    const std::vector<std::vector<std::size_t>>& test_labels_per_client,
    const Matrix& home_frequency, const std::vector<std::size_t>& classifier_home,
    std::size_t class_count);

} // namespace feddes
