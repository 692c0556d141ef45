#pragma once

#include <cstddef>
#include <vector>

#include "feddes/matrix.hpp"

namespace feddes {

struct CalibrationResult {
    double temperature = 1.0;
    bool degenerate_warning = false; // val set had < 2 usable classes; T forced to 1
    double nll = 0.0;                // NLL at the returned temperature
};

// Mean negative log-likelihood of softmax(logits / T) against labels.
double nll_at_temperature(const Matrix& logits, const std::vector<std::size_t>& labels, double t);

// Scalar T > 0 minimizing the NLL on the receiver's validation set, found by
// golden-section search on log T in [log 0.05, log 20], tolerance 1e-3.
// known_classes limits which label values count toward the >=2-class check.
CalibrationResult calibrate_temperature(const Matrix& val_logits,
                                        const std::vector<std::size_t>& val_labels,
                                        const std::vector<std::size_t>& known_classes);

} // namespace feddes
