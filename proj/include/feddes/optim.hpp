#pragma once

#include <cstdint>
#include <vector>

#include "feddes/autodiff.hpp"
#include "feddes/matrix.hpp"

namespace feddes {

// Standard Adam with bias correction. One state per trained model; moment
// accumulators are keyed by parameter order, which must be stable.
struct AdamState {
    std::uint64_t step = 0;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
};

// Applies one update in place; params[i] paired with grads[i].
// Throws TrainingError on non-finite gradients.
void adam_step(AdamState& state, std::vector<Matrix*> params, std::vector<const Matrix*> grads);

// Convenience for autodiff leaves: uses leaf->grad, then zeroes it.
void adam_step(AdamState& state, const std::vector<ad::NodePtr>& params);

} // namespace feddes
