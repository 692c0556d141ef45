#include "feddes/optim.hpp"

#include <cmath>

#include "feddes/errors.hpp"

namespace feddes {

void adam_step(AdamState& state, std::vector<Matrix*> params, std::vector<const Matrix*> grads) {
    if (params.size() != grads.size())
        throw DimensionError("adam_step: params/grads count mismatch");
    if (state.first_moment.empty()) {
        for (const Matrix* p : params) {
            state.first_moment.emplace_back(p->rows(), p->cols());
            state.second_moment.emplace_back(p->rows(), p->cols());
        }
    }
    if (state.first_moment.size() != params.size())
        throw DimensionError("adam_step: state sized for a different parameter set");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    for (std::size_t k = 0; k < params.size(); ++k) {
        Matrix& p = *params[k];
        const Matrix& g = *grads[k];
        check_same_shape(p, g, "adam_step");
        Matrix& m = state.first_moment[k];
        Matrix& v = state.second_moment[k];
        check_same_shape(p, m, "adam_step: moment shape");
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g.raw()[i];
            if (!std::isfinite(gi))
                throw TrainingError("adam_step: non-finite gradient at parameter block " +
                                    std::to_string(k));
            m.raw()[i] = state.beta1 * m.raw()[i] + (1.0 - state.beta1) * gi;
            v.raw()[i] = state.beta2 * v.raw()[i] + (1.0 - state.beta2) * gi * gi;
            const double mhat = m.raw()[i] / bc1;
            const double vhat = v.raw()[i] / bc2;
            p.raw()[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

void adam_step(AdamState& state, const std::vector<ad::NodePtr>& params) {
    std::vector<Matrix*> p;
    std::vector<const Matrix*> g;
    p.reserve(params.size());
    g.reserve(params.size());
    for (const auto& n : params) {
        p.push_back(&n->value);
        g.push_back(&n->grad);
    }
    adam_step(state, std::move(p), std::move(g));
    for (const auto& n : params) n->zero_grad();
}

} // namespace feddes
