#include "feddes/decision_space.hpp"

#include <algorithm>

#include "feddes/errors.hpp"
#include "feddes/kernels.hpp"

namespace feddes {

std::size_t DecisionSpace::block_argmax(std::size_t i, std::size_t m) const {
    const double* row = p.row_ptr(i) + m * class_count;
    std::size_t best = 0;
    for (std::size_t c = 1; c < class_count; ++c)
        if (row[c] > row[best]) best = c;
    return best;
}

namespace {

void write_calibrated_block(Matrix& dst, std::size_t m, std::size_t class_count,
                            const Matrix& logits, double temperature) {
    Matrix scaled(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.size(); ++i)
        scaled.raw()[i] = logits.raw()[i] / temperature;
    Matrix probs = softmax_rows(scaled);
    for (std::size_t i = 0; i < probs.rows(); ++i)
        std::copy_n(probs.row_ptr(i), class_count, dst.row_ptr(i) + m * class_count);
}

} // namespace

Matrix decision_embed(const ClassifierPool& pool, const Matrix& x) {
    if (pool.size() == 0) throw ValidationError("decision_embed: empty pool");
    const std::size_t c = pool[0].model->out_dim();
    Matrix p(x.rows(), pool.size() * c);
    for (std::size_t m = 0; m < pool.size(); ++m) {
        const auto& e = pool[m];
        if (e.model->out_dim() != c)
            throw DimensionError("decision_embed: pool models disagree on class count");
        write_calibrated_block(p, m, c, e.model->logits(x), e.temperature);
    }
    return p;
}

DecisionSpace project_decision_space(const ClassifierPool& pool, std::size_t client,
                                     const Matrix& x, const std::vector<std::size_t>& y,
                                     const std::vector<Matrix>& home_oof_logits) {
    if (pool.size() == 0) throw ValidationError("project_decision_space: empty pool");
    if (x.rows() != y.size())
        throw DimensionError("project_decision_space: feature rows != label count");
    const std::size_t c = pool[0].model->out_dim();

    DecisionSpace ds;
    ds.class_count = c;
    ds.pool_size = pool.size();
    ds.p = Matrix(x.rows(), pool.size() * c);

    for (std::size_t m = 0; m < pool.size(); ++m) {
        const auto& e = pool[m];
        const bool use_oof =
            e.home_client == client && e.local_index < home_oof_logits.size() &&
            home_oof_logits[e.local_index].rows() == x.rows();
        const Matrix logits = use_oof ? home_oof_logits[e.local_index] : e.model->logits(x);
        write_calibrated_block(ds.p, m, c, logits, e.temperature);
    }

    ds.z = Matrix(x.rows(), pool.size());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t m = 0; m < pool.size(); ++m)
            ds.z(i, m) = ds.block_argmax(i, m) == y[i] ? 1.0 : 0.0;
    return ds;
}

} // namespace feddes
