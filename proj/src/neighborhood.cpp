#include "feddes/neighborhood.hpp"

#include <algorithm>
#include <cmath>

#include "feddes/errors.hpp"
#include "feddes/kernels.hpp"

namespace feddes {

Neighborhood class_balanced_neighbors(const Matrix& cand_embed,
                                      const std::vector<std::size_t>& cand_labels,
                                      std::size_t class_count, const double* target,
                                      std::size_t self_exclude, std::size_t k) {
    if (cand_embed.rows() != cand_labels.size())
        throw DimensionError("class_balanced_neighbors: embeddings/labels mismatch");
    if (k == 0) throw ValidationError("class_balanced_neighbors: k must be positive");

    std::vector<std::pair<double, std::size_t>> scratch;
    Neighborhood out;
    for (std::size_t c = 0; c < class_count; ++c) {
        scratch.clear();
        for (std::size_t i = 0; i < cand_embed.rows(); ++i) {
            if (i == self_exclude || cand_labels[i] != c) continue;
            scratch.emplace_back(l1_distance(cand_embed.row_ptr(i), target, cand_embed.cols()), i);
        }
        if (scratch.empty()) continue;
        const std::size_t take = std::min(k, scratch.size());
        std::partial_sort(scratch.begin(), scratch.begin() + take, scratch.end());
        ClassNeighbors cn;
        cn.cls = c;
        for (std::size_t i = 0; i < take; ++i) {
            cn.distances.push_back(scratch[i].first);
            cn.indices.push_back(scratch[i].second);
        }
        out.classes.push_back(std::move(cn));
    }
    return out;
}

double cmdw_stability(const Matrix& cand_embed, const std::vector<std::size_t>& neighbor_rows,
                      const double* target) {
    if (neighbor_rows.empty()) throw ValidationError("cmdw_stability: empty neighbor list");
    const std::size_t dim = cand_embed.cols();
    std::vector<double> running_sum(dim, 0.0);
    double total = 0.0;
    for (std::size_t r = 0; r < neighbor_rows.size(); ++r) {
        const double* row = cand_embed.row_ptr(neighbor_rows[r]);
        double drift = 0.0;
        const double inv = 1.0 / static_cast<double>(r + 1);
        for (std::size_t d = 0; d < dim; ++d) {
            running_sum[d] += row[d];
            drift += std::fabs(running_sum[d] * inv - target[d]);
        }
        total += drift;
    }
    return total / static_cast<double>(neighbor_rows.size());
}

void hierarchical_weights(const Matrix& cand_embed, const double* target, Neighborhood& n,
                          double epsilon) {
    if (n.classes.empty())
        throw ValidationError("hierarchical_weights: neighborhood has no classes");

    double mass_total = 0.0;
    for (auto& cn : n.classes) {
        cn.stability = cmdw_stability(cand_embed, cn.indices, target);
        cn.mass = 1.0 / (cn.stability + epsilon);
        mass_total += cn.mass;
    }
    for (auto& cn : n.classes) cn.mass /= mass_total;

    n.neighbor_indices.clear();
    n.weights.clear();
    for (auto& cn : n.classes) {
        // softmax over negative distances, max-shifted for stability
        double dmin = cn.distances[0];
        for (double d : cn.distances) dmin = std::min(dmin, d);
        double denom = 0.0;
        for (double d : cn.distances) denom += std::exp(dmin - d);
        for (std::size_t i = 0; i < cn.indices.size(); ++i) {
            n.neighbor_indices.push_back(cn.indices[i]);
            n.weights.push_back(cn.mass * std::exp(dmin - cn.distances[i]) / denom);
        }
    }
}

Neighborhood compute_neighborhood(const Matrix& cand_embed,
                                  const std::vector<std::size_t>& cand_labels,
                                  std::size_t class_count, const double* target,
                                  std::size_t self_exclude, std::size_t k, double epsilon) {
    Neighborhood n =
        class_balanced_neighbors(cand_embed, cand_labels, class_count, target, self_exclude, k);
    if (n.classes.empty())
        throw ValidationError("compute_neighborhood: no candidate neighbors for target");
    hierarchical_weights(cand_embed, target, n, epsilon);
    return n;
}

GainResult gain_scores(const Neighborhood& n, const DecisionSpace& ds,
                       const std::vector<std::size_t>& cand_labels) {
    const std::size_t m = ds.pool_size;
    GainResult r;
    r.gain.assign(m, 0.0);
    r.log_loss.assign(m, 0.0);
    for (std::size_t nb = 0; nb < n.neighbor_indices.size(); ++nb) {
        const std::size_t i = n.neighbor_indices[nb];
        const double w = n.weights[nb];
        double pool_mean = 0.0;
        for (std::size_t j = 0; j < m; ++j) pool_mean += ds.z(i, j);
        pool_mean /= static_cast<double>(m);
        const std::size_t y = cand_labels[i];
        for (std::size_t j = 0; j < m; ++j) {
            r.gain[j] += w * (ds.z(i, j) - pool_mean);
            const double p = std::max(ds.prob(i, j, y), 1e-15);
            r.log_loss[j] += w * -std::log(p);
        }
    }
    return r;
}

} // namespace feddes
