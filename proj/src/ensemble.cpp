#include "feddes/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "feddes/errors.hpp"
#include "feddes/kernels.hpp"

namespace feddes {

EnsembleDecision decide(const std::vector<double>& logits) {
    if (logits.empty()) throw ValidationError("decide: empty logit vector");
    const std::size_t m = logits.size();
    EnsembleDecision d;
    d.scores.resize(m);
    d.selected.assign(m, false);
    d.weights.assign(m, 0.0);
    double selected_sum = 0.0;
    std::size_t selected_count = 0;
    for (std::size_t i = 0; i < m; ++i) {
        d.scores[i] = sigmoid_scalar(logits[i]);
        if (d.scores[i] > 0.5) {
            d.selected[i] = true;
            selected_sum += d.scores[i];
            ++selected_count;
        }
    }
    if (selected_count == 0) {
        d.fallback = true;
        d.size = m;
        d.weights.assign(m, 1.0 / static_cast<double>(m));
    } else {
        d.size = selected_count;
        for (std::size_t i = 0; i < m; ++i)
            if (d.selected[i]) d.weights[i] = d.scores[i] / selected_sum;
    }
    return d;
}

void vote(EnsembleDecision& d, const std::vector<std::size_t>& hard_predictions,
          std::size_t class_count) {
    if (hard_predictions.size() != d.weights.size())
        throw DimensionError("vote: one hard prediction per classifier required");
    d.vote_mass.assign(class_count, 0.0);
    for (std::size_t m = 0; m < hard_predictions.size(); ++m) {
        if (hard_predictions[m] >= class_count)
            throw ValidationError("vote: prediction out of class range");
        d.vote_mass[hard_predictions[m]] += d.weights[m];
    }
    d.predicted = 0;
    for (std::size_t c = 1; c < class_count; ++c)
        if (d.vote_mass[c] > d.vote_mass[d.predicted]) d.predicted = c;
}

double effective_ensemble_size(const std::vector<double>& weights) {
    double sq = 0.0, total = 0.0;
    for (double w : weights) {
        sq += w * w;
        total += w;
    }
    if (sq <= 0.0) throw ValidationError("effective_ensemble_size: zero weight vector");
    if (std::fabs(total - 1.0) > 1e-6)
        throw ValidationError("effective_ensemble_size: weights must sum to 1");
    return 1.0 / sq;
}

double win_rate(const std::vector<double>& method_metric,
                const std::vector<double>& local_metric) {
    if (method_metric.size() != local_metric.size() || method_metric.empty())
        throw ValidationError("win_rate: client sets differ or are empty");
    std::size_t wins = 0;
    for (std::size_t k = 0; k < method_metric.size(); ++k)
        if (method_metric[k] > local_metric[k]) ++wins;
    return 100.0 * static_cast<double>(wins) / static_cast<double>(method_metric.size());
}

std::size_t uniform_hard_vote(const std::vector<std::size_t>& preds_per_model,
                              const std::vector<std::size_t>& subset, std::size_t class_count) {
    if (subset.empty()) throw ValidationError("uniform_hard_vote: empty subset");
    std::vector<double> mass(class_count, 0.0);
    const double w = 1.0 / static_cast<double>(subset.size());
    for (std::size_t m : subset) mass.at(preds_per_model.at(m)) += w;
    std::size_t best = 0;
    for (std::size_t c = 1; c < class_count; ++c)
        if (mass[c] > mass[best]) best = c;
    return best;
}

namespace {

// average ranks with ties
std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

} // namespace

SpearmanResult spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw ValidationError("spearman: need two equal-length series");
    auto ra = ranks(a);
    auto rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    SpearmanResult r;
    if (va <= 0.0 || vb <= 0.0) {
        r.degenerate = true;
        r.rho = 0.0;
        return r;
    }
    r.rho = cov / std::sqrt(va * vb);
    return r;
}

CorrelationResult selection_frequency_correlation(
    const std::vector<std::vector<EnsembleDecision>>& decisions_per_client,
    const std::vector<std::vector<std::size_t>>& test_labels_per_client,
    const Matrix& home_frequency, const std::vector<std::size_t>& classifier_home,
    std::size_t class_count) {
    if (decisions_per_client.size() != test_labels_per_client.size())
        throw ValidationError("selection_frequency_correlation: client lists differ");
    const std::size_t m_count = classifier_home.size();
    if (home_frequency.rows() != m_count || home_frequency.cols() != class_count)
        throw DimensionError("selection_frequency_correlation: frequency matrix must be M x C");

    Matrix score_sum(m_count, class_count), home_sum(m_count, class_count);
    std::vector<std::size_t> n_total(class_count, 0);
    Matrix home_n(m_count, class_count);

    for (std::size_t k = 0; k < decisions_per_client.size(); ++k) {
        const auto& decisions = decisions_per_client[k];
        const auto& labels = test_labels_per_client[k];
        if (decisions.size() != labels.size())
            throw ValidationError("selection_frequency_correlation: decisions/labels mismatch");
        for (std::size_t q = 0; q < decisions.size(); ++q) {
            const std::size_t c = labels[q];
            n_total[c] += 1;
            for (std::size_t m = 0; m < m_count; ++m) {
                score_sum(m, c) += decisions[q].scores.at(m);
                if (classifier_home[m] == k) {
                    home_sum(m, c) += decisions[q].scores[m];
                    home_n(m, c) += 1.0;
                }
            }
        }
    }

    CorrelationResult result;
    std::vector<double> xs, ys;
    for (std::size_t m = 0; m < m_count; ++m) {
        for (std::size_t c = 0; c < class_count; ++c) {
            CorrelationPair p;
            p.classifier = m;
            p.home_client = classifier_home[m];
            p.cls = c;
            p.home_class_frequency = home_frequency(m, c);
            p.n_total = n_total[c];
            p.mean_score = n_total[c] ? score_sum(m, c) / static_cast<double>(n_total[c]) : 0.0;
            p.n_home = static_cast<std::size_t>(home_n(m, c));
            p.home_mean_score = p.n_home ? home_sum(m, c) / home_n(m, c) : 0.0;
            result.pairs.push_back(p);
            if (n_total[c]) {
                xs.push_back(p.mean_score);
                ys.push_back(p.home_class_frequency);
            }
        }
    }
    result.overall = xs.size() >= 2 ? spearman(xs, ys) : SpearmanResult{0.0, true};
    return result;
}

} // namespace feddes
