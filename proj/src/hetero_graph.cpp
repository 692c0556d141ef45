#include "feddes/hetero_graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "feddes/errors.hpp"
#include "feddes/kernels.hpp"

namespace feddes {

void HeteroGraph::canonicalize() {
    auto key = [](const Edge& e) { return std::make_pair(e.dst, e.src); };
    std::sort(sample_sample.begin(), sample_sample.end(),
              [&](const Edge& a, const Edge& b) { return key(a) < key(b); });
    std::sort(classifier_sample.begin(), classifier_sample.end(),
              [&](const Edge& a, const Edge& b) { return key(a) < key(b); });
}

Matrix classifier_node_features(const DecisionSpace& ds_train,
                                const std::vector<std::size_t>& y_train) {
    const std::size_t m_count = ds_train.pool_size;
    const std::size_t c_count = ds_train.class_count;
    const std::size_t n = y_train.size();
    if (ds_train.p.rows() != n)
        throw DimensionError("classifier_node_features: decision space / labels mismatch");

    Matrix f(m_count, 3 * c_count + 2);
    std::vector<std::size_t> class_n(c_count, 0);
    for (std::size_t y : y_train) class_n[y] += 1;

    for (std::size_t m = 0; m < m_count; ++m) {
        std::vector<std::size_t> class_hit(c_count, 0);
        std::vector<double> class_conf(c_count, 0.0);
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t y = y_train[i];
            const bool hit = ds_train.block_argmax(i, m) == y;
            if (hit) class_hit[y] += 1;
            acc += hit ? 1.0 : 0.0;
            class_conf[y] += ds_train.prob(i, m, y);
        }
        double balacc = 0.0;
        std::size_t present = 0;
        for (std::size_t c = 0; c < c_count; ++c) {
            double recall = 0.0, se = 0.0, conf = 0.0;
            if (class_n[c] > 0) {
                const double nc = static_cast<double>(class_n[c]);
                recall = static_cast<double>(class_hit[c]) / nc;
                se = std::sqrt(recall * (1.0 - recall) / nc);
                conf = class_conf[c] / nc;
                balacc += recall;
                ++present;
            }
            f(m, c) = recall;
            f(m, c_count + c) = se;
            f(m, 2 * c_count + c) = conf;
        }
        f(m, 3 * c_count) = n ? acc / static_cast<double>(n) : 0.0;
        f(m, 3 * c_count + 1) = present ? balacc / static_cast<double>(present) : 0.0;
    }
    return f;
}

namespace {

struct TargetEdges {
    std::vector<Edge> ss;
    std::vector<Edge> cs;
};

// Shared edge recipe for training nodes, validation nodes and queries.
TargetEdges edges_for_target(const DecisionSpace& ds_train,
                             const std::vector<std::size_t>& y_train, const double* target_embed,
                             std::size_t self_exclude, std::size_t dst_node,
                             const GraphParams& params) {
    TargetEdges out;
    Neighborhood nb = compute_neighborhood(ds_train.p, y_train, ds_train.class_count,
                                           target_embed, self_exclude, params.k_ss,
                                           params.epsilon);
    for (std::size_t i = 0; i < nb.neighbor_indices.size(); ++i)
        out.ss.push_back({nb.neighbor_indices[i], dst_node, nb.weights[i]});

    GainResult g = gain_scores(nb, ds_train, y_train);
    std::vector<std::size_t> order(ds_train.pool_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (g.gain[a] != g.gain[b]) return g.gain[a] > g.gain[b];
        if (g.log_loss[a] != g.log_loss[b]) return g.log_loss[a] < g.log_loss[b];
        return a < b;
    });
    const std::size_t take = std::min(params.k_cs, ds_train.pool_size);
    double min_gain = g.gain[order[0]];
    for (std::size_t i = 0; i < take; ++i) min_gain = std::min(min_gain, g.gain[order[i]]);
    double total = 0.0;
    for (std::size_t i = 0; i < take; ++i) total += g.gain[order[i]] - min_gain + 1e-6;
    for (std::size_t i = 0; i < take; ++i)
        out.cs.push_back({order[i], dst_node, (g.gain[order[i]] - min_gain + 1e-6) / total});
    return out;
}

} // namespace

HeteroGraph build_graph(const Matrix& x_train_raw, const DecisionSpace& ds_train,
                        const std::vector<std::size_t>& y_train, const GraphParams& params) {
    const std::size_t n = y_train.size();
    if (x_train_raw.rows() != n || ds_train.p.rows() != n)
        throw DimensionError("build_graph: inconsistent training inputs");
    if (n < 2) throw ValidationError("build_graph: need at least two training samples");

    HeteroGraph g;
    g.class_count = ds_train.class_count;
    g.sample_features = x_train_raw;
    g.sample_labels.assign(y_train.begin(), y_train.end());
    g.classifier_features = classifier_node_features(ds_train, y_train);

    std::vector<TargetEdges> per_target(n);
    const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 16)
    for (long long j = 0; j < nn; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        per_target[sj] =
            edges_for_target(ds_train, y_train, ds_train.p.row_ptr(sj), sj, sj, params);
    }
    for (auto& te : per_target) {
        g.sample_sample.insert(g.sample_sample.end(), te.ss.begin(), te.ss.end());
        g.classifier_sample.insert(g.classifier_sample.end(), te.cs.begin(), te.cs.end());
    }
    g.canonicalize();
    return g;
}

HeteroGraph insert_queries(const HeteroGraph& graph, const DecisionSpace& ds_train,
                           const std::vector<std::size_t>& y_train, const Matrix& query_embed,
                           const Matrix& query_raw, const std::vector<long>& labels,
                           const GraphParams& params) {
    if (query_embed.rows() != query_raw.rows())
        throw DimensionError("insert_queries: embed/raw row mismatch");
    if (!labels.empty() && labels.size() != query_embed.rows())
        throw DimensionError("insert_queries: labels must be empty or one per query");
    const std::size_t n0 = graph.num_samples();
    const std::size_t q = query_embed.rows();

    HeteroGraph out = graph;
    Matrix features(n0 + q, graph.sample_features.cols());
    std::copy_n(graph.sample_features.data(), graph.sample_features.size(), features.data());
    for (std::size_t i = 0; i < q; ++i)
        std::copy_n(query_raw.row_ptr(i), query_raw.cols(), features.row_ptr(n0 + i));
    out.sample_features = std::move(features);
    for (std::size_t i = 0; i < q; ++i)
        out.sample_labels.push_back(labels.empty() ? kUnlabeled : labels[i]);

    std::vector<TargetEdges> per_query(q);
    const long long qq = static_cast<long long>(q);
#pragma omp parallel for schedule(dynamic, 16)
    for (long long i = 0; i < qq; ++i) {
        const auto si = static_cast<std::size_t>(i);
        per_query[si] = edges_for_target(ds_train, y_train, query_embed.row_ptr(si),
                                         kNoSelfExclude, n0 + si, params);
    }
    for (auto& te : per_query) {
        out.sample_sample.insert(out.sample_sample.end(), te.ss.begin(), te.ss.end());
        out.classifier_sample.insert(out.classifier_sample.end(), te.cs.begin(), te.cs.end());
    }
    out.canonicalize();
    return out;
}

HeteroGraph insert_query(const HeteroGraph& graph, const DecisionSpace& ds_train,
                         const std::vector<std::size_t>& y_train, const double* query_embed,
                         const double* query_raw, const GraphParams& params) {
    Matrix embed(1, ds_train.p.cols());
    std::copy_n(query_embed, embed.cols(), embed.data());
    Matrix raw(1, graph.sample_features.cols());
    std::copy_n(query_raw, raw.cols(), raw.data());
    return insert_queries(graph, ds_train, y_train, embed, raw, {}, params);
}

nlohmann::json graph_to_json(const HeteroGraph& g) {
    nlohmann::json j;
    j["class_count"] = g.class_count;
    j["sample_labels"] = g.sample_labels;
    auto mat = [](const Matrix& m) {
        nlohmann::json out;
        out["rows"] = m.rows();
        out["cols"] = m.cols();
        out["data"] = m.raw();
        return out;
    };
    j["sample_features"] = mat(g.sample_features);
    j["classifier_features"] = mat(g.classifier_features);
    auto edges = [](const std::vector<Edge>& es) {
        auto arr = nlohmann::json::array();
        for (const auto& e : es) arr.push_back({{"src", e.src}, {"dst", e.dst}, {"w", e.weight}});
        return arr;
    };
    j["sample_sample"] = edges(g.sample_sample);
    j["classifier_sample"] = edges(g.classifier_sample);
    return j;
}

HeteroGraph graph_from_json(const nlohmann::json& j) {
    HeteroGraph g;
    g.class_count = j.at("class_count").get<std::size_t>();
    g.sample_labels = j.at("sample_labels").get<std::vector<long>>();
    auto mat = [](const nlohmann::json& m) {
        return Matrix(m.at("rows").get<std::size_t>(), m.at("cols").get<std::size_t>(),
                      m.at("data").get<std::vector<double>>());
    };
    g.sample_features = mat(j.at("sample_features"));
    g.classifier_features = mat(j.at("classifier_features"));
    auto edges = [](const nlohmann::json& arr) {
        std::vector<Edge> es;
        for (const auto& e : arr)
            es.push_back({e.at("src").get<std::size_t>(), e.at("dst").get<std::size_t>(),
                          e.at("w").get<double>()});
        return es;
    };
    g.sample_sample = edges(j.at("sample_sample"));
    g.classifier_sample = edges(j.at("classifier_sample"));
    return g;
}

} // namespace feddes
