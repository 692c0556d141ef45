#include "feddes/gat.hpp"

#include <algorithm>
#include <cmath>

#include "feddes/errors.hpp"

namespace feddes {

namespace {

Matrix glorot(std::size_t rows, std::size_t cols, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Matrix m(rows, cols);
    for (auto& v : m.raw()) v = rng.uniform(-bound, bound);
    return m;
}

GatEdgeTypeParams make_edge_type(std::size_t in, std::size_t hidden, std::size_t head_dim,
                                 Rng& rng) {
    GatEdgeTypeParams p;
    p.w_target = ad::leaf(glorot(in, hidden, rng));
    p.w_source = ad::leaf(glorot(in, hidden, rng));
    Matrix att(1, hidden);
    const double bound = std::sqrt(6.0 / static_cast<double>(head_dim + 1));
    for (auto& v : att.raw()) v = rng.uniform(-bound, bound);
    p.attention = ad::leaf(std::move(att));
    p.bias = ad::leaf(Matrix(1, hidden));
    return p;
}

struct EdgeView {
    std::vector<std::size_t> src;
    std::vector<std::size_t> dst;
    std::vector<double> log_weight;
    std::vector<double> has_edge; // per target node: 1 if any in-edge of this type
};

EdgeView make_view(const std::vector<Edge>& edges, std::size_t num_targets) {
    std::vector<Edge> sorted = edges;
    std::sort(sorted.begin(), sorted.end(), [](const Edge& a, const Edge& b) {
        return std::make_pair(a.dst, a.src) < std::make_pair(b.dst, b.src);
    });
    EdgeView v;
    v.has_edge.assign(num_targets, 0.0);
    for (const auto& e : sorted) {
        v.src.push_back(e.src);
        v.dst.push_back(e.dst);
        v.log_weight.push_back(std::log(std::max(e.weight, 1e-12)));
        v.has_edge[e.dst] = 1.0;
    }
    return v;
}

ad::NodePtr dropout(const ad::NodePtr& x, double rate, bool train_mode, Rng* rng) {
    if (!train_mode || rate <= 0.0) return x;
    if (!rng) throw ValidationError("MetaLearner: dropout in train mode needs an rng");
    Matrix mask(x->value.rows(), x->value.cols());
    const double keep = 1.0 - rate;
    for (auto& v : mask.raw()) v = rng->uniform() < keep ? 1.0 / keep : 0.0;
    return ad::mul(x, ad::constant(std::move(mask)));
}

// One edge type's attention aggregation onto sample nodes.
ad::NodePtr aggregate_edge_type(const GatEdgeTypeParams& p, const EdgeView& view,
                                const ad::NodePtr& h_target_role, const ad::NodePtr& h_source_role,
                                std::size_t num_targets, std::size_t heads, double slope) {
    if (view.src.empty()) return nullptr;
    auto ht = ad::matmul(h_target_role, p.w_target);
    auto hs = ad::matmul(h_source_role, p.w_source);
    auto ht_e = ad::gather_rows(ht, view.dst);
    auto hs_e = ad::gather_rows(hs, view.src);
    auto pre = ad::leaky_relu(ad::add(ht_e, hs_e), slope);
    auto logits = ad::headwise_dot(pre, p.attention, heads);

    Matrix wbias(view.src.size(), heads);
    for (std::size_t e = 0; e < view.src.size(); ++e)
        for (std::size_t h = 0; h < heads; ++h) wbias(e, h) = view.log_weight[e];
    logits = ad::add(logits, ad::constant(std::move(wbias)));

    auto alpha = ad::segment_softmax(logits, view.dst, num_targets);
    auto out = ad::segment_weighted_sum(alpha, hs_e, view.dst, num_targets, heads);
    out = ad::add_rowvec(out, p.bias);
    return ad::row_scale(out, view.has_edge); // bias only where the type delivers messages
}

} // namespace

MetaLearner::MetaLearner(const MetaLearnerConfig& cfg, std::size_t sample_in_dim,
                         std::size_t classifier_in_dim, std::size_t pool_size,
                         std::uint64_t seed)
    : cfg_(cfg), sample_in_(sample_in_dim), classifier_in_(classifier_in_dim),
      pool_size_(pool_size) {
    if (cfg_.hidden % cfg_.heads != 0)
        throw ConfigError("MetaLearner: hidden width must be divisible by head count");
    if (cfg_.layers == 0) throw ConfigError("MetaLearner: need at least one layer");
    Rng rng(seed);
    const std::size_t head_dim = cfg_.hidden / cfg_.heads;
    sample_proj_w_ = ad::leaf(glorot(sample_in_, cfg_.hidden, rng));
    sample_proj_b_ = ad::leaf(Matrix(1, cfg_.hidden));
    classifier_proj_w_ = ad::leaf(glorot(classifier_in_, cfg_.hidden, rng));
    classifier_proj_b_ = ad::leaf(Matrix(1, cfg_.hidden));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        GatLayerParams lp;
        lp.sample_sample = make_edge_type(cfg_.hidden, cfg_.hidden, head_dim, rng);
        lp.classifier_sample = make_edge_type(cfg_.hidden, cfg_.hidden, head_dim, rng);
        layers_.push_back(std::move(lp));
    }
    out_w_ = ad::leaf(glorot(cfg_.hidden, pool_size_, rng));
    out_b_ = ad::leaf(Matrix(1, pool_size_));
}

ad::NodePtr MetaLearner::forward(const HeteroGraph& graph, bool train_mode, Rng* rng) const {
    if (graph.sample_features.cols() != sample_in_ ||
        graph.classifier_features.cols() != classifier_in_)
        throw DimensionError("MetaLearner::forward: graph feature widths do not match model");
    if (graph.num_classifiers() != pool_size_)
        throw DimensionError("MetaLearner::forward: pool size mismatch");
    const std::size_t n = graph.num_samples();

    // Every sample node carries a unit self-edge so the update blends the
    // node's own representation with its neighbors (and isolated nodes still
    // attend to themselves).
    std::vector<Edge> ss = graph.sample_sample;
    ss.reserve(ss.size() + n);
    for (std::size_t i = 0; i < n; ++i) ss.push_back({i, i, 1.0});
    EdgeView ss_view = make_view(ss, n);
    EdgeView cs_view = make_view(graph.classifier_sample, n);

    auto h_s = ad::add_rowvec(
        ad::matmul(ad::constant(graph.sample_features), sample_proj_w_), sample_proj_b_);
    auto h_c = ad::add_rowvec(
        ad::matmul(ad::constant(graph.classifier_features), classifier_proj_w_),
        classifier_proj_b_);
    h_s = dropout(h_s, cfg_.dropout, train_mode, rng);
    h_c = dropout(h_c, cfg_.dropout, train_mode, rng);

    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& lp = layers_[l];
        auto from_ss = aggregate_edge_type(lp.sample_sample, ss_view, h_s, h_s, n, cfg_.heads,
                                           cfg_.leaky_slope);
        auto from_cs = aggregate_edge_type(lp.classifier_sample, cs_view, h_s, h_c, n,
                                           cfg_.heads, cfg_.leaky_slope);

        // mean over the edge types that actually deliver messages to each node
        std::vector<double> inv_count(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double cnt = 0.0;
            if (from_ss) cnt += ss_view.has_edge[i];
            if (from_cs) cnt += cs_view.has_edge[i];
            inv_count[i] = cnt > 0.0 ? 1.0 / cnt : 0.0;
        }
        ad::NodePtr combined;
        if (from_ss && from_cs)
            combined = ad::add(from_ss, from_cs);
        else
            combined = from_ss ? from_ss : from_cs;
        if (!combined) throw ValidationError("MetaLearner::forward: graph has no edges");
        combined = ad::row_scale(combined, inv_count);

        h_s = ad::elu(combined);
        h_s = dropout(h_s, cfg_.dropout, train_mode, rng);

        if (cfg_.refresh_classifier_nodes && l + 1 < layers_.size())
            h_c = ad::elu(ad::add_rowvec(ad::matmul(h_c, lp.classifier_sample.w_source),
                                         lp.classifier_sample.bias));
    }
    return ad::add_rowvec(ad::matmul(h_s, out_w_), out_b_);
}

Matrix MetaLearner::logits(const HeteroGraph& graph) const {
    return forward(graph, false, nullptr)->value;
}

std::vector<ad::NodePtr> MetaLearner::parameters() const {
    std::vector<ad::NodePtr> v;
    for (const auto& [name, p] : named_parameters()) v.push_back(p);
    return v;
}

std::vector<std::pair<std::string, ad::NodePtr>> MetaLearner::named_parameters() const {
    std::vector<std::pair<std::string, ad::NodePtr>> v;
    v.emplace_back("sample_proj_w", sample_proj_w_);
    v.emplace_back("sample_proj_b", sample_proj_b_);
    v.emplace_back("classifier_proj_w", classifier_proj_w_);
    v.emplace_back("classifier_proj_b", classifier_proj_b_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        auto add_type = [&](const std::string& type, const GatEdgeTypeParams& p) {
            const std::string prefix = "layer" + std::to_string(l) + "." + type + ".";
            v.emplace_back(prefix + "w_target", p.w_target);
            v.emplace_back(prefix + "w_source", p.w_source);
            v.emplace_back(prefix + "attention", p.attention);
            v.emplace_back(prefix + "bias", p.bias);
        };
        add_type("ss", layers_[l].sample_sample);
        add_type("cs", layers_[l].classifier_sample);
    }
    v.emplace_back("out_w", out_w_);
    v.emplace_back("out_b", out_b_);
    return v;
}

std::vector<Matrix> MetaLearner::state() const {
    std::vector<Matrix> s;
    for (const auto& p : parameters()) s.push_back(p->value);
    return s;
}

void MetaLearner::set_state(const std::vector<Matrix>& s) {
    auto params = parameters();
    if (s.size() != params.size())
        throw DimensionError("MetaLearner::set_state: block count mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
        check_same_shape(params[i]->value, s[i], "MetaLearner::set_state");
        params[i]->value = s[i];
    }
}

nlohmann::json MetaLearner::to_json() const {
    nlohmann::json j;
    j["version"] = 1;
    j["hidden"] = cfg_.hidden;
    j["heads"] = cfg_.heads;
    j["layers"] = cfg_.layers;
    j["dropout"] = cfg_.dropout;
    j["leaky_slope"] = cfg_.leaky_slope;
    j["refresh_classifier_nodes"] = cfg_.refresh_classifier_nodes;
    j["sample_in_dim"] = sample_in_;
    j["classifier_in_dim"] = classifier_in_;
    j["pool_size"] = pool_size_;
    nlohmann::json blocks;
    for (const auto& [name, p] : named_parameters()) {
        blocks[name] = {{"rows", p->value.rows()}, {"cols", p->value.cols()},
                        {"data", p->value.raw()}};
    }
    j["blocks"] = std::move(blocks);
    return j;
}

MetaLearner MetaLearner::from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != 1)
        throw IoError("MetaLearner::from_json: unsupported version");
    MetaLearnerConfig cfg;
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.layers = j.at("layers").get<std::size_t>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.leaky_slope = j.at("leaky_slope").get<double>();
    cfg.refresh_classifier_nodes = j.at("refresh_classifier_nodes").get<bool>();
    MetaLearner m(cfg, j.at("sample_in_dim").get<std::size_t>(),
                  j.at("classifier_in_dim").get<std::size_t>(),
                  j.at("pool_size").get<std::size_t>(), 0);
    const auto& blocks = j.at("blocks");
    for (const auto& [name, p] : m.named_parameters()) {
        const auto& b = blocks.at(name);
        Matrix v(b.at("rows").get<std::size_t>(), b.at("cols").get<std::size_t>(),
                 b.at("data").get<std::vector<double>>());
        check_same_shape(p->value, v, "MetaLearner::from_json");
        p->value = std::move(v);
    }
    return m;
}

} // namespace feddes
