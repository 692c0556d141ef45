#include "feddes/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "feddes/autodiff.hpp"
#include "feddes/errors.hpp"
#include "feddes/kernels.hpp"
#include "feddes/optim.hpp"
#include "feddes/rng.hpp"

namespace feddes {

std::string MlpArchitecture::describe() const {
    std::string s = "mlp(";
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(hidden[i]);
    }
    s += ";" + activation + ")";
    return s;
}

MlpModel::MlpModel(MlpArchitecture arch, std::size_t in_dim, std::size_t out_dim)
    : arch_(std::move(arch)), in_dim_(in_dim), out_dim_(out_dim) {
    std::size_t prev = in_dim_;
    for (std::size_t w : arch_.hidden) {
        weights_.emplace_back(prev, w);
        biases_.emplace_back(1, w);
        prev = w;
    }
    weights_.emplace_back(prev, out_dim_);
    biases_.emplace_back(1, out_dim_);
}

namespace {

inline void apply_activation(Matrix& m, const std::string& act) {
    if (act == "relu") {
        for (auto& v : m.raw()) v = v > 0.0 ? v : 0.0;
    } else if (act == "elu") {
        for (auto& v : m.raw()) v = v > 0.0 ? v : std::expm1(v);
    } else {
        throw ConfigError("MlpModel: unknown activation '" + act + "'");
    }
}

} // namespace

Matrix MlpModel::logits(const Matrix& x) const {
    if (x.cols() != in_dim_)
        throw DimensionError("MlpModel::logits: expected " + std::to_string(in_dim_) +
                             " features, got " + std::to_string(x.cols()));
    Matrix h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        Matrix z = matmul(h, weights_[l]);
        for (std::size_t i = 0; i < z.rows(); ++i)
            for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += biases_[l](0, j);
        if (l + 1 < weights_.size()) apply_activation(z, arch_.activation);
        h = std::move(z);
    }
    return h;
}

Matrix MlpModel::predict_proba(const Matrix& x) const { return softmax_rows(logits(x)); }

std::vector<std::size_t> MlpModel::predict(const Matrix& x) const {
    Matrix l = logits(x);
    std::vector<std::size_t> out(l.rows());
    for (std::size_t i = 0; i < l.rows(); ++i) out[i] = argmax_row(l, i);
    return out;
}

bool MlpModel::operator==(const MlpModel& o) const {
    return in_dim_ == o.in_dim_ && out_dim_ == o.out_dim_ && arch_.hidden == o.arch_.hidden &&
           arch_.activation == o.arch_.activation && weights_ == o.weights_ &&
           biases_ == o.biases_ && known_classes_ == o.known_classes_;
}

namespace {

Matrix glorot_init(std::size_t rows, std::size_t cols, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Matrix m(rows, cols);
    for (auto& v : m.raw()) v = rng.uniform(-bound, bound);
    return m;
}

struct GraphParams {
    std::vector<ad::NodePtr> weights;
    std::vector<ad::NodePtr> biases;

    std::vector<ad::NodePtr> all() const {
        std::vector<ad::NodePtr> v = weights;
        v.insert(v.end(), biases.begin(), biases.end());
        return v;
    }
};

ad::NodePtr forward_graph(const GraphParams& p, const Matrix& x, const std::string& act) {
    ad::NodePtr h = ad::constant(x);
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        h = ad::add_rowvec(ad::matmul(h, p.weights[l]), p.biases[l]);
        if (l + 1 < p.weights.size()) h = act == "elu" ? ad::elu(h) : ad::relu(h);
    }
    return h;
}

std::vector<double> class_weights_if_imbalanced(const std::vector<std::size_t>& y,
                                                std::size_t class_count, double threshold) {
    std::vector<std::size_t> counts(class_count, 0);
    for (std::size_t v : y) counts[v] += 1;
    std::size_t mx = 0, mn = y.size();
    for (std::size_t c : counts)
        if (c > 0) {
            mx = std::max(mx, c);
            mn = std::min(mn, c);
        }
    if (mn == 0 || static_cast<double>(mx) / static_cast<double>(mn) <= threshold) return {};
    // inverse-frequency, normalized to mean 1 over present classes
    std::vector<double> w(class_count, 0.0);
    std::size_t present = 0;
    double total = 0.0;
    for (std::size_t c = 0; c < class_count; ++c)
        if (counts[c] > 0) {
            w[c] = static_cast<double>(y.size()) / static_cast<double>(counts[c]);
            total += w[c];
            ++present;
        }
    for (auto& v : w) v *= static_cast<double>(present) / total;
    return w;
}

} // namespace

MlpModel train_classifier(const Matrix& x_train, const std::vector<std::size_t>& y_train,
                          const Matrix& x_val, const std::vector<std::size_t>& y_val,
                          const MlpArchitecture& arch, std::size_t class_count,
                          const BaseTrainConfig& cfg) {
    if (x_train.rows() == 0 || x_val.rows() == 0)
        throw TrainingError("train_classifier: empty train or validation set");
    std::set<std::size_t> distinct(y_train.begin(), y_train.end());
    if (distinct.size() < 2)
        throw TrainingError("train_classifier: training set contains a single class (" +
                            std::to_string(*distinct.begin()) + "); model would be degenerate");

    Rng rng(cfg.seed);
    GraphParams params;
    std::size_t prev = x_train.cols();
    for (std::size_t w : arch.hidden) {
        params.weights.push_back(ad::leaf(glorot_init(prev, w, rng)));
        params.biases.push_back(ad::leaf(Matrix(1, w)));
        prev = w;
    }
    params.weights.push_back(ad::leaf(glorot_init(prev, class_count, rng)));
    params.biases.push_back(ad::leaf(Matrix(1, class_count)));

    const auto weights = class_weights_if_imbalanced(y_train, class_count, cfg.class_weight_threshold);

    AdamState adam;
    adam.learning_rate = cfg.learning_rate;

    auto snapshot = [&]() {
        MlpModel m(arch, x_train.cols(), class_count);
        for (std::size_t l = 0; l < params.weights.size(); ++l) {
            m.weights()[l] = params.weights[l]->value;
            m.biases()[l] = params.biases[l]->value;
        }
        m.set_known_classes({distinct.begin(), distinct.end()});
        return m;
    };

    // accuracy is the early-stopping metric; NLL breaks plateaus where the
    // accuracy is flat for longer than the patience window
    auto val_metrics = [&](const MlpModel& m, double& acc, double& nll) {
        const Matrix logits = m.logits(x_val);
        std::vector<std::size_t> pred(logits.rows());
        nll = 0.0;
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            pred[i] = argmax_row(logits, i);
            nll += logsumexp_row(logits, i) - logits(i, y_val[i]);
        }
        nll /= static_cast<double>(logits.rows());
        acc = accuracy(pred, y_val);
    };

    MlpModel best = snapshot();
    double best_acc = 0.0, best_nll = 0.0;
    val_metrics(best, best_acc, best_nll);
    std::size_t since_best = 0;

    const std::size_t n = x_train.rows();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            Matrix xb(stop - start, x_train.cols());
            std::vector<std::size_t> yb(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                std::copy_n(x_train.row_ptr(order[i]), x_train.cols(), xb.row_ptr(i - start));
                yb[i - start] = y_train[order[i]];
            }
            auto logits = forward_graph(params, xb, arch.activation);
            auto loss = ad::softmax_xent_mean(logits, yb, weights);
            if (!std::isfinite(loss->value(0, 0)))
                throw TrainingError("train_classifier: non-finite loss at epoch " +
                                    std::to_string(epoch));
            ad::backward(loss);
            adam_step(adam, params.all());
        }
        MlpModel current = snapshot();
        double acc = 0.0, nll = 0.0;
        val_metrics(current, acc, nll);
        if (acc > best_acc || (acc == best_acc && nll < best_nll - 1e-12)) {
            best_acc = acc;
            best_nll = nll;
            best = std::move(current);
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    return best;
}

double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth) {
    if (predicted.size() != truth.size() || truth.empty())
        throw ValidationError("accuracy: size mismatch or empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double balanced_accuracy(const std::vector<std::size_t>& predicted,
                         const std::vector<std::size_t>& truth, std::size_t class_count) {
    if (predicted.size() != truth.size() || truth.empty())
        throw ValidationError("balanced_accuracy: size mismatch or empty input");
    std::vector<std::size_t> total(class_count, 0), hit(class_count, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        total.at(truth[i]) += 1;
        if (predicted[i] == truth[i]) hit[truth[i]] += 1;
    }
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < class_count; ++c)
        if (total[c] > 0) {
            sum += static_cast<double>(hit[c]) / static_cast<double>(total[c]);
            ++present;
        }
    return present ? sum / static_cast<double>(present) : 0.0;
}

nlohmann::json model_to_json(const MlpModel& m, std::size_t home_client, std::size_t local_index) {
    nlohmann::json j;
    j["version"] = 1;
    j["home_client"] = home_client;
    j["local_index"] = local_index;
    j["in_dim"] = m.in_dim();
    j["out_dim"] = m.out_dim();
    j["hidden"] = m.arch().hidden;
    j["activation"] = m.arch().activation;
    j["known_classes"] = m.known_classes();
    auto ws = nlohmann::json::array();
    for (const auto& w : m.weights()) ws.push_back(w.raw());
    auto bs = nlohmann::json::array();
    for (const auto& b : m.biases()) bs.push_back(b.raw());
    j["weights"] = std::move(ws);
    j["biases"] = std::move(bs);
    return j;
}

MlpModel model_from_json(const nlohmann::json& j, std::size_t* home_client,
                         std::size_t* local_index) {
    if (j.at("version").get<int>() != 1) throw IoError("model_from_json: unsupported version");
    MlpArchitecture arch;
    arch.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    arch.activation = j.at("activation").get<std::string>();
    MlpModel m(arch, j.at("in_dim").get<std::size_t>(), j.at("out_dim").get<std::size_t>());
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    if (ws.size() != m.weights().size() || bs.size() != m.biases().size())
        throw IoError("model_from_json: layer count mismatch");
    for (std::size_t l = 0; l < ws.size(); ++l) {
        auto w = ws.at(l).get<std::vector<double>>();
        auto b = bs.at(l).get<std::vector<double>>();
        if (w.size() != m.weights()[l].size() || b.size() != m.biases()[l].size())
            throw IoError("model_from_json: parameter block size mismatch at layer " +
                          std::to_string(l));
        m.weights()[l].raw() = std::move(w);
        m.biases()[l].raw() = std::move(b);
    }
    m.set_known_classes(j.at("known_classes").get<std::vector<std::size_t>>());
    if (home_client) *home_client = j.at("home_client").get<std::size_t>();
    if (local_index) *local_index = j.at("local_index").get<std::size_t>();
    return m;
}

} // namespace feddes
