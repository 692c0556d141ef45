#include "feddes/meta_train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "feddes/errors.hpp"
#include "feddes/kernels.hpp"
#include "feddes/optim.hpp"

namespace feddes {

double masked_bce(const Matrix& logits, const Matrix& meta_labels,
                  const std::vector<std::size_t>& nodes) {
    if (nodes.empty()) throw ValidationError("masked_bce: empty node set");
    Matrix sub_logits(nodes.size(), logits.cols());
    Matrix sub_targets(nodes.size(), logits.cols());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        std::copy_n(logits.row_ptr(nodes[i]), logits.cols(), sub_logits.row_ptr(i));
        std::copy_n(meta_labels.row_ptr(nodes[i]), logits.cols(), sub_targets.row_ptr(i));
    }
    return bce_with_logits(sub_logits, sub_targets);
}

namespace {

Matrix gather_target_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(m.row_ptr(rows[i]), m.cols(), out.row_ptr(i));
    return out;
}

} // namespace

MetaTrainResult train_meta_learner(const HeteroGraph& graph, const Matrix& meta_labels,
                                   const std::vector<std::size_t>& train_nodes,
                                   const std::vector<std::size_t>& val_nodes,
                                   const MetaLearnerConfig& model_cfg,
                                   const MetaTrainConfig& train_cfg) {
    if (train_nodes.empty() || val_nodes.empty())
        throw TrainingError("train_meta_learner: empty train or validation node set");
    if (meta_labels.rows() != graph.num_samples())
        throw DimensionError("train_meta_learner: meta-label rows must match sample nodes");
    {
        std::set<std::size_t> t(train_nodes.begin(), train_nodes.end());
        for (std::size_t v : val_nodes)
            if (t.count(v))
                throw ValidationError("train_meta_learner: train/val node masks overlap at " +
                                      std::to_string(v));
    }

    MetaLearner learner(model_cfg, graph.sample_features.cols(),
                        graph.classifier_features.cols(), graph.num_classifiers(),
                        train_cfg.seed);
    Rng rng(Rng(train_cfg.seed).derive(0x6a7).next_u64());

    AdamState adam;
    adam.learning_rate = train_cfg.learning_rate;
    auto params = learner.parameters();

    MetaTrainResult result;
    std::vector<Matrix> best_state = learner.state();
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0, since_best = 0;

    std::vector<std::size_t> order = train_nodes;

    for (std::size_t epoch = 0; epoch < train_cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += train_cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + train_cfg.batch_size);
            std::vector<std::size_t> batch(order.begin() + start, order.begin() + stop);
            auto logits = learner.forward(graph, true, &rng);
            auto batch_logits = ad::gather_rows(logits, batch);
            auto loss = ad::bce_with_logits_mean(batch_logits, gather_target_rows(meta_labels, batch));
            if (!std::isfinite(loss->value(0, 0)))
                throw TrainingError("train_meta_learner: non-finite loss (lr=" +
                                    std::to_string(train_cfg.learning_rate) + ", epoch " +
                                    std::to_string(epoch) + ")");
            ad::backward(loss);
            adam_step(adam, params);
        }

        const Matrix eval_logits = learner.logits(graph);
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = masked_bce(eval_logits, meta_labels, train_nodes);
        stats.val_loss = masked_bce(eval_logits, meta_labels, val_nodes);
        result.history.push_back(stats);
        if (!std::isfinite(stats.val_loss))
            throw TrainingError("train_meta_learner: non-finite validation loss (lr=" +
                                std::to_string(train_cfg.learning_rate) + ", epoch " +
                                std::to_string(epoch) + ")");

        if (stats.val_loss < best_val) {
            best_val = stats.val_loss;
            best_state = learner.state();
            best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= train_cfg.patience) {
            break;
        }
    }

    learner.set_state(best_state);
    result.learner = std::move(learner);
    result.best_epoch = best_epoch;
    result.best_val_loss = best_val;
    return result;
}

std::string history_to_csv(const std::vector<EpochStats>& history) {
    std::string out = "epoch,train_loss,val_loss\n";
    char buf[96];
    for (const auto& h : history) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", h.epoch, h.train_loss, h.val_loss);
        out += buf;
    }
    return out;
}

} // namespace feddes
