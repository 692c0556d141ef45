#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "feddes/matrix.hpp"

namespace feddes {

struct MlpArchitecture {
    std::vector<std::size_t> hidden; // layer widths, input/output added around them
    std::string activation = "relu"; // relu | elu

    std::string describe() const;
};

// Probabilistic multi-class classifier; the unit exchanged between peers.
class MlpModel {
public:
    MlpModel() = default;
    MlpModel(MlpArchitecture arch, std::size_t in_dim, std::size_t out_dim);

    Matrix logits(const Matrix& x) const;        // N x C raw scores
    Matrix predict_proba(const Matrix& x) const; // softmax rows, strictly positive
    std::vector<std::size_t> predict(const Matrix& x) const;

    std::size_t in_dim() const { return in_dim_; }
    std::size_t out_dim() const { return out_dim_; }
    const MlpArchitecture& arch() const { return arch_; }

    std::vector<Matrix>& weights() { return weights_; }
    std::vector<Matrix>& biases() { return biases_; }
    const std::vector<Matrix>& weights() const { return weights_; }
    const std::vector<Matrix>& biases() const { return biases_; }

    // classes present in the training data this model was fit on
    const std::vector<std::size_t>& known_classes() const { return known_classes_; }
    void set_known_classes(std::vector<std::size_t> v) { known_classes_ = std::move(v); }

    bool operator==(const MlpModel& o) const;

private:
    MlpArchitecture arch_;
    std::size_t in_dim_ = 0;
    std::size_t out_dim_ = 0;
    std::vector<Matrix> weights_;
    std::vector<Matrix> biases_;
    std::vector<std::size_t> known_classes_;
};

struct BaseTrainConfig {
    double learning_rate = 5e-4;
    std::size_t max_epochs = 300;
    std::size_t patience = 20;
    std::size_t batch_size = 32;
    double class_weight_threshold = 3.0; // class-weighted CE above this imbalance
    std::uint64_t seed = 0;
};

// Adam + early stopping on validation accuracy; returns the snapshot from the
// best epoch, not the last. Throws TrainingError on a single-class train set.
MlpModel train_classifier(const Matrix& x_train, const std::vector<std::size_t>& y_train,
                          const Matrix& x_val, const std::vector<std::size_t>& y_val,
                          const MlpArchitecture& arch, std::size_t class_count,
                          const BaseTrainConfig& cfg);

double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth);
double balanced_accuracy(const std::vector<std::size_t>& predicted,
                         const std::vector<std::size_t>& truth, std::size_t class_count);

nlohmann::json model_to_json(const MlpModel& m, std::size_t home_client, std::size_t local_index);
MlpModel model_from_json(const nlohmann::json& j, std::size_t* home_client = nullptr,
                         std::size_t* local_index = nullptr);

} // namespace feddes
