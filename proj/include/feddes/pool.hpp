#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <json.hpp>

#include "feddes/mlp.hpp"

namespace feddes {

// A received classifier plus the receiver-side calibration temperature.
// The same model may carry a different temperature on every client.
struct PoolEntry {
    std::shared_ptr<const MlpModel> model;
    std::size_t home_client = 0;
    std::size_t local_index = 0;
    double temperature = 1.0;
    bool calibration_warning = false;
};

// The full shared pool of M classifiers in canonical order
// (home client, then local index) — identical on every client.
struct ClassifierPool {
    std::vector<PoolEntry> entries;

    std::size_t size() const { return entries.size(); }
    const PoolEntry& operator[](std::size_t m) const { return entries[m]; }
    PoolEntry& operator[](std::size_t m) { return entries[m]; }
};

struct ExchangeLog {
    std::vector<std::size_t> sent_models;     // per client
    std::vector<std::size_t> received_models; // per client
    std::vector<std::size_t> sent_bytes;
    std::vector<std::size_t> received_bytes;
    std::size_t total_transfers = 0;
    std::size_t total_bytes = 0;

    void check_conserved() const; // sent totals match received totals
};

// Full-mesh one-shot exchange: every client ends up holding every model.
// Returns one pool per client (identical canonical order) and the transfer log.
std::pair<std::vector<ClassifierPool>, ExchangeLog>
exchange_models(const std::vector<std::vector<MlpModel>>& per_client_models);

// 5-fold stratified out-of-fold logits: row i comes from the fold model that
// never saw sample i. Early stopping uses the client's validation split.
Matrix oof_predictions(const Matrix& x_train, const std::vector<std::size_t>& y_train,
                       const Matrix& x_val, const std::vector<std::size_t>& y_val,
                       const MlpArchitecture& arch, std::size_t class_count,
                       const BaseTrainConfig& cfg, std::size_t folds = 5);

nlohmann::json pool_to_json(const ClassifierPool& pool);
ClassifierPool pool_from_json(const nlohmann::json& j);

} // namespace feddes
