#include "feddes/pool.hpp"

#include <algorithm>
#include <set>

#include "feddes/errors.hpp"
#include "feddes/rng.hpp"

namespace feddes {

void ExchangeLog::check_conserved() const {
    std::size_t sent = 0, received = 0, sb = 0, rb = 0;
    for (std::size_t v : sent_models) sent += v;
    for (std::size_t v : received_models) received += v;
    for (std::size_t v : sent_bytes) sb += v;
    for (std::size_t v : received_bytes) rb += v;
    if (sent != received || sb != rb)
        throw ValidationError("ExchangeLog: sent/received totals diverge");
}

std::pair<std::vector<ClassifierPool>, ExchangeLog>
exchange_models(const std::vector<std::vector<MlpModel>>& per_client_models) {
    const std::size_t k = per_client_models.size();
    if (k == 0) throw ValidationError("exchange_models: no clients");

    // canonical pool shared by reference; temperatures are set per receiver later
    ClassifierPool canonical;
    std::vector<std::size_t> model_bytes_per_client(k, 0);
    for (std::size_t home = 0; home < k; ++home) {
        for (std::size_t li = 0; li < per_client_models[home].size(); ++li) {
            PoolEntry e;
            e.model = std::make_shared<MlpModel>(per_client_models[home][li]);
            e.home_client = home;
            e.local_index = li;
            canonical.entries.push_back(std::move(e));
            model_bytes_per_client[home] +=
                model_to_json(per_client_models[home][li], home, li).dump().size();
        }
    }
    if (canonical.size() == 0) throw ValidationError("exchange_models: empty pool");

    ExchangeLog log;
    log.sent_models.assign(k, 0);
    log.received_models.assign(k, 0);
    log.sent_bytes.assign(k, 0);
    log.received_bytes.assign(k, 0);
    for (std::size_t from = 0; from < k; ++from) {
        for (std::size_t to = 0; to < k; ++to) {
            if (from == to) continue;
            log.total_transfers += 1;
            log.sent_models[from] += per_client_models[from].size();
            log.received_models[to] += per_client_models[from].size();
            log.sent_bytes[from] += model_bytes_per_client[from];
            log.received_bytes[to] += model_bytes_per_client[from];
            log.total_bytes += model_bytes_per_client[from];
        }
    }
    log.check_conserved();

    std::vector<ClassifierPool> pools(k, canonical);
    return {std::move(pools), std::move(log)};
}

namespace {

// Stratified fold ids: within each class, shuffled then dealt round-robin.
std::vector<std::size_t> stratified_fold_ids(const std::vector<std::size_t>& y,
                                             std::size_t folds, Rng& rng) {
    std::size_t max_label = 0;
    for (std::size_t v : y) max_label = std::max(max_label, v);
    std::vector<std::vector<std::size_t>> by_class(max_label + 1);
    for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);

    std::vector<std::size_t> fold(y.size(), 0);
    std::size_t offset = 0;
    for (auto& rows : by_class) {
        rng.shuffle(rows);
        for (std::size_t i = 0; i < rows.size(); ++i) fold[rows[i]] = (offset + i) % folds;
        offset += rows.size();
    }
    return fold;
}

} // namespace

Matrix oof_predictions(const Matrix& x_train, const std::vector<std::size_t>& y_train,
                       const Matrix& x_val, const std::vector<std::size_t>& y_val,
                       const MlpArchitecture& arch, std::size_t class_count,
                       const BaseTrainConfig& cfg, std::size_t folds) {
    const std::size_t n = x_train.rows();
    if (n < folds)
        throw TrainingError("oof_predictions: fewer samples than folds");
    Rng rng(cfg.seed ^ 0x0f0f0f0fULL);
    auto fold = stratified_fold_ids(y_train, folds, rng);

    // feasibility: every fold's training portion needs >= 2 classes
    for (std::size_t f = 0; f < folds; ++f) {
        std::set<std::size_t> classes;
        for (std::size_t i = 0; i < n; ++i)
            if (fold[i] != f) classes.insert(y_train[i]);
        if (classes.size() < 2) {
            const std::size_t offending = classes.empty() ? 0 : *classes.begin();
            throw TrainingError("oof_predictions: fold " + std::to_string(f) +
                                " training portion holds only class " +
                                std::to_string(offending) + "; cannot fit a fold model");
        }
    }

    Matrix out(n, class_count);
    for (std::size_t f = 0; f < folds; ++f) {
        std::vector<std::size_t> train_rows, held_rows;
        for (std::size_t i = 0; i < n; ++i) (fold[i] == f ? held_rows : train_rows).push_back(i);
        if (held_rows.empty()) continue;

        Matrix xf(train_rows.size(), x_train.cols());
        std::vector<std::size_t> yf(train_rows.size());
        for (std::size_t i = 0; i < train_rows.size(); ++i) {
            std::copy_n(x_train.row_ptr(train_rows[i]), x_train.cols(), xf.row_ptr(i));
            yf[i] = y_train[train_rows[i]];
        }
        BaseTrainConfig fold_cfg = cfg;
        fold_cfg.seed = Rng(cfg.seed).derive(0xf01d + f).next_u64();
        MlpModel fm = train_classifier(xf, yf, x_val, y_val, arch, class_count, fold_cfg);

        Matrix xh(held_rows.size(), x_train.cols());
        for (std::size_t i = 0; i < held_rows.size(); ++i)
            std::copy_n(x_train.row_ptr(held_rows[i]), x_train.cols(), xh.row_ptr(i));
        Matrix lh = fm.logits(xh);
        for (std::size_t i = 0; i < held_rows.size(); ++i)
            std::copy_n(lh.row_ptr(i), class_count, out.row_ptr(held_rows[i]));
    }
    return out;
}

nlohmann::json pool_to_json(const ClassifierPool& pool) {
    nlohmann::json j;
    auto entries = nlohmann::json::array();
    for (const auto& e : pool.entries) {
        nlohmann::json je;
        je["model"] = model_to_json(*e.model, e.home_client, e.local_index);
        je["temperature"] = e.temperature;
        je["calibration_warning"] = e.calibration_warning;
        entries.push_back(std::move(je));
    }
    j["entries"] = std::move(entries);
    return j;
}

ClassifierPool pool_from_json(const nlohmann::json& j) {
    ClassifierPool pool;
    for (const auto& je : j.at("entries")) {
        PoolEntry e;
        std::size_t home = 0, li = 0;
        e.model = std::make_shared<MlpModel>(model_from_json(je.at("model"), &home, &li));
        e.home_client = home;
        e.local_index = li;
        e.temperature = je.at("temperature").get<double>();
        e.calibration_warning = je.at("calibration_warning").get<bool>();
        pool.entries.push_back(std::move(e));
    }
    return pool;
}

} // namespace feddes
