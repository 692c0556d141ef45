#include "feddes/experiment.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "feddes/calibration.hpp"
#include "feddes/decision_space.hpp"
#include "feddes/errors.hpp"
#include "feddes/kernels.hpp"
#include "feddes/util.hpp"

namespace feddes {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- config ----

namespace {

MlpArchitecture arch_from_json(const nlohmann::json& j) {
    MlpArchitecture a;
    a.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    if (j.contains("activation")) a.activation = j.at("activation").get<std::string>();
    return a;
}

nlohmann::json arch_to_json(const MlpArchitecture& a) {
    return {{"hidden", a.hidden}, {"activation", a.activation}};
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (!j.contains("dataset")) throw ConfigError("config: missing 'dataset'");
    const auto& ds = j.at("dataset");
    const std::string type = ds.value("type", "synthetic");
    if (type == "synthetic") {
        c.use_csv = false;
        maybe(ds, "classes", c.synthetic.classes);
        maybe(ds, "dim", c.synthetic.dim);
        maybe(ds, "per_class", c.synthetic.per_class);
        maybe(ds, "separation", c.synthetic.separation);
    } else if (type == "csv") {
        c.use_csv = true;
        c.csv.path = ds.at("path").get<std::string>();
        maybe(ds, "label_column", c.csv.label_column);
    } else {
        throw ConfigError("config: dataset.type must be 'synthetic' or 'csv'");
    }

    if (!j.contains("partition")) throw ConfigError("config: missing 'partition'");
    const auto& pt = j.at("partition");
    c.clients = pt.at("clients").get<std::size_t>();
    c.exdir.classes_per_client = pt.at("classes_per_client").get<std::size_t>();
    c.exdir.concentration = pt.at("alpha").get<double>();

    if (j.contains("architectures")) {
        c.architectures.clear();
        for (const auto& ja : j.at("architectures")) c.architectures.push_back(arch_from_json(ja));
    }
    maybe(j, "architecture_assignment", c.architecture_assignment);

    if (j.contains("base_training")) {
        const auto& b = j.at("base_training");
        maybe(b, "learning_rate", c.base_training.learning_rate);
        maybe(b, "max_epochs", c.base_training.max_epochs);
        maybe(b, "patience", c.base_training.patience);
        maybe(b, "batch_size", c.base_training.batch_size);
        maybe(b, "class_weight_threshold", c.base_training.class_weight_threshold);
    }
    if (j.contains("graph")) {
        const auto& g = j.at("graph");
        maybe(g, "k_ss", c.graph.k_ss);
        maybe(g, "k_cs", c.graph.k_cs);
        maybe(g, "epsilon", c.graph.epsilon);
    }
    if (j.contains("meta")) {
        const auto& m = j.at("meta");
        maybe(m, "hidden", c.meta_model.hidden);
        maybe(m, "heads", c.meta_model.heads);
        maybe(m, "layers", c.meta_model.layers);
        maybe(m, "dropout", c.meta_model.dropout);
        maybe(m, "leaky_slope", c.meta_model.leaky_slope);
        maybe(m, "refresh_classifier_nodes", c.meta_model.refresh_classifier_nodes);
        maybe(m, "learning_rate", c.meta_training.learning_rate);
        maybe(m, "max_epochs", c.meta_training.max_epochs);
        maybe(m, "patience", c.meta_training.patience);
        maybe(m, "batch_size", c.meta_training.batch_size);
    }
    if (j.contains("evaluation")) maybe(j.at("evaluation"), "metric", c.metric);
    maybe(j, "calibration_split", c.calibration_split);
    maybe(j, "classifier_feature_split", c.classifier_feature_split);
    maybe(j, "output_dir", c.output_dir);
    maybe(j, "seed", c.seed);
    maybe(j, "workers", c.workers);
    maybe(j, "dump_decisions", c.dump_decisions);

    if (c.architectures.empty())
        c.architectures = {MlpArchitecture{{32}, "relu"}, MlpArchitecture{{48}, "relu"},
                           MlpArchitecture{{24}, "relu"}, MlpArchitecture{{40}, "relu"}};
    c.validate();
    return c;
}

void ExperimentConfig::validate() const {
    if (clients == 0) throw ConfigError("config: partition.clients must be positive");
    if (exdir.concentration <= 0.0) throw ConfigError("config: partition.alpha must be positive");
    if (exdir.classes_per_client == 0)
        throw ConfigError("config: partition.classes_per_client must be positive");
    if (!use_csv) {
        if (synthetic.classes < 2) throw ConfigError("config: dataset.classes must be >= 2");
        if (synthetic.dim == 0 || synthetic.per_class == 0)
            throw ConfigError("config: dataset dims/per_class must be positive");
        if (exdir.classes_per_client > synthetic.classes)
            throw ConfigError("config: classes_per_client exceeds dataset classes");
        if (clients * exdir.classes_per_client < synthetic.classes)
            throw ConfigError("config: K * classes_per_client < total classes (ExDir infeasible)");
    } else if (csv.path.empty()) {
        throw ConfigError("config: dataset.path required for csv datasets");
    }
    if (architecture_assignment != "repeating" && architecture_assignment != "all_per_client")
        throw ConfigError("config: architecture_assignment must be 'repeating' or "
                          "'all_per_client'");
    if (architectures.empty()) throw ConfigError("config: architectures must be non-empty");
    for (const auto& a : architectures) {
        if (a.activation != "relu" && a.activation != "elu")
            throw ConfigError("config: architecture activation must be 'relu' or 'elu'");
        for (std::size_t w : a.hidden)
            if (w == 0) throw ConfigError("config: architecture hidden width must be positive");
    }
    if (base_training.learning_rate <= 0.0 || meta_training.learning_rate <= 0.0)
        throw ConfigError("config: learning rates must be positive");
    if (base_training.max_epochs == 0 || meta_training.max_epochs == 0)
        throw ConfigError("config: max_epochs must be positive");
    if (base_training.batch_size == 0 || meta_training.batch_size == 0)
        throw ConfigError("config: batch_size must be positive");
    if (meta_model.hidden == 0 || meta_model.heads == 0 ||
        meta_model.hidden % meta_model.heads != 0)
        throw ConfigError("config: meta.hidden must be a positive multiple of meta.heads");
    if (meta_model.dropout < 0.0 || meta_model.dropout >= 1.0)
        throw ConfigError("config: meta.dropout must be in [0, 1)");
    if (graph.k_ss == 0 || graph.k_cs == 0) throw ConfigError("config: graph k values positive");
    if (graph.epsilon <= 0.0) throw ConfigError("config: graph.epsilon must be positive");
    if (metric != "auto" && metric != "accuracy" && metric != "balanced_accuracy")
        throw ConfigError("config: evaluation.metric must be auto|accuracy|balanced_accuracy");
    if (calibration_split != "val" && calibration_split != "train")
        throw ConfigError("config: calibration_split must be 'val' or 'train'");
    if (classifier_feature_split != "train" && classifier_feature_split != "train_val")
        throw ConfigError("config: classifier_feature_split must be 'train' or 'train_val'");
    if (output_dir.empty()) throw ConfigError("config: output_dir must be non-empty");
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    if (use_csv)
        j["dataset"] = {{"type", "csv"}, {"path", csv.path}, {"label_column", csv.label_column}};
    else
        j["dataset"] = {{"type", "synthetic"},
                        {"classes", synthetic.classes},
                        {"dim", synthetic.dim},
                        {"per_class", synthetic.per_class},
                        {"separation", synthetic.separation}};
    j["partition"] = {{"clients", clients},
                      {"classes_per_client", exdir.classes_per_client},
                      {"alpha", exdir.concentration}};
    auto archs = nlohmann::json::array();
    for (const auto& a : architectures) archs.push_back(arch_to_json(a));
    j["architectures"] = std::move(archs);
    j["architecture_assignment"] = architecture_assignment;
    j["base_training"] = {{"learning_rate", base_training.learning_rate},
                          {"max_epochs", base_training.max_epochs},
                          {"patience", base_training.patience},
                          {"batch_size", base_training.batch_size},
                          {"class_weight_threshold", base_training.class_weight_threshold}};
    j["graph"] = {{"k_ss", graph.k_ss}, {"k_cs", graph.k_cs}, {"epsilon", graph.epsilon}};
    j["meta"] = {{"hidden", meta_model.hidden},
                 {"heads", meta_model.heads},
                 {"layers", meta_model.layers},
                 {"dropout", meta_model.dropout},
                 {"leaky_slope", meta_model.leaky_slope},
                 {"refresh_classifier_nodes", meta_model.refresh_classifier_nodes},
                 {"learning_rate", meta_training.learning_rate},
                 {"max_epochs", meta_training.max_epochs},
                 {"patience", meta_training.patience},
                 {"batch_size", meta_training.batch_size}};
    j["evaluation"] = {{"metric", metric}};
    j["calibration_split"] = calibration_split;
    j["classifier_feature_split"] = classifier_feature_split;
    j["output_dir"] = output_dir;
    j["seed"] = seed;
    j["workers"] = workers;
    j["dump_decisions"] = dump_decisions;
    return j;
}

std::string ExperimentConfig::hash() const {
    // output_dir/workers/dump flags do not affect results
    nlohmann::json j = to_json();
    j.erase("output_dir");
    j.erase("workers");
    j.erase("dump_decisions");
    return fnv1a64_hex(j.dump());
}

// ------------------------------------------------------------- internals ----

namespace {

nlohmann::json mat_to_json(const Matrix& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.raw()}};
}

Matrix mat_from_json(const nlohmann::json& j) {
    return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                  j.at("data").get<std::vector<double>>());
}

struct ClientView {
    Matrix x_train, x_val, x_test;
    std::vector<std::size_t> y_train, y_val, y_test;
};

ClientView make_view(const Dataset& data, const ClientSplit& split) {
    auto take = [&](const std::vector<std::size_t>& rows, Matrix& x,
                    std::vector<std::size_t>& y) {
        x = Matrix(rows.size(), data.dim());
        y.resize(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy_n(data.features.row_ptr(rows[i]), data.dim(), x.row_ptr(i));
            y[i] = data.labels[rows[i]];
        }
    };
    ClientView v;
    take(split.train, v.x_train, v.y_train);
    take(split.val, v.x_val, v.y_val);
    take(split.test, v.x_test, v.y_test);
    return v;
}

struct Stage1Data {
    std::vector<std::vector<MlpModel>> models; // [client][local]
    std::vector<std::vector<Matrix>> oof;      // [client][local] logits over train rows
    std::vector<ClassifierPool> pools;         // per client, calibrated
    ExchangeLog log;
};

struct ClientGraph {
    DecisionSpace ds_train;
    HeteroGraph graph; // train + val sample nodes
    Matrix z_all;      // (n_train + n_val) x M
    std::size_t n_train = 0;
    std::size_t n_val = 0;
};

struct Stage2Data {
    std::vector<ClientGraph> graphs;
};

struct Stage3Data {
    std::vector<MetaLearner> learners;
    std::vector<std::vector<EpochStats>> histories;
};

template <typename F>
void parallel_clients(std::size_t count, std::size_t workers, F&& body) {
    std::vector<std::exception_ptr> errors(count);
    const int threads =
        workers > 0 ? static_cast<int>(workers) : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (long long i = 0; i < static_cast<long long>(count); ++i) {
        try {
            body(static_cast<std::size_t>(i));
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::vector<MlpArchitecture> archs_for_client(const ExperimentConfig& cfg, std::size_t client) {
    if (cfg.architecture_assignment == "all_per_client") return cfg.architectures;
    return {cfg.architectures[client % cfg.architectures.size()]};
}

// ------------------------------------------------------------ stage 0/1 -----

struct Stage0Data {
    Dataset dataset;
    Partition partition;
};

Stage0Data compute_stage0(const ExperimentConfig& cfg) {
    Stage0Data s;
    if (cfg.use_csv)
        s.dataset = load_external_csv(cfg.csv.path, cfg.csv.label_column);
    else
        s.dataset = generate_gaussian_mixture(cfg.synthetic.classes, cfg.synthetic.dim,
                                              cfg.synthetic.per_class, cfg.synthetic.separation,
                                              cfg.seed);
    ExDirConfig ex = cfg.exdir;
    ex.seed = Rng(cfg.seed).derive(0xda7a).next_u64();
    s.partition = exdir_partition(s.dataset, ex, cfg.clients);
    return s;
}

Stage1Data compute_stage1(const ExperimentConfig& cfg, const Stage0Data& s0,
                          const std::vector<ClientView>& views) {
    Stage1Data s;
    s.models.resize(cfg.clients);
    s.oof.resize(cfg.clients);
    Rng root(cfg.seed);

    parallel_clients(cfg.clients, cfg.workers, [&](std::size_t k) {
        const auto archs = archs_for_client(cfg, k);
        const auto& v = views[k];
        for (std::size_t li = 0; li < archs.size(); ++li) {
            BaseTrainConfig bc = cfg.base_training;
            bc.seed = root.derive(0x100 + k).derive(li).next_u64();
            s.models[k].push_back(train_classifier(v.x_train, v.y_train, v.x_val, v.y_val,
                                                   archs[li], s0.dataset.class_count, bc));
            BaseTrainConfig oc = bc;
            oc.seed = root.derive(0x200 + k).derive(li).next_u64();
            s.oof[k].push_back(oof_predictions(v.x_train, v.y_train, v.x_val, v.y_val, archs[li],
                                               s0.dataset.class_count, oc));
        }
    });

    auto [pools, log] = exchange_models(s.models);
    s.pools = std::move(pools);
    s.log = std::move(log);

    // receiver-side temperature scaling on a local split (val by default)
    const bool calibrate_on_train = cfg.calibration_split == "train";
    parallel_clients(cfg.clients, cfg.workers, [&](std::size_t k) {
        const auto& v = views[k];
        const Matrix& cx = calibrate_on_train ? v.x_train : v.x_val;
        const auto& cy = calibrate_on_train ? v.y_train : v.y_val;
        for (auto& entry : s.pools[k].entries) {
            const Matrix logits = entry.model->logits(cx);
            auto res = calibrate_temperature(logits, cy, entry.model->known_classes());
            entry.temperature = res.temperature;
            entry.calibration_warning = res.degenerate_warning;
        }
    });
    return s;
}

// -------------------------------------------------------------- stage 2 -----

ClientGraph build_client_graph(const ExperimentConfig& cfg, const Stage1Data& s1,
                               std::size_t k, const ClientView& v) {
    ClientGraph g;
    g.ds_train = project_decision_space(s1.pools[k], k, v.x_train, v.y_train, s1.oof[k]);
    DecisionSpace ds_val = project_decision_space(s1.pools[k], k, v.x_val, v.y_val, {});

    HeteroGraph train_graph = build_graph(v.x_train, g.ds_train, v.y_train, cfg.graph);
    if (cfg.classifier_feature_split == "train_val") {
        DecisionSpace both;
        both.class_count = g.ds_train.class_count;
        both.pool_size = g.ds_train.pool_size;
        both.p = Matrix(v.y_train.size() + v.y_val.size(), g.ds_train.p.cols());
        both.z = Matrix(v.y_train.size() + v.y_val.size(), g.ds_train.pool_size);
        for (std::size_t i = 0; i < v.y_train.size(); ++i) {
            std::copy_n(g.ds_train.p.row_ptr(i), both.p.cols(), both.p.row_ptr(i));
            std::copy_n(g.ds_train.z.row_ptr(i), both.z.cols(), both.z.row_ptr(i));
        }
        for (std::size_t i = 0; i < v.y_val.size(); ++i) {
            std::copy_n(ds_val.p.row_ptr(i), both.p.cols(), both.p.row_ptr(v.y_train.size() + i));
            std::copy_n(ds_val.z.row_ptr(i), both.z.cols(), both.z.row_ptr(v.y_train.size() + i));
        }
        std::vector<std::size_t> y_both = v.y_train;
        y_both.insert(y_both.end(), v.y_val.begin(), v.y_val.end());
        train_graph.classifier_features = classifier_node_features(both, y_both);
    }
    std::vector<long> val_labels(v.y_val.begin(), v.y_val.end());
    g.graph = insert_queries(train_graph, g.ds_train, v.y_train, ds_val.p, v.x_val, val_labels,
                             cfg.graph);

    g.n_train = v.y_train.size();
    g.n_val = v.y_val.size();
    g.z_all = Matrix(g.n_train + g.n_val, g.ds_train.pool_size);
    for (std::size_t i = 0; i < g.n_train; ++i)
        std::copy_n(g.ds_train.z.row_ptr(i), g.ds_train.pool_size, g.z_all.row_ptr(i));
    for (std::size_t i = 0; i < g.n_val; ++i)
        std::copy_n(ds_val.z.row_ptr(i), g.ds_train.pool_size, g.z_all.row_ptr(g.n_train + i));
    return g;
}

Stage2Data compute_stage2(const ExperimentConfig& cfg, const Stage1Data& s1,
                          const std::vector<ClientView>& views) {
    Stage2Data s;
    s.graphs.resize(cfg.clients);
    parallel_clients(cfg.clients, cfg.workers, [&](std::size_t k) {
        s.graphs[k] = build_client_graph(cfg, s1, k, views[k]);
    });
    return s;
}

// -------------------------------------------------------------- stage 3 -----

Stage3Data compute_stage3(const ExperimentConfig& cfg, const Stage2Data& s2) {
    Stage3Data s;
    s.learners.resize(cfg.clients);
    s.histories.resize(cfg.clients);
    Rng root(cfg.seed);
    parallel_clients(cfg.clients, cfg.workers, [&](std::size_t k) {
        const auto& g = s2.graphs[k];
        std::vector<std::size_t> train_nodes(g.n_train), val_nodes(g.n_val);
        for (std::size_t i = 0; i < g.n_train; ++i) train_nodes[i] = i;
        for (std::size_t i = 0; i < g.n_val; ++i) val_nodes[i] = g.n_train + i;
        MetaTrainConfig tc = cfg.meta_training;
        tc.seed = root.derive(0x300 + k).next_u64();
        auto result =
            train_meta_learner(g.graph, g.z_all, train_nodes, val_nodes, cfg.meta_model, tc);
        s.learners[k] = std::move(result.learner);
        s.histories[k] = std::move(result.history);
    });
    return s;
}

// ---------------------------------------------------- stage serialization ---

void save_stage0(const std::string& path, const std::string& hash, const Stage0Data& s) {
    nlohmann::json j;
    j["config_hash"] = hash;
    j["dataset"] = dataset_to_json(s.dataset);
    j["partition"] = partition_to_json(s.partition);
    write_file(path, j.dump());
}

bool load_stage0(const std::string& path, const std::string& hash, Stage0Data& s) {
    if (!fs::exists(path)) return false;
    auto j = nlohmann::json::parse(read_file(path));
    if (j.value("config_hash", "") != hash) return false;
    s.dataset = dataset_from_json(j.at("dataset"));
    s.partition = partition_from_json(j.at("partition"));
    return true;
}

void save_stage1(const std::string& path, const std::string& hash, const Stage1Data& s) {
    nlohmann::json j;
    j["config_hash"] = hash;
    auto models = nlohmann::json::array();
    for (std::size_t k = 0; k < s.models.size(); ++k) {
        auto per_client = nlohmann::json::array();
        for (std::size_t li = 0; li < s.models[k].size(); ++li)
            per_client.push_back(model_to_json(s.models[k][li], k, li));
        models.push_back(std::move(per_client));
    }
    j["models"] = std::move(models);
    auto oof = nlohmann::json::array();
    for (const auto& per_client : s.oof) {
        auto arr = nlohmann::json::array();
        for (const auto& m : per_client) arr.push_back(mat_to_json(m));
        oof.push_back(std::move(arr));
    }
    j["oof"] = std::move(oof);
    auto temps = nlohmann::json::array();
    for (const auto& pool : s.pools) {
        auto t = nlohmann::json::array();
        for (const auto& e : pool.entries)
            t.push_back({{"temperature", e.temperature}, {"warning", e.calibration_warning}});
        temps.push_back(std::move(t));
    }
    j["calibration"] = std::move(temps);
    j["exchange_log"] = {{"sent_models", s.log.sent_models},
                         {"received_models", s.log.received_models},
                         {"sent_bytes", s.log.sent_bytes},
                         {"received_bytes", s.log.received_bytes},
                         {"total_transfers", s.log.total_transfers},
                         {"total_bytes", s.log.total_bytes}};
    write_file(path, j.dump());
}

bool load_stage1(const std::string& path, const std::string& hash, std::size_t clients,
                 Stage1Data& s) {
    if (!fs::exists(path)) return false;
    auto j = nlohmann::json::parse(read_file(path));
    if (j.value("config_hash", "") != hash) return false;
    s.models.assign(clients, {});
    s.oof.assign(clients, {});
    for (std::size_t k = 0; k < clients; ++k) {
        for (const auto& jm : j.at("models").at(k)) s.models[k].push_back(model_from_json(jm));
        for (const auto& jo : j.at("oof").at(k)) s.oof[k].push_back(mat_from_json(jo));
    }
    auto [pools, log] = exchange_models(s.models);
    s.pools = std::move(pools);
    s.log.sent_models = j.at("exchange_log").at("sent_models").get<std::vector<std::size_t>>();
    s.log.received_models =
        j.at("exchange_log").at("received_models").get<std::vector<std::size_t>>();
    s.log.sent_bytes = j.at("exchange_log").at("sent_bytes").get<std::vector<std::size_t>>();
    s.log.received_bytes =
        j.at("exchange_log").at("received_bytes").get<std::vector<std::size_t>>();
    s.log.total_transfers = j.at("exchange_log").at("total_transfers").get<std::size_t>();
    s.log.total_bytes = j.at("exchange_log").at("total_bytes").get<std::size_t>();
    (void)log;
    for (std::size_t k = 0; k < clients; ++k) {
        const auto& t = j.at("calibration").at(k);
        for (std::size_t m = 0; m < s.pools[k].size(); ++m) {
            s.pools[k][m].temperature = t.at(m).at("temperature").get<double>();
            s.pools[k][m].calibration_warning = t.at(m).at("warning").get<bool>();
        }
    }
    return true;
}

void save_stage2(const std::string& path, const std::string& hash, const Stage2Data& s) {
    nlohmann::json j;
    j["config_hash"] = hash;
    auto arr = nlohmann::json::array();
    for (const auto& g : s.graphs) {
        nlohmann::json jg;
        jg["graph"] = graph_to_json(g.graph);
        jg["ds_train"] = {{"p", mat_to_json(g.ds_train.p)},
                          {"z", mat_to_json(g.ds_train.z)},
                          {"class_count", g.ds_train.class_count},
                          {"pool_size", g.ds_train.pool_size}};
        jg["z_all"] = mat_to_json(g.z_all);
        jg["n_train"] = g.n_train;
        jg["n_val"] = g.n_val;
        arr.push_back(std::move(jg));
    }
    j["clients"] = std::move(arr);
    write_file(path, j.dump());
}

bool load_stage2(const std::string& path, const std::string& hash, Stage2Data& s) {
    if (!fs::exists(path)) return false;
    auto j = nlohmann::json::parse(read_file(path));
    if (j.value("config_hash", "") != hash) return false;
    s.graphs.clear();
    for (const auto& jg : j.at("clients")) {
        ClientGraph g;
        g.graph = graph_from_json(jg.at("graph"));
        g.ds_train.p = mat_from_json(jg.at("ds_train").at("p"));
        g.ds_train.z = mat_from_json(jg.at("ds_train").at("z"));
        g.ds_train.class_count = jg.at("ds_train").at("class_count").get<std::size_t>();
        g.ds_train.pool_size = jg.at("ds_train").at("pool_size").get<std::size_t>();
        g.z_all = mat_from_json(jg.at("z_all"));
        g.n_train = jg.at("n_train").get<std::size_t>();
        g.n_val = jg.at("n_val").get<std::size_t>();
        s.graphs.push_back(std::move(g));
    }
    return true;
}

void save_stage3(const std::string& path, const std::string& hash, const Stage3Data& s) {
    nlohmann::json j;
    j["config_hash"] = hash;
    auto arr = nlohmann::json::array();
    for (std::size_t k = 0; k < s.learners.size(); ++k) {
        arr.push_back(
            {{"learner", s.learners[k].to_json()}, {"history", history_to_csv(s.histories[k])}});
    }
    j["clients"] = std::move(arr);
    write_file(path, j.dump());
}

bool load_stage3(const std::string& path, const std::string& hash, Stage3Data& s) {
    if (!fs::exists(path)) return false;
    auto j = nlohmann::json::parse(read_file(path));
    if (j.value("config_hash", "") != hash) return false;
    s.learners.clear();
    s.histories.clear();
    for (const auto& jc : j.at("clients")) {
        s.learners.push_back(MetaLearner::from_json(jc.at("learner")));
        s.histories.emplace_back(); // history kept only as the emitted CSV
    }
    return true;
}

// ------------------------------------------------------------ evaluation ----

std::string decisions_csv(const EvaluationDetail& d, std::size_t pool_size) {
    std::string out = "client,query,true_label,predicted,local_predicted,global_predicted,"
                      "fallback,size,ess";
    for (std::size_t m = 0; m < pool_size; ++m) out += ",score_" + std::to_string(m);
    for (std::size_t m = 0; m < pool_size; ++m) out += ",selected_" + std::to_string(m);
    for (std::size_t m = 0; m < pool_size; ++m) out += ",weight_" + std::to_string(m);
    out += "\n";
    for (std::size_t k = 0; k < d.decisions.size(); ++k) {
        for (std::size_t q = 0; q < d.decisions[k].size(); ++q) {
            const auto& dec = d.decisions[k][q];
            out += std::to_string(k) + "," + std::to_string(q) + "," +
                   std::to_string(d.test_labels[k][q]) + "," + std::to_string(dec.predicted) +
                   "," + std::to_string(d.local_predictions[k][q]) + "," +
                   std::to_string(d.global_predictions[k][q]) + "," +
                   (dec.fallback ? "1" : "0") + "," + std::to_string(dec.size) + "," +
                   format_double(effective_ensemble_size(dec.weights));
            for (double s : dec.scores) out += "," + format_double(s);
            for (bool b : dec.selected) out += b ? ",1" : ",0";
            for (double w : dec.weights) out += "," + format_double(w);
            out += "\n";
        }
    }
    return out;
}

struct EvalOutput {
    FederationReport report;
    EvaluationDetail detail;
};

EvalOutput evaluate(const ExperimentConfig& cfg, const Stage0Data& s0, const Stage1Data& s1,
                    const Stage2Data& s2, const Stage3Data& s3,
                    const std::vector<ClientView>& views) {
    const std::size_t k_count = cfg.clients;
    const std::size_t m_count = s1.pools[0].size();
    const std::size_t c_count = s0.dataset.class_count;

    std::string metric_name = cfg.metric;
    if (metric_name == "auto")
        metric_name = imbalance_ratio(s0.dataset.labels, c_count) > 3.0 ? "balanced_accuracy"
                                                                        : "accuracy";
    auto metric_fn = [&](const std::vector<std::size_t>& pred,
                         const std::vector<std::size_t>& truth) {
        return metric_name == "accuracy" ? accuracy(pred, truth)
                                         : balanced_accuracy(pred, truth, c_count);
    };

    EvaluationDetail detail;
    detail.decisions.resize(k_count);
    detail.test_labels.resize(k_count);
    detail.feddes_predictions.resize(k_count);
    detail.local_predictions.resize(k_count);
    detail.global_predictions.resize(k_count);
    std::vector<std::size_t> argmax_changes(k_count, 0);

    parallel_clients(k_count, cfg.workers, [&](std::size_t k) {
        const auto& v = views[k];
        const auto& pool = s1.pools[k];
        const auto& g = s2.graphs[k];
        const std::size_t n_test = v.y_test.size();
        detail.test_labels[k] = v.y_test;

        // per-model hard predictions; temperature scaling must not move argmax
        std::vector<std::vector<std::size_t>> model_pred(m_count);
        for (std::size_t m = 0; m < m_count; ++m) {
            const Matrix logits = pool[m].model->logits(v.x_test);
            model_pred[m].resize(n_test);
            for (std::size_t q = 0; q < n_test; ++q) {
                model_pred[m][q] = argmax_row(logits, q);
                Matrix scaled(1, logits.cols());
                for (std::size_t c = 0; c < logits.cols(); ++c)
                    scaled(0, c) = logits(q, c) / pool[m].temperature;
                if (argmax_row(scaled, 0) != model_pred[m][q]) argmax_changes[k] += 1;
            }
        }

        const Matrix p_test = decision_embed(pool, v.x_test);
        HeteroGraph eval_graph =
            insert_queries(g.graph, g.ds_train, v.y_train, p_test, v.x_test, {}, cfg.graph);
        const Matrix logits = s3.learners[k].logits(eval_graph);
        const std::size_t base = g.n_train + g.n_val;

        std::vector<std::size_t> all_models(m_count);
        std::iota(all_models.begin(), all_models.end(), std::size_t{0});
        std::vector<std::size_t> own_models;
        for (std::size_t m = 0; m < m_count; ++m)
            if (pool[m].home_client == k) own_models.push_back(m);

        for (std::size_t q = 0; q < n_test; ++q) {
            std::vector<double> row(m_count);
            for (std::size_t m = 0; m < m_count; ++m) row[m] = logits(base + q, m);
            EnsembleDecision dec = decide(row);
            dec.query = q;
            std::vector<std::size_t> hard(m_count);
            for (std::size_t m = 0; m < m_count; ++m) hard[m] = model_pred[m][q];
            vote(dec, hard, c_count);
            detail.feddes_predictions[k].push_back(dec.predicted);
            detail.local_predictions[k].push_back(uniform_hard_vote(hard, own_models, c_count));
            detail.global_predictions[k].push_back(uniform_hard_vote(hard, all_models, c_count));
            detail.decisions[k].push_back(std::move(dec));
        }
    });
    for (std::size_t k = 0; k < k_count; ++k)
        detail.calibration_argmax_changes += argmax_changes[k];

    FederationReport report;
    report.metric_name = metric_name;

    auto summarize = [&](const std::string& name,
                         const std::vector<std::vector<std::size_t>>& preds) {
        MethodSummary s;
        s.name = name;
        for (std::size_t k = 0; k < k_count; ++k)
            s.per_client.push_back(metric_fn(preds[k], detail.test_labels[k]));
        mean_std(s.per_client, s.mean, s.stddev);
        return s;
    };
    MethodSummary feddes = summarize("feddes", detail.feddes_predictions);
    MethodSummary local = summarize("local", detail.local_predictions);
    MethodSummary global = summarize("global", detail.global_predictions);
    feddes.win_rate_vs_local = win_rate(feddes.per_client, local.per_client);
    global.win_rate_vs_local = win_rate(global.per_client, local.per_client);
    local.win_rate_vs_local = 0.0;
    report.methods = {std::move(feddes), std::move(local), std::move(global)};

    auto& es = report.ensemble;
    for (std::size_t k = 0; k < k_count; ++k) {
        double size_sum = 0.0, ess_sum = 0.0;
        for (const auto& dec : detail.decisions[k]) {
            size_sum += static_cast<double>(dec.size);
            ess_sum += effective_ensemble_size(dec.weights);
            es.fallback_decisions += dec.fallback ? 1 : 0;
            es.total_decisions += 1;
        }
        const double n = static_cast<double>(detail.decisions[k].size());
        es.client_mean_size.push_back(n > 0 ? size_sum / n : 0.0);
        es.client_mean_ess.push_back(n > 0 ? ess_sum / n : 0.0);
        es.mean_size += size_sum;
        es.mean_ess += ess_sum;
    }
    if (es.total_decisions > 0) {
        es.mean_size /= static_cast<double>(es.total_decisions);
        es.mean_ess /= static_cast<double>(es.total_decisions);
        es.ess_size_ratio = es.mean_size > 0.0 ? es.mean_ess / es.mean_size : 0.0;
    }

    // home-class frequency per classifier from its home client's training split
    Matrix home_freq(m_count, c_count);
    std::vector<std::size_t> classifier_home(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        const std::size_t home = s1.pools[0][m].home_client;
        classifier_home[m] = home;
        const auto& y = views[home].y_train;
        for (std::size_t v : y) home_freq(m, v) += 1.0;
        for (std::size_t c = 0; c < c_count; ++c)
            home_freq(m, c) /= static_cast<double>(y.size());
    }
    report.correlation = selection_frequency_correlation(detail.decisions, detail.test_labels,
                                                         home_freq, classifier_home, c_count);
    return {std::move(report), std::move(detail)};
}

} // namespace

// --------------------------------------------------------- run_experiment ---

BaselinePredictions run_baselines(const ClassifierPool& pool, std::size_t client,
                                  const Matrix& x_test) {
    const std::size_t m_count = pool.size();
    if (m_count == 0) throw ValidationError("run_baselines: empty pool");
    const std::size_t c_count = pool[0].model->out_dim();
    std::vector<std::vector<std::size_t>> model_pred(m_count);
    for (std::size_t m = 0; m < m_count; ++m) model_pred[m] = pool[m].model->predict(x_test);

    std::vector<std::size_t> all(m_count), own;
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t m = 0; m < m_count; ++m)
        if (pool[m].home_client == client) own.push_back(m);
    if (own.empty()) throw ValidationError("run_baselines: client owns no models");

    BaselinePredictions out;
    for (std::size_t q = 0; q < x_test.rows(); ++q) {
        std::vector<std::size_t> hard(m_count);
        for (std::size_t m = 0; m < m_count; ++m) hard[m] = model_pred[m][q];
        out.local.push_back(uniform_hard_vote(hard, own, c_count));
        out.global.push_back(uniform_hard_vote(hard, all, c_count));
    }
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::string hash = cfg.hash();
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (!fs::is_directory(cfg.output_dir))
        throw IoError("run_experiment: cannot create output dir " + cfg.output_dir);

    RunManifest manifest;
    manifest.config_hash = hash;
    manifest.seed = cfg.seed;
    manifest.version = kVersion;

    const std::string p0 = cfg.output_dir + "/stage0_dataset.json";
    const std::string p1 = cfg.output_dir + "/stage1_pool.json";
    const std::string p2 = cfg.output_dir + "/stage2_graphs.json";
    const std::string p3 = cfg.output_dir + "/stage3_meta.json";

    auto timed = [&](const std::string& name, bool cached, auto&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        manifest.stages.push_back(
            {name, std::chrono::duration<double>(t1 - t0).count(), cached});
    };

    try {
        Stage0Data s0;
        bool cached0 = load_stage0(p0, hash, s0);
        timed("dataset", cached0, [&] {
            if (!cached0) {
                s0 = compute_stage0(cfg);
                save_stage0(p0, hash, s0);
            }
        });
        manifest.add_file(p0);

        std::vector<ClientView> views;
        for (std::size_t k = 0; k < cfg.clients; ++k)
            views.push_back(make_view(s0.dataset, s0.partition.splits[k]));

        Stage1Data s1;
        bool cached1 = load_stage1(p1, hash, cfg.clients, s1);
        timed("pool", cached1, [&] {
            if (!cached1) {
                s1 = compute_stage1(cfg, s0, views);
                save_stage1(p1, hash, s1);
            }
        });
        manifest.add_file(p1);

        Stage2Data s2;
        bool cached2 = load_stage2(p2, hash, s2);
        timed("graphs", cached2, [&] {
            if (!cached2) {
                s2 = compute_stage2(cfg, s1, views);
                save_stage2(p2, hash, s2);
            }
        });
        manifest.add_file(p2);

        Stage3Data s3;
        bool cached3 = load_stage3(p3, hash, s3);
        timed("meta", cached3, [&] {
            if (!cached3) {
                s3 = compute_stage3(cfg, s2);
                save_stage3(p3, hash, s3);
                for (std::size_t k = 0; k < cfg.clients; ++k)
                    write_file(cfg.output_dir + "/history_client" + std::to_string(k) + ".csv",
                               history_to_csv(s3.histories[k]));
            }
        });
        manifest.add_file(p3);
        for (std::size_t k = 0; k < cfg.clients; ++k) {
            const std::string hist = cfg.output_dir + "/history_client" + std::to_string(k) + ".csv";
            if (fs::exists(hist)) manifest.add_file(hist);
        }

        ExperimentResult result;
        timed("evaluate", false, [&] {
            auto out = evaluate(cfg, s0, s1, s2, s3, views);
            result.report = std::move(out.report);
            result.detail = std::move(out.detail);
        });

        const std::string dump =
            cfg.dump_decisions ? decisions_csv(result.detail, s1.pools[0].size()) : "";
        emit_reports(result.report, manifest, cfg.output_dir, dump);
        result.manifest = manifest;
        return result;
    } catch (...) {
        // record partial completion before surfacing the failure
        nlohmann::json j = manifest_json(manifest);
        j["error"] = "stage failure; see stderr";
        try {
            write_file(cfg.output_dir + "/manifest.json", j.dump(2) + "\n");
        } catch (...) {
        }
        throw;
    }
}

// ------------------------------------------------------------------- csv ----

Dataset load_external_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw IoError("load_external_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("load_external_csv: empty file " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    if (header.empty()) throw IoError("load_external_csv: no columns in header");

    std::size_t label_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) label_idx = i;
    if (label_idx == header.size()) {
        try {
            label_idx = std::stoul(label_column);
        } catch (...) {
            throw ConfigError("load_external_csv: label column '" + label_column + "' not found");
        }
        if (label_idx >= header.size())
            throw ConfigError("load_external_csv: label column index out of range");
    }

    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        std::size_t col = 0;
        std::size_t label_val = 0;
        for (; std::getline(ss, cell, ','); ++col) {
            if (col >= header.size())
                throw IoError("load_external_csv: row " + std::to_string(line_no) +
                              " has more cells than the header");
            if (cell.empty())
                throw IoError("load_external_csv: missing value at row " +
                              std::to_string(line_no) + ", column " + header[col]);
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0' || !std::isfinite(v))
                throw IoError("load_external_csv: non-numeric or non-finite value '" + cell +
                              "' at row " + std::to_string(line_no) + ", column " + header[col]);
            if (col == label_idx) {
                if (v < 0.0 || v != std::floor(v))
                    throw IoError("load_external_csv: label must be a nonnegative integer at row " +
                                  std::to_string(line_no));
                label_val = static_cast<std::size_t>(v);
            } else {
                row.push_back(v);
            }
        }
        if (col != header.size())
            throw IoError("load_external_csv: row " + std::to_string(line_no) + " has " +
                          std::to_string(col) + " cells, expected " +
                          std::to_string(header.size()));
        rows.push_back(std::move(row));
        labels.push_back(label_val);
    }
    if (rows.empty()) throw IoError("load_external_csv: no data rows (empty dataset)");

    Dataset d;
    d.labels = std::move(labels);
    d.class_count = 1 + *std::max_element(d.labels.begin(), d.labels.end());
    d.features = Matrix(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].begin(), rows[i].end(), d.features.row_ptr(i));
    d.validate();
    return d;
}

// ----------------------------------------------------------------- sweep ----

SweepResult run_sweep(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw ConfigError("run_sweep: need at least one seed");
    SweepResult out;
    for (std::uint64_t s : seeds) {
        ExperimentConfig cfg = base;
        cfg.seed = s;
        cfg.output_dir = base.output_dir + "/seed_" + std::to_string(s);
        out.runs.push_back(run_experiment(cfg));
    }

    nlohmann::json agg;
    agg["seeds"] = seeds;
    agg["metric"] = out.runs.front().report.metric_name;
    std::string csv = "method,seed,mean,std,win_rate\n";
    nlohmann::json methods;
    for (const auto& m : out.runs.front().report.methods) {
        std::vector<double> means, wins;
        for (std::size_t r = 0; r < out.runs.size(); ++r) {
            const auto& ms = out.runs[r].report.method(m.name);
            means.push_back(ms.mean);
            wins.push_back(ms.win_rate_vs_local);
            csv += m.name + "," + std::to_string(seeds[r]) + "," + format_double(ms.mean) + "," +
                   format_double(ms.stddev) + "," + format_double(ms.win_rate_vs_local) + "\n";
        }
        double mm = 0.0, ms_ = 0.0, wm = 0.0, ws = 0.0;
        mean_std(means, mm, ms_);
        mean_std(wins, wm, ws);
        methods[m.name] = {{"mean_of_means", mm},
                           {"std_of_means", ms_},
                           {"mean_win_rate", wm},
                           {"per_seed_mean", means},
                           {"per_seed_win_rate", wins}};
        csv += m.name + ",all," + format_double(mm) + "," + format_double(ms_) + "," +
               format_double(wm) + "\n";
    }
    agg["methods"] = std::move(methods);

    std::vector<double> sizes, esses, rhos;
    for (const auto& r : out.runs) {
        sizes.push_back(r.report.ensemble.mean_size);
        esses.push_back(r.report.ensemble.mean_ess);
        rhos.push_back(r.report.correlation.overall.rho);
    }
    double sm = 0.0, ss = 0.0, em = 0.0, es = 0.0, rm = 0.0, rs = 0.0;
    mean_std(sizes, sm, ss);
    mean_std(esses, em, es);
    mean_std(rhos, rm, rs);
    agg["ensemble"] = {{"mean_size", sm},
                       {"mean_size_std", ss},
                       {"mean_ess", em},
                       {"mean_ess_std", es},
                       {"per_seed_mean_size", sizes},
                       {"per_seed_mean_ess", esses}};
    agg["correlation"] = {{"mean_rho", rm}, {"rho_std", rs}, {"per_seed_rho", rhos}};

    fs::create_directories(base.output_dir);
    write_file(base.output_dir + "/aggregate.json", agg.dump(2) + "\n");
    write_file(base.output_dir + "/aggregate.csv", csv);
    out.aggregate = std::move(agg);
    return out;
}

} // namespace feddes
