#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "feddes/dataset.hpp"
#include "feddes/ensemble.hpp"
#include "feddes/gat.hpp"
#include "feddes/hetero_graph.hpp"
#include "feddes/meta_train.hpp"
#include "feddes/mlp.hpp"
#include "feddes/pool.hpp"
#include "feddes/report.hpp"

namespace feddes {

inline constexpr const char* kVersion = "0.3.1";

struct SyntheticSpec {
    std::size_t classes = 6;
    std::size_t dim = 20;
    std::size_t per_class = 300;
    double separation = 2.2;
};

struct CsvSpec {
    std::string path;
    std::string label_column = "label";
};

struct ExperimentConfig {
    bool use_csv = false;
    SyntheticSpec synthetic;
    CsvSpec csv;

    std::size_t clients = 8;
    ExDirConfig exdir; // seed field ignored; the run seed drives partitioning

    std::vector<MlpArchitecture> architectures;
    std::string architecture_assignment = "repeating"; // repeating | all_per_client
    BaseTrainConfig base_training;

    GraphParams graph;
    MetaLearnerConfig meta_model;
    MetaTrainConfig meta_training;

    // which local split received models are temperature-calibrated on
    std::string calibration_split = "val"; // val | train
    // which rows feed the classifier node feature block
    std::string classifier_feature_split = "train"; // train | train_val

    std::string metric = "auto"; // auto | accuracy | balanced_accuracy
    std::string output_dir = "runs/out";
    std::uint64_t seed = 1;
    std::size_t workers = 0; // 0 = library default
    bool dump_decisions = false;

    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const; // normalized (defaults applied)
    std::string hash() const;       // over normalized config including seed
    void validate() const;
};

// Per-decision evaluation data kept for analysis and end-to-end checks.
struct EvaluationDetail {
    std::vector<std::vector<EnsembleDecision>> decisions;      // [client][query]
    std::vector<std::vector<std::size_t>> test_labels;         // [client][query]
    std::vector<std::vector<std::size_t>> feddes_predictions;  // [client][query]
    std::vector<std::vector<std::size_t>> local_predictions;
    std::vector<std::vector<std::size_t>> global_predictions;
    std::size_t calibration_argmax_changes = 0; // over every (model, test sample)
};

struct ExperimentResult {
    FederationReport report;
    RunManifest manifest;
    EvaluationDetail detail;
};

// Full pipeline: partition -> base training + exchange + calibration ->
// graph construction -> meta-learner -> evaluation + reports. Stage outputs
// are cached under output_dir; a rerun resumes from the last completed stage.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Local = client's own models (uniform vote if several); Global = uniform
// vote over the full pool.
struct BaselinePredictions {
    std::vector<std::size_t> local;
    std::vector<std::size_t> global;
};
BaselinePredictions run_baselines(const ClassifierPool& pool, std::size_t client,
                                  const Matrix& x_test);

// Numeric CSV with a header row; label column selected by name (or numeric
// index when the name is not found). Missing or non-numeric values are
// rejected with row/column coordinates.
Dataset load_external_csv(const std::string& path, const std::string& label_column);

struct SweepResult {
    std::vector<ExperimentResult> runs;
    nlohmann::json aggregate;
};

// One run per seed in output_dir/seed_<s>/, plus aggregate.json and
// aggregate.csv with mean +- std across seeds.
SweepResult run_sweep(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds);

} // namespace feddes
