#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "feddes/ensemble.hpp"

namespace feddes {

struct MethodSummary {
    std::string name;
    std::vector<double> per_client; // metric value per client
    double mean = 0.0;
    double stddev = 0.0;
    double win_rate_vs_local = 0.0; // meaningless for the local baseline itself
};

struct EnsembleStats {
    std::vector<double> client_mean_size;
    std::vector<double> client_mean_ess;
    double mean_size = 0.0;
    double mean_ess = 0.0;
    double ess_size_ratio = 0.0; // mean ESS / mean size
    std::size_t fallback_decisions = 0;
    std::size_t total_decisions = 0;
};

struct FederationReport {
    std::string metric_name; // accuracy | balanced_accuracy
    std::vector<MethodSummary> methods;
    EnsembleStats ensemble;
    CorrelationResult correlation;
    // ESS definition recorded in output so numbers are comparable to themselves
    std::string ess_formula = "inverse_simpson";

    const MethodSummary& method(const std::string& name) const;
};

struct StageRecord {
    std::string name;
    double seconds = 0.0;
    bool cached = false;
};

struct RunManifest {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string version;
    std::vector<StageRecord> stages;
    std::vector<std::pair<std::string, std::string>> files; // path, fnv1a64 checksum

    void add_file(const std::string& path); // hashes current contents
};

void mean_std(const std::vector<double>& v, double& mean, double& stddev);

std::string report_clients_csv(const FederationReport& r);
std::string correlation_pairs_csv(const FederationReport& r);
std::string ess_table_csv(const FederationReport& r);
nlohmann::json summary_json(const FederationReport& r);
nlohmann::json manifest_json(const RunManifest& m);

// Writes the four report files plus manifest.json into outdir and records
// them in the manifest. decisions_csv is written only when non-empty.
void emit_reports(const FederationReport& r, RunManifest& manifest, const std::string& outdir,
                  const std::string& decisions_csv = "");

} // namespace feddes
