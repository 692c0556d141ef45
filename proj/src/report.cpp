#include "feddes/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "feddes/errors.hpp"
#include "feddes/util.hpp"

namespace feddes {

std::string fnv1a64_hex(std::string_view bytes) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // prefer the shortest representation that round-trips
    for (int prec = 1; prec <= 16; ++prec) {
        char cand[40];
        std::snprintf(cand, sizeof(cand), "%.*g", prec, v);
        double parsed = 0.0;
        std::sscanf(cand, "%lf", &parsed);
        if (parsed == v) return cand;
    }
    return buf;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_file: cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("write_file: cannot open " + path);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write_file: short write to " + path);
}

const MethodSummary& FederationReport::method(const std::string& name) const {
    for (const auto& m : methods)
        if (m.name == name) return m;
    throw ValidationError("FederationReport: no method named " + name);
}

void RunManifest::add_file(const std::string& path) {
    files.emplace_back(path, fnv1a64_hex(read_file(path)));
}

void mean_std(const std::vector<double>& v, double& mean, double& stddev) {
    if (v.empty()) throw ValidationError("mean_std: empty series");
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    stddev = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
}

std::string report_clients_csv(const FederationReport& r) {
    std::string out = "client,method," + r.metric_name + "\n";
    if (r.methods.empty()) return out;
    const std::size_t clients = r.methods.front().per_client.size();
    for (std::size_t k = 0; k < clients; ++k)
        for (const auto& m : r.methods)
            out += std::to_string(k) + "," + m.name + "," + format_double(m.per_client.at(k)) + "\n";
    return out;
}

std::string correlation_pairs_csv(const FederationReport& r) {
    std::string out =
        "classifier,home_client,class,home_class_frequency,mean_score,home_mean_score,"
        "n_total,n_home\n";
    for (const auto& p : r.correlation.pairs) {
        out += std::to_string(p.classifier) + "," + std::to_string(p.home_client) + "," +
               std::to_string(p.cls) + "," + format_double(p.home_class_frequency) + "," +
               format_double(p.mean_score) + "," + format_double(p.home_mean_score) + "," +
               std::to_string(p.n_total) + "," + std::to_string(p.n_home) + "\n";
    }
    return out;
}

std::string ess_table_csv(const FederationReport& r) {
    std::string out = "client,mean_ensemble_size,mean_ess,ess_size_ratio\n";
    for (std::size_t k = 0; k < r.ensemble.client_mean_size.size(); ++k) {
        const double size = r.ensemble.client_mean_size[k];
        const double ess = r.ensemble.client_mean_ess[k];
        out += std::to_string(k) + "," + format_double(size) + "," + format_double(ess) + "," +
               format_double(size > 0.0 ? ess / size : 0.0) + "\n";
    }
    out += "federation," + format_double(r.ensemble.mean_size) + "," +
           format_double(r.ensemble.mean_ess) + "," + format_double(r.ensemble.ess_size_ratio) +
           "\n";
    return out;
}

nlohmann::json summary_json(const FederationReport& r) {
    nlohmann::json j;
    j["metric"] = r.metric_name;
    nlohmann::json methods;
    for (const auto& m : r.methods) {
        nlohmann::json jm;
        jm["mean"] = m.mean;
        jm["std"] = m.stddev;
        jm["win_rate"] = m.win_rate_vs_local;
        jm["per_client"] = m.per_client;
        methods[m.name] = std::move(jm);
    }
    j["methods"] = std::move(methods);
    j["ensemble"] = {{"mean_size", r.ensemble.mean_size},
                     {"mean_ess", r.ensemble.mean_ess},
                     {"ess_size_ratio", r.ensemble.ess_size_ratio},
                     {"fallback_decisions", r.ensemble.fallback_decisions},
                     {"total_decisions", r.ensemble.total_decisions},
                     {"ess_formula", r.ess_formula}};
    j["correlation"] = {{"spearman_rho", r.correlation.overall.rho},
                        {"degenerate", r.correlation.overall.degenerate},
                        {"pairs", r.correlation.pairs.size()}};
    return j;
}

nlohmann::json manifest_json(const RunManifest& m) {
    nlohmann::json j;
    j["config_hash"] = m.config_hash;
    j["seed"] = m.seed;
    j["version"] = m.version;
    auto stages = nlohmann::json::array();
    for (const auto& s : m.stages)
        stages.push_back({{"name", s.name}, {"seconds", s.seconds}, {"cached", s.cached}});
    j["stages"] = std::move(stages);
    auto files = nlohmann::json::array();
    for (const auto& [path, checksum] : m.files)
        files.push_back({{"path", path}, {"fnv1a64", checksum}});
    j["files"] = std::move(files);
    return j;
}

void emit_reports(const FederationReport& r, RunManifest& manifest, const std::string& outdir,
                  const std::string& decisions_csv) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(outdir, ec);
    if (ec || !fs::is_directory(outdir))
        throw IoError("emit_reports: cannot create output directory " + outdir);
    {
        // fail before any computation artifacts are written if not writable
        const std::string probe = outdir + "/.write_probe";
        write_file(probe, "ok");
        fs::remove(probe, ec);
    }

    const std::string clients_path = outdir + "/report_clients.csv";
    write_file(clients_path, report_clients_csv(r));
    manifest.add_file(clients_path);

    const std::string corr_path = outdir + "/correlation_pairs.csv";
    write_file(corr_path, correlation_pairs_csv(r));
    manifest.add_file(corr_path);

    const std::string ess_path = outdir + "/ess_table.csv";
    write_file(ess_path, ess_table_csv(r));
    manifest.add_file(ess_path);

    const std::string summary_path = outdir + "/summary.json";
    write_file(summary_path, summary_json(r).dump(2) + "\n");
    manifest.add_file(summary_path);

    if (!decisions_csv.empty()) {
        const std::string dec_path = outdir + "/decisions.csv";
        write_file(dec_path, decisions_csv);
        manifest.add_file(dec_path);
    }

    write_file(outdir + "/manifest.json", manifest_json(manifest).dump(2) + "\n");
}

} // namespace feddes
