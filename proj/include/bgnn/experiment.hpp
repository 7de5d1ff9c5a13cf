#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "bgnn/config.hpp"
#include "bgnn/dataset.hpp"
#include "bgnn/error.hpp"
#include "bgnn/layers.hpp"
#include "bgnn/train.hpp"
#include "bgnn/verify.hpp"

namespace bgnn {

namespace detail {

inline std::string fixed6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write " + path.string());
    out << text;
}

/// First line of every CSV output; --check parses it back.
inline std::string hash_line(const std::string& hash) {
    return "# config_hash=" + hash + "\n";
}

inline const char* variant_name(bool bregman) {
    return bregman ? "bregman" : "standard";
}

} // namespace detail

inline constexpr const char* kRunsCsvHeader =
    "dataset,model,variant,depth,activation,seed,test_acc,best_val_acc,epochs\n";

/// One runs.csv row per completed training run.
inline std::string runs_csv_row(const std::string& dataset, const ModelConfig& cfg,
                                const SeedRun& run) {
    std::string row;
    row += dataset;
    row += ',';
    row += aggregator_name(cfg.base);
    row += ',';
    row += detail::variant_name(cfg.bregman_enhanced);
    row += ',';
    row += std::to_string(cfg.depth);
    row += ',';
    row += cfg.activation;
    row += ',';
    row += std::to_string(run.seed);
    row += ',';
    row += detail::fixed6(run.metrics.test_acc);
    row += ',';
    row += detail::fixed6(run.metrics.best_val);
    row += ',';
    row += std::to_string(run.metrics.epochs);
    row += '\n';
    return row;
}

struct TrainOutcome {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t n_seeds = 0;
    std::string config_hash;
};

/// Trains over all configured seeds and writes <out>/runs.csv,
/// <out>/summary.json, and <out>/timings.log. The CSV and JSON outputs are
/// deterministic functions of the config; wall-clock numbers go only to the
/// timings log.
inline TrainOutcome cmd_train(const RunSpec& spec) {
    spec.validate();
    const GraphDataset ds = spec.load();
    const std::string hash = spec.config_hash();

    MultiSeedResult result = multi_seed(
        [&](std::uint64_t seed) {
            Rng rng(seed);
            return build_model(spec.model, ds, rng);
        },
        ds, spec.train);

    namespace fs = std::filesystem;
    fs::create_directories(spec.output);

    std::string csv = detail::hash_line(hash);
    csv += kRunsCsvHeader;
    for (const auto& run : result.runs)
        csv += runs_csv_row(ds.name, spec.model, run);
    detail::write_text(fs::path(spec.output) / "runs.csv", csv);

    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& run : result.runs)
        per_seed.push_back({{"seed", run.seed},
                            {"test_acc", run.metrics.test_acc},
                            {"best_val_acc", run.metrics.best_val},
                            {"best_epoch", run.metrics.best_epoch},
                            {"epochs", run.metrics.epochs},
                            {"clamped_per_layer", run.metrics.clamped_per_layer}});
    nlohmann::json summary{{"config_hash", hash},
                           {"dataset", ds.name},
                           {"model", aggregator_name(spec.model.base)},
                           {"variant", detail::variant_name(spec.model.bregman_enhanced)},
                           {"depth", spec.model.depth},
                           {"activation", spec.model.activation},
                           {"n_seeds", result.runs.size()},
                           {"mean_test_acc", result.mean},
                           {"std_test_acc", result.stddev},
                           {"per_seed", per_seed}};
    detail::write_text(fs::path(spec.output) / "summary.json", summary.dump(2) + "\n");

    std::string timings;
    double total = 0.0;
    for (const auto& run : result.runs) {
        timings += "seed " + std::to_string(run.seed) + ": " +
                   detail::fixed6(run.metrics.seconds) + " s\n";
        total += run.metrics.seconds;
    }
    timings += "total: " + detail::fixed6(total) + " s\n";
    detail::write_text(fs::path(spec.output) / "timings.log", timings);

    return {result.mean, result.stddev, result.runs.size(), hash};
}

struct SweepRow {
    int depth = 0;
    bool bregman = false;
    double mean = 0.0;
    double stddev = 0.0;
    double mean_smoothness = 0.0;
};

struct SweepOutcome {
    std::string config_hash;
    std::vector<SweepRow> rows; // ordered by (depth, standard-then-bregman)
};

inline std::string sweep_config_hash(const RunSpec& spec,
                                     const std::vector<int>& depths) {
    nlohmann::json hashed = spec.to_json();
    hashed["sweep_depths"] = depths;
    return hex16(fnv1a64(hashed.dump()));
}

/// Depth sweep over both variants. Writes <out>/runs.csv (all per-seed
/// rows), <out>/sweep.csv (one aggregated row per depth and variant, with
/// the smoothness of the trained final hidden representation), and
/// <out>/plot.csv (x,y column pair per variant, ready to plot).
inline SweepOutcome cmd_sweep_depth(const RunSpec& base_spec,
                                    const std::vector<int>& depths) {
    base_spec.validate();
    if (depths.empty())
        throw ConfigError("sweep-depth: need at least one depth");
    for (int d : depths)
        if (d < 3)
            throw ConfigError("sweep-depth: depths must be >= 3, got " +
                              std::to_string(d));

    const GraphDataset ds = base_spec.load();
    const GraphOps gops = GraphOps::build(ds);
    const std::string hash = sweep_config_hash(base_spec, depths);

    SweepOutcome outcome;
    outcome.config_hash = hash;
    std::string runs_csv = detail::hash_line(hash);
    runs_csv += kRunsCsvHeader;

    for (int depth : depths) {
        for (bool bregman : {false, true}) {
            RunSpec spec = base_spec;
            spec.model.depth = depth;
            spec.model.bregman_enhanced = bregman;

            // Smoothness is measured on each model in its restored
            // best-epoch state, evaluation mode (no dropout).
            double smooth = 0.0;
            MultiSeedResult result = multi_seed(
                [&](std::uint64_t seed) {
                    Rng rng(seed);
                    return build_model(spec.model, ds, rng);
                },
                ds, spec.train,
                [&](Model& model, const SeedRun&) {
                    Tape tape(false);
                    Tensor hidden = model.hidden_forward(tape, gops, ds.features,
                                                         false, nullptr);
                    smooth += smoothness_metric(hidden, gops.adj);
                });
            smooth /= static_cast<double>(result.runs.size());

            for (const auto& run : result.runs)
                runs_csv += runs_csv_row(ds.name, spec.model, run);
            outcome.rows.push_back(
                {depth, bregman, result.mean, result.stddev, smooth});
        }
    }

    namespace fs = std::filesystem;
    fs::create_directories(base_spec.output);
    detail::write_text(fs::path(base_spec.output) / "runs.csv", runs_csv);

    std::string sweep_csv = detail::hash_line(hash);
    sweep_csv += "depth,variant,mean_test_acc,std_test_acc,mean_smoothness\n";
    for (const auto& row : outcome.rows) {
        sweep_csv += std::to_string(row.depth);
        sweep_csv += ',';
        sweep_csv += detail::variant_name(row.bregman);
        sweep_csv += ',';
        sweep_csv += detail::fixed6(row.mean);
        sweep_csv += ',';
        sweep_csv += detail::fixed6(row.stddev);
        sweep_csv += ',';
        sweep_csv += detail::fixed6(row.mean_smoothness);
        sweep_csv += '\n';
    }
    detail::write_text(fs::path(base_spec.output) / "sweep.csv", sweep_csv);

    std::string plot_csv = detail::hash_line(hash);
    plot_csv += "depth,standard,depth,bregman\n";
    for (std::size_t i = 0; i + 1 < outcome.rows.size(); i += 2) {
        const auto& std_row = outcome.rows[i];
        const auto& breg_row = outcome.rows[i + 1];
        plot_csv += std::to_string(std_row.depth);
        plot_csv += ',';
        plot_csv += detail::fixed6(std_row.mean);
        plot_csv += ',';
        plot_csv += std::to_string(breg_row.depth);
        plot_csv += ',';
        plot_csv += detail::fixed6(breg_row.mean);
        plot_csv += '\n';
    }
    detail::write_text(fs::path(base_spec.output) / "plot.csv", plot_csv);

    return outcome;
}

inline double cmd_homophily(const std::filesystem::path& dataset_dir) {
    return edge_homophily(load_dataset(dataset_dir));
}

struct VerifyOutcome {
    int total = 0;
    int failed = 0;
    std::string config_hash;
};

inline std::string verify_config_hash(int instances_per_combo, int trials,
                                      std::uint64_t seed, bool inject_fault) {
    nlohmann::json cfg{{"command", "verify"},
                       {"instances", instances_per_combo},
                       {"trials", trials},
                       {"seed", seed},
                       {"fault", inject_fault}};
    return hex16(fnv1a64(cfg.dump()));
}

/// Runs the argmin certificate over every registered activation pair with a
/// potential, crossed with every aggregator kind. Writes one JSON line per
/// certificate to <out>/certificates.jsonl (after a header line carrying the
/// config hash). With inject_fault, one additional deliberately corrupted
/// check is appended; it must FAIL, demonstrating the certificate's teeth.
inline VerifyOutcome cmd_verify(int instances_per_combo, int trials,
                                std::uint64_t seed,
                                const std::filesystem::path& out_dir,
                                bool inject_fault) {
    if (instances_per_combo < 1)
        throw ConfigError("verify: instances must be >= 1");
    if (trials < 1)
        throw ConfigError("verify: trials must be >= 1");

    const std::string hash =
        verify_config_hash(instances_per_combo, trials, seed, inject_fault);

    Rng rng(seed);
    VerifyOutcome outcome;
    outcome.config_hash = hash;
    std::string lines = nlohmann::json{{"config_hash", hash}}.dump() + "\n";

    const AggregatorKind kinds[] = {AggregatorKind::Gcn, AggregatorKind::Gat,
                                    AggregatorKind::Sage, AggregatorKind::Appnp};
    auto emit = [&](const Certificate& cert, bool fault) {
        nlohmann::json j{{"pair", cert.pair},
                         {"aggregator", cert.aggregator},
                         {"n", cert.n},
                         {"d", cert.d},
                         {"grad_inf_norm", cert.grad_inf_norm},
                         {"min_perturbation_increase", cert.min_perturbation_increase},
                         {"pass", cert.pass}};
        if (fault) j["injected_fault"] = true;
        lines += j.dump() + "\n";
        ++outcome.total;
        if (!cert.pass) ++outcome.failed;
    };

    for (const auto& pair : activation_registry()) {
        if (!pair.has_potential) continue;
        for (AggregatorKind kind : kinds)
            for (int i = 0; i < instances_per_combo; ++i)
                emit(certify_random_instance(pair, kind, trials, kPerturbRadius, rng),
                     false);
    }

    if (inject_fault) {
        // Certify the closed form of one problem against the objective of
        // another: shift b after computing the candidate. The gradient check
        // must notice.
        const ActivationPair& pair = activation_by_name("tanh");
        for (int attempt = 0; attempt < 100; ++attempt) {
            CertificateInstance inst =
                make_certificate_instance(pair, AggregatorKind::Gcn, 5, 3, rng);
            try {
                Tape notape(false);
                ClampStats stats;
                Tensor z = bregman_closed_form(notape, inst.params, pair, inst.u,
                                               1e-6, &stats);
                if (stats.clamped > 0)
                    continue;
                BregmanLayerParams corrupted = inst.params;
                corrupted.b = inst.params.b.clone();
                for (auto& v : corrupted.b.values()) v += 0.1;
                Certificate cert =
                    certify_point(pair, corrupted, inst.u, z, trials,
                                  kPerturbRadius, rng);
                cert.aggregator = "gcn";
                emit(cert, true);
                break;
            } catch (const NumericError&) {
                continue;
            }
        }
    }

    std::filesystem::create_directories(out_dir);
    detail::write_text(out_dir / "certificates.jsonl", lines);
    return outcome;
}

/// Reads the hash embedded in each output file under `dir` and compares it
/// with `expected`. Returns the mismatching or unreadable files; empty means
/// everything checks out. Files that do not exist are skipped: a train run
/// has no sweep.csv and vice versa.
inline std::vector<std::string> check_output_hashes(const std::filesystem::path& dir,
                                                    const std::string& expected) {
    namespace fs = std::filesystem;
    std::vector<std::string> bad;
    bool found_any = false;

    auto check_csv = [&](const char* name) {
        const fs::path path = dir / name;
        if (!fs::exists(path)) return;
        found_any = true;
        std::ifstream in(path, std::ios::binary);
        std::string first;
        std::getline(in, first);
        const std::string prefix = "# config_hash=";
        if (first.rfind(prefix, 0) != 0 || first.substr(prefix.size()) != expected)
            bad.push_back(name);
    };
    check_csv("runs.csv");
    check_csv("sweep.csv");
    check_csv("plot.csv");

    const fs::path summary = dir / "summary.json";
    if (fs::exists(summary)) {
        found_any = true;
        std::ifstream in(summary);
        try {
            nlohmann::json j = nlohmann::json::parse(in);
            if (!j.contains("config_hash") ||
                j.at("config_hash").get<std::string>() != expected)
                bad.push_back("summary.json");
        } catch (const nlohmann::json::exception&) {
            bad.push_back("summary.json");
        }
    }

    const fs::path certs = dir / "certificates.jsonl";
    if (fs::exists(certs)) {
        found_any = true;
        std::ifstream in(certs, std::ios::binary);
        std::string first;
        std::getline(in, first);
        try {
            nlohmann::json j = nlohmann::json::parse(first);
            if (!j.contains("config_hash") ||
                j.at("config_hash").get<std::string>() != expected)
                bad.push_back("certificates.jsonl");
        } catch (const nlohmann::json::exception&) {
            bad.push_back("certificates.jsonl");
        }
    }

    if (!found_any)
        bad.push_back("(no output files found in " + dir.string() + ")");
    return bad;
}

} // namespace bgnn
