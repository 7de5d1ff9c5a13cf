#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <cblas.h>

#include "bgnn/config.hpp"
#include "bgnn/convert.hpp"
#include "bgnn/experiment.hpp"

namespace {

// Options shared by train and sweep-depth; every flag overrides the value a
// --config file supplies, which in turn overrides the built-in default.
struct CommonOpts {
    std::string config_path;
    std::string dataset;
    std::string model;
    bool bregman = false;
    int depth = 0;
    std::string activation;
    int seeds = 0;
    std::string out;
    bool check = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "JSON config file");
    cmd->add_option("--dataset", o.dataset, "canonical dataset directory");
    cmd->add_option("--model", o.model, "aggregator: gcn, gat, sage, appnp");
    cmd->add_flag("--bregman", o.bregman, "use the Bregman-enhanced variant");
    cmd->add_option("--depth", o.depth, "total layer count (>= 3)");
    cmd->add_option("--activation", o.activation,
                    "identity, tanh, arctan, softplus, leaky_relu");
    cmd->add_option("--seeds", o.seeds, "run seeds 1..N");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_flag("--check", o.check,
                  "verify existing outputs against the config hash instead of running");
}

bgnn::RunSpec resolve(const CLI::App* cmd, const CommonOpts& o) {
    bgnn::RunSpec spec;
    if (!o.config_path.empty()) spec = bgnn::RunSpec::from_file(o.config_path);
    if (cmd->count("--dataset")) {
        spec.dataset_path = o.dataset;
        spec.synthetic.reset();
    }
    if (cmd->count("--model"))
        spec.model.base = bgnn::aggregator_from_name(o.model);
    if (cmd->count("--bregman")) spec.model.bregman_enhanced = true;
    if (cmd->count("--depth")) spec.model.depth = o.depth;
    if (cmd->count("--activation")) spec.model.activation = o.activation;
    if (cmd->count("--seeds")) {
        if (o.seeds < 1)
            throw bgnn::ConfigError("--seeds must be >= 1");
        spec.train.seeds.clear();
        for (int s = 1; s <= o.seeds; ++s)
            spec.train.seeds.push_back(static_cast<std::uint64_t>(s));
    }
    if (cmd->count("--out")) spec.output = o.out;
    return spec;
}

int report_check(const std::filesystem::path& dir, const std::string& expected) {
    const std::vector<std::string> bad = bgnn::check_output_hashes(dir, expected);
    if (bad.empty()) {
        std::printf("check ok: outputs in %s match config hash %s\n", dir.c_str(),
                    expected.c_str());
        return 0;
    }
    for (const auto& name : bad)
        std::fprintf(stderr, "check failed: %s does not match config hash %s\n",
                     name.c_str(), expected.c_str());
    return 1;
}

int run_train(const CLI::App* cmd, const CommonOpts& o) {
    bgnn::RunSpec spec = resolve(cmd, o);
    if (o.check) {
        spec.validate();
        return report_check(spec.output, spec.config_hash());
    }
    bgnn::TrainOutcome out = bgnn::cmd_train(spec);
    std::printf("%s: mean test accuracy %.4f +/- %.4f over %zu seeds (config %s)\n",
                spec.output.c_str(), out.mean, out.stddev, out.n_seeds,
                out.config_hash.c_str());
    return 0;
}

int run_sweep(const CLI::App* cmd, const CommonOpts& o,
              const std::vector<int>& depths) {
    bgnn::RunSpec spec = resolve(cmd, o);
    if (o.check) {
        spec.validate();
        return report_check(spec.output, bgnn::sweep_config_hash(spec, depths));
    }
    bgnn::SweepOutcome out = bgnn::cmd_sweep_depth(spec, depths);
    for (const auto& row : out.rows)
        std::printf("depth %d %-8s mean %.4f +/- %.4f smoothness %.4f\n", row.depth,
                    row.bregman ? "bregman" : "standard", row.mean, row.stddev,
                    row.mean_smoothness);
    std::printf("config %s\n", out.config_hash.c_str());
    return 0;
}

int run_homophily(const std::string& dataset) {
    std::printf("%.6f\n", bgnn::cmd_homophily(dataset));
    return 0;
}

int run_verify(int instances, int trials, std::uint64_t seed, const std::string& out,
               bool inject_fault, bool check) {
    if (check)
        return report_check(out, bgnn::verify_config_hash(instances, trials, seed,
                                                          inject_fault));
    bgnn::VerifyOutcome v = bgnn::cmd_verify(instances, trials, seed, out, inject_fault);
    std::printf("%d certificates: %d PASS, %d FAIL (config %s)\n", v.total,
                v.total - v.failed, v.failed, v.config_hash.c_str());
    return v.failed == 0 ? 0 : 1;
}

int run_convert(const std::string& input, const std::string& name,
                const std::string& out) {
    bgnn::ConvertReport r = bgnn::convert_dataset(input, name, out);
    std::printf("converted %zu nodes, %zu edges, %d classes -> %s\n", r.nodes, r.edges,
                r.classes, out.c_str());
    if (r.skipped_edges)
        std::fprintf(stderr, "note: skipped %zu edges referencing unknown node ids\n",
                     r.skipped_edges);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    openblas_set_num_threads(1); // keep GEMM results bit-identical across machines

    CLI::App app{"Bregman-enhanced graph neural networks"};
    app.require_subcommand(1);

    CommonOpts train_opts;
    CLI::App* train = app.add_subcommand("train", "train one model over all seeds");
    add_common(train, train_opts);

    CommonOpts sweep_opts;
    std::vector<int> depths = {3, 5, 7, 9};
    CLI::App* sweep =
        app.add_subcommand("sweep-depth", "train standard and Bregman variants per depth");
    add_common(sweep, sweep_opts);
    sweep->add_option("--depths", depths, "depths to sweep")->delimiter(',');

    std::string homophily_dataset;
    CLI::App* homophily =
        app.add_subcommand("homophily", "print a dataset's edge homophily");
    homophily->add_option("--dataset", homophily_dataset, "canonical dataset directory")
        ->required();

    int verify_instances = 50, verify_trials = 100;
    std::uint64_t verify_seed = 7;
    std::string verify_out = "out";
    bool verify_fault = false, verify_check = false;
    CLI::App* verify =
        app.add_subcommand("verify", "certify the closed-form layer as an argmin");
    verify->add_option("--instances", verify_instances,
                       "random instances per activation/aggregator combination");
    verify->add_option("--trials", verify_trials, "perturbation trials per instance");
    verify->add_option("--seed", verify_seed, "instance generator seed");
    verify->add_option("--out", verify_out, "output directory");
    verify->add_flag("--inject-fault", verify_fault,
                     "append a corrupted check that must FAIL");
    verify->add_flag("--check", verify_check,
                     "verify existing certificates against the config hash");

    std::string convert_input, convert_name, convert_out;
    CLI::App* convert =
        app.add_subcommand("convert", "convert a native text dataset to canonical form");
    convert->add_option("--dataset", convert_input, "directory with the native files")
        ->required();
    convert->add_option("--name", convert_name,
                        "dataset name (default: input directory basename)");
    convert->add_option("--out", convert_out, "canonical output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train->parsed()) return run_train(train, train_opts);
        if (sweep->parsed()) return run_sweep(sweep, sweep_opts, depths);
        if (homophily->parsed()) return run_homophily(homophily_dataset);
        if (verify->parsed())
            return run_verify(verify_instances, verify_trials, verify_seed, verify_out,
                              verify_fault, verify_check);
        if (convert->parsed())
            return run_convert(convert_input, convert_name, convert_out);
    } catch (const bgnn::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const bgnn::ParseError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const bgnn::TrainingError& e) {
        std::fprintf(stderr, "training diverged: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2; // no subcommand parsed; require_subcommand should prevent this
}
