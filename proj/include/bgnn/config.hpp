#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bgnn/dataset.hpp"
#include "bgnn/error.hpp"
#include "bgnn/layers.hpp"
#include "bgnn/train.hpp"

namespace bgnn {

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex16(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

/// Parameters of a generated stochastic block model standing in for a file
/// dataset.
struct SyntheticSpec {
    std::size_t nodes = 400;
    int classes = 4;
    double p_in = 0.05;
    double p_out = 0.005;
    std::size_t feat_dim = 16;
    std::uint64_t seed = 1;
};

namespace detail {

[[noreturn]] inline void bad_field(const std::string& path, const std::string& what) {
    throw ConfigError(path + ": " + what);
}

inline void reject_unknown(const nlohmann::json& j, const std::string& scope,
                           std::initializer_list<const char*> known) {
    if (!j.is_object())
        bad_field(scope, "expected an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known)
            if (key == k) { ok = true; break; }
        if (!ok) bad_field(scope + "." + key, "unknown field");
    }
}

template <class T>
inline void read_field(const nlohmann::json& j, const std::string& scope,
                       const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        bad_field(scope + "." + key, "wrong type");
    }
}

/// Unsigned fields need an explicit sign check: the JSON library would
/// happily wrap a negative number around.
template <class T>
inline void read_unsigned(const nlohmann::json& j, const std::string& scope,
                          const char* key, T& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                   v.get<std::int64_t>() < 0))
        bad_field(scope + "." + key, "expected a nonnegative integer");
    out = v.get<T>();
}

inline void read_seed_list(const nlohmann::json& j, const std::string& scope,
                           const char* key, std::vector<std::uint64_t>& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array()) bad_field(scope + "." + key, "expected an array of integers");
    std::vector<std::uint64_t> seeds;
    for (const auto& e : v) {
        if (!e.is_number_integer() ||
            (!e.is_number_unsigned() && e.get<std::int64_t>() < 0))
            bad_field(scope + "." + key, "expected nonnegative integers");
        seeds.push_back(e.get<std::uint64_t>());
    }
    out = std::move(seeds);
}

} // namespace detail

/// Everything one experiment needs: the data source, the model, the training
/// protocol, and where outputs go. Every field has a default; a JSON config
/// file overrides defaults and command-line flags override the file.
struct RunSpec {
    std::string dataset_path;               // exclusive with synthetic
    std::optional<SyntheticSpec> synthetic;
    ModelConfig model;
    TrainConfig train;
    std::string output = "out";

    void validate() const {
        const bool has_file = !dataset_path.empty();
        if (has_file == synthetic.has_value())
            throw ConfigError(has_file
                                  ? "config: dataset and synthetic are exclusive"
                                  : "config: needs either dataset or synthetic");
        if (synthetic) {
            const auto& s = *synthetic;
            if (s.p_in < 0.0 || s.p_in > 1.0 || s.p_out < 0.0 || s.p_out > 1.0)
                detail::bad_field("synthetic.p_in/p_out", "must lie in [0, 1]");
            if (s.classes < 2) detail::bad_field("synthetic.classes", "must be >= 2");
            if (s.nodes < static_cast<std::size_t>(s.classes))
                detail::bad_field("synthetic.nodes", "must be >= classes");
            if (s.feat_dim == 0) detail::bad_field("synthetic.feat_dim", "must be >= 1");
        }
        if (model.depth < 3) detail::bad_field("model.depth", "must be >= 3");
        if (model.hidden == 0) detail::bad_field("model.hidden", "must be >= 1");
        if (model.dropout < 0.0 || model.dropout >= 1.0)
            detail::bad_field("model.dropout", "must lie in [0, 1)");
        if (model.heads < 1) detail::bad_field("model.heads", "must be >= 1");
        if (model.appnp_alpha <= 0.0 || model.appnp_alpha > 1.0)
            detail::bad_field("model.appnp_alpha", "must lie in (0, 1]");
        if (model.appnp_steps < 0) detail::bad_field("model.appnp_steps", "must be >= 0");
        if (model.clamp_margin <= 0.0)
            detail::bad_field("model.clamp_margin", "must be positive");
        activation_by_name(model.activation);
        if (train.lr <= 0.0) detail::bad_field("train.lr", "must be positive");
        if (train.weight_decay < 0.0)
            detail::bad_field("train.weight_decay", "must be >= 0");
        if (train.max_epochs < 1) detail::bad_field("train.max_epochs", "must be >= 1");
        if (train.patience < 1 || train.patience > train.max_epochs)
            detail::bad_field("train.patience", "must lie in [1, max_epochs]");
        if (train.seeds.empty()) detail::bad_field("train.seeds", "must be nonempty");
        if (output.empty()) detail::bad_field("output", "must be nonempty");
    }

    static RunSpec from_json(const nlohmann::json& j) {
        RunSpec spec;
        detail::reject_unknown(j, "config",
                               {"dataset", "synthetic", "model", "train", "output"});
        detail::read_field(j, "config", "dataset", spec.dataset_path);
        detail::read_field(j, "config", "output", spec.output);

        if (j.contains("synthetic")) {
            const auto& js = j.at("synthetic");
            detail::reject_unknown(js, "synthetic",
                                   {"nodes", "classes", "p_in", "p_out", "feat_dim",
                                    "seed"});
            SyntheticSpec s;
            detail::read_unsigned(js, "synthetic", "nodes", s.nodes);
            detail::read_field(js, "synthetic", "classes", s.classes);
            detail::read_field(js, "synthetic", "p_in", s.p_in);
            detail::read_field(js, "synthetic", "p_out", s.p_out);
            detail::read_unsigned(js, "synthetic", "feat_dim", s.feat_dim);
            detail::read_unsigned(js, "synthetic", "seed", s.seed);
            spec.synthetic = s;
        }
        if (j.contains("model")) {
            const auto& jm = j.at("model");
            detail::reject_unknown(jm, "model",
                                   {"base", "bregman", "depth", "hidden", "activation",
                                    "dropout", "heads", "appnp_alpha", "appnp_steps",
                                    "clamp_margin"});
            std::string base = aggregator_name(spec.model.base);
            detail::read_field(jm, "model", "base", base);
            spec.model.base = aggregator_from_name(base);
            detail::read_field(jm, "model", "bregman", spec.model.bregman_enhanced);
            detail::read_field(jm, "model", "depth", spec.model.depth);
            detail::read_unsigned(jm, "model", "hidden", spec.model.hidden);
            detail::read_field(jm, "model", "activation", spec.model.activation);
            detail::read_field(jm, "model", "dropout", spec.model.dropout);
            detail::read_field(jm, "model", "heads", spec.model.heads);
            detail::read_field(jm, "model", "appnp_alpha", spec.model.appnp_alpha);
            detail::read_field(jm, "model", "appnp_steps", spec.model.appnp_steps);
            detail::read_field(jm, "model", "clamp_margin", spec.model.clamp_margin);
        }
        if (j.contains("train")) {
            const auto& jt = j.at("train");
            detail::reject_unknown(jt, "train",
                                   {"lr", "weight_decay", "max_epochs", "patience",
                                    "seeds"});
            detail::read_field(jt, "train", "lr", spec.train.lr);
            detail::read_field(jt, "train", "weight_decay", spec.train.weight_decay);
            detail::read_field(jt, "train", "max_epochs", spec.train.max_epochs);
            detail::read_field(jt, "train", "patience", spec.train.patience);
            detail::read_seed_list(jt, "train", "seeds", spec.train.seeds);
        }
        // No validate() here: command-line flags may still override fields,
        // so semantic validation runs once the RunSpec is fully resolved.
        return spec;
    }

    static RunSpec from_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in)
            throw ConfigError("config file not found: " + path.string());
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
        return from_json(j);
    }

    /// Canonical resolved form: every semantic field with defaults filled in,
    /// keys in a fixed order. The output directory is deliberately omitted:
    /// the same experiment written elsewhere is the same experiment.
    nlohmann::json to_json() const {
        nlohmann::json j;
        if (synthetic) {
            j["synthetic"] = {{"nodes", synthetic->nodes},
                              {"classes", synthetic->classes},
                              {"p_in", synthetic->p_in},
                              {"p_out", synthetic->p_out},
                              {"feat_dim", synthetic->feat_dim},
                              {"seed", synthetic->seed}};
        } else {
            j["dataset"] = dataset_path;
        }
        j["model"] = {{"base", aggregator_name(model.base)},
                      {"bregman", model.bregman_enhanced},
                      {"depth", model.depth},
                      {"hidden", model.hidden},
                      {"activation", model.activation},
                      {"dropout", model.dropout},
                      {"heads", model.heads},
                      {"appnp_alpha", model.appnp_alpha},
                      {"appnp_steps", model.appnp_steps},
                      {"clamp_margin", model.clamp_margin}};
        j["train"] = {{"lr", train.lr},
                      {"weight_decay", train.weight_decay},
                      {"max_epochs", train.max_epochs},
                      {"patience", train.patience},
                      {"seeds", train.seeds}};
        return j;
    }

    /// FNV-1a 64 over the canonical JSON dump, as 16 hex digits.
    std::string config_hash() const { return hex16(fnv1a64(to_json().dump())); }

    GraphDataset load() const {
        if (synthetic)
            return generate_sbm(synthetic->nodes, synthetic->classes,
                                synthetic->p_in, synthetic->p_out,
                                synthetic->feat_dim, synthetic->seed);
        return load_dataset(dataset_path);
    }
};

} // namespace bgnn
