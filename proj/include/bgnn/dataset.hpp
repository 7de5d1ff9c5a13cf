#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bgnn/error.hpp"
#include "bgnn/rng.hpp"
#include "bgnn/tensor.hpp"

namespace bgnn {

/// A node-classification dataset: one undirected graph, node features, one
/// label per node, and disjoint train/val/test masks.
struct GraphDataset {
    Tensor features;                                      // n x d0
    std::vector<int> labels;                              // length n
    std::vector<std::pair<std::size_t, std::size_t>> edges; // undirected, i < j
    int num_classes = 0;
    std::vector<std::uint8_t> train_mask, val_mask, test_mask;
    std::string name;

    std::size_t num_nodes() const { return features.rows(); }
    std::size_t num_features() const { return features.cols(); }

    void validate() const {
        const std::size_t n = num_nodes();
        if (labels.size() != n || train_mask.size() != n || val_mask.size() != n ||
            test_mask.size() != n)
            throw Error("GraphDataset: arrays disagree on node count");
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] < 0 || labels[i] >= num_classes)
                throw Error("GraphDataset: label out of range at node " +
                            std::to_string(i));
            if (train_mask[i] + val_mask[i] + test_mask[i] > 1)
                throw Error("GraphDataset: overlapping masks at node " +
                            std::to_string(i));
        }
        for (const auto& [a, b] : edges)
            if (a >= n || b >= n || a >= b)
                throw Error("GraphDataset: bad edge (" + std::to_string(a) + ", " +
                            std::to_string(b) + ")");
    }
};

/// Fraction of undirected edges whose endpoints share a label.
inline double edge_homophily(const GraphDataset& ds) {
    if (ds.edges.empty())
        throw NumericError("edge_homophily: graph has no edges");
    std::size_t same = 0;
    for (const auto& [a, b] : ds.edges)
        if (ds.labels[a] == ds.labels[b]) ++same;
    return static_cast<double>(same) / static_cast<double>(ds.edges.size());
}

namespace detail {

inline std::vector<std::string> read_lines(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in)
        throw ParseError("missing file: " + file.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

inline void split_fields(const std::string& line, std::vector<std::string_view>& out) {
    out.clear();
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.emplace_back(line.data() + start, line.size() - start);
            return;
        }
        out.emplace_back(line.data() + start, comma - start);
        start = comma + 1;
    }
}

inline ParseError bad_row(const std::filesystem::path& file, std::size_t line_no,
                          const std::string& what) {
    return ParseError(file.string() + ":" + std::to_string(line_no) + ": " + what);
}

template <class T>
inline T parse_number(std::string_view s, const std::filesystem::path& file,
                      std::size_t line_no) {
    T value{};
    const char* first = s.data();
    const char* last = s.data() + s.size();
    while (first != last && (*first == ' ' || *first == '\t')) ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    while (ptr != last && (*ptr == ' ' || *ptr == '\t')) ++ptr;
    if (ec != std::errc{} || ptr != last)
        throw bad_row(file, line_no, "malformed number \"" + std::string(s) + "\"");
    return value;
}

} // namespace detail

/// Reads a canonical dataset directory: meta.json plus edges.csv,
/// features.csv, labels.csv, masks.csv (headerless, LF). Row-normalizes
/// features when the metadata asks for it. Every failure is a ParseError
/// naming the file and line.
inline GraphDataset load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const fs::path meta_path = dir / "meta.json";
    std::ifstream meta_in(meta_path);
    if (!meta_in)
        throw ParseError("missing file: " + meta_path.string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(meta_path.string() + ": " + e.what());
    }
    for (const char* key : {"n", "d0", "num_classes", "name", "row_normalize"})
        if (!meta.contains(key))
            throw ParseError(meta_path.string() + ": missing key \"" +
                             std::string(key) + "\"");

    GraphDataset ds;
    const auto n = meta.at("n").get<std::size_t>();
    const auto d0 = meta.at("d0").get<std::size_t>();
    ds.num_classes = meta.at("num_classes").get<int>();
    ds.name = meta.at("name").get<std::string>();
    const bool row_normalize = meta.at("row_normalize").get<bool>();
    if (n == 0 || d0 == 0 || ds.num_classes <= 0)
        throw ParseError(meta_path.string() + ": n, d0, num_classes must be positive");

    std::vector<std::string_view> fields;

    const fs::path edges_path = dir / "edges.csv";
    for (std::size_t ln = 0; const auto& line : detail::read_lines(edges_path)) {
        ++ln;
        if (line.empty()) continue;
        detail::split_fields(line, fields);
        if (fields.size() != 2)
            throw detail::bad_row(edges_path, ln, "expected two columns");
        auto a = detail::parse_number<std::size_t>(fields[0], edges_path, ln);
        auto b = detail::parse_number<std::size_t>(fields[1], edges_path, ln);
        if (a >= b)
            throw detail::bad_row(edges_path, ln, "endpoints must satisfy i < j");
        if (b >= n)
            throw detail::bad_row(edges_path, ln, "endpoint " + std::to_string(b) +
                                                      " out of range");
        ds.edges.emplace_back(a, b);
    }

    const fs::path feat_path = dir / "features.csv";
    {
        auto lines = detail::read_lines(feat_path);
        while (!lines.empty() && lines.back().empty()) lines.pop_back();
        if (lines.size() != n)
            throw ParseError(feat_path.string() + ": expected " + std::to_string(n) +
                             " rows, found " + std::to_string(lines.size()));
        ds.features = Tensor(n, d0);
        for (std::size_t r = 0; r < n; ++r) {
            detail::split_fields(lines[r], fields);
            if (fields.size() != d0)
                throw detail::bad_row(feat_path, r + 1,
                                      "expected " + std::to_string(d0) + " columns");
            for (std::size_t c = 0; c < d0; ++c)
                ds.features(r, c) = detail::parse_number<double>(fields[c], feat_path, r + 1);
        }
    }

    const fs::path labels_path = dir / "labels.csv";
    {
        auto lines = detail::read_lines(labels_path);
        while (!lines.empty() && lines.back().empty()) lines.pop_back();
        if (lines.size() != n)
            throw ParseError(labels_path.string() + ": expected " + std::to_string(n) +
                             " rows, found " + std::to_string(lines.size()));
        ds.labels.resize(n);
        for (std::size_t r = 0; r < n; ++r) {
            int y = detail::parse_number<int>(lines[r], labels_path, r + 1);
            if (y < 0 || y >= ds.num_classes)
                throw detail::bad_row(labels_path, r + 1,
                                      "label " + std::to_string(y) + " out of range");
            ds.labels[r] = y;
        }
    }

    const fs::path masks_path = dir / "masks.csv";
    {
        auto lines = detail::read_lines(masks_path);
        while (!lines.empty() && lines.back().empty()) lines.pop_back();
        if (lines.size() != n)
            throw ParseError(masks_path.string() + ": expected " + std::to_string(n) +
                             " rows, found " + std::to_string(lines.size()));
        ds.train_mask.resize(n);
        ds.val_mask.resize(n);
        ds.test_mask.resize(n);
        for (std::size_t r = 0; r < n; ++r) {
            detail::split_fields(lines[r], fields);
            if (fields.size() != 3)
                throw detail::bad_row(masks_path, r + 1, "expected three columns");
            std::uint8_t m[3];
            for (int k = 0; k < 3; ++k) {
                int v = detail::parse_number<int>(fields[static_cast<std::size_t>(k)],
                                                  masks_path, r + 1);
                if (v != 0 && v != 1)
                    throw detail::bad_row(masks_path, r + 1, "mask values must be 0 or 1");
                m[k] = static_cast<std::uint8_t>(v);
            }
            if (m[0] + m[1] + m[2] > 1)
                throw detail::bad_row(masks_path, r + 1, "masks overlap");
            ds.train_mask[r] = m[0];
            ds.val_mask[r] = m[1];
            ds.test_mask[r] = m[2];
        }
    }

    if (row_normalize) {
        for (std::size_t r = 0; r < n; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < d0; ++c) s += ds.features(r, c);
            if (s != 0.0)
                for (std::size_t c = 0; c < d0; ++c) ds.features(r, c) /= s;
        }
    }

    ds.validate();
    return ds;
}

/// Writes a dataset in the canonical directory format. Features are printed
/// with max_digits10 precision so load_dataset(save_dataset(ds)) round-trips
/// exactly. Values are stored as-is; pass row_normalize=true only when the
/// stored features are raw counts that loaders should normalize.
inline void save_dataset(const GraphDataset& ds, const std::filesystem::path& dir,
                         bool row_normalize = false) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::size_t n = ds.num_nodes(), d0 = ds.num_features();

    {
        nlohmann::json meta{{"n", n},
                            {"d0", d0},
                            {"num_classes", ds.num_classes},
                            {"name", ds.name},
                            {"row_normalize", row_normalize}};
        std::ofstream out(dir / "meta.json", std::ios::binary);
        out << meta.dump(2) << "\n";
    }
    {
        std::ofstream out(dir / "edges.csv", std::ios::binary);
        for (const auto& [a, b] : ds.edges)
            out << a << "," << b << "\n";
    }
    {
        std::ofstream out(dir / "features.csv", std::ios::binary);
        char buf[32];
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d0; ++c) {
                std::snprintf(buf, sizeof buf, "%.17g", ds.features(r, c));
                if (c) out << ",";
                out << buf;
            }
            out << "\n";
        }
    }
    {
        std::ofstream out(dir / "labels.csv", std::ios::binary);
        for (int y : ds.labels) out << y << "\n";
    }
    {
        std::ofstream out(dir / "masks.csv", std::ios::binary);
        for (std::size_t r = 0; r < n; ++r)
            out << int(ds.train_mask[r]) << "," << int(ds.val_mask[r]) << ","
                << int(ds.test_mask[r]) << "\n";
    }
}

/// Two-parameter stochastic block model with class-dependent Gaussian
/// features. Nodes take classes round-robin; an edge (i, j) appears with
/// probability p_in when the classes match and p_out otherwise. Masks are a
/// stratified 60/20/20 split. Bit-identical for equal seeds.
inline GraphDataset generate_sbm(std::size_t n, int classes, double p_in,
                                 double p_out, std::size_t feat_dim,
                                 std::uint64_t seed) {
    if (p_in < 0.0 || p_in > 1.0 || p_out < 0.0 || p_out > 1.0)
        throw ConfigError("generate_sbm: probabilities must lie in [0, 1]");
    if (classes < 2 || n < static_cast<std::size_t>(classes))
        throw ConfigError("generate_sbm: need n >= classes >= 2");
    if (feat_dim == 0)
        throw ConfigError("generate_sbm: feat_dim must be positive");

    Rng rng(seed);
    GraphDataset ds;
    ds.name = "sbm";
    ds.num_classes = classes;
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        ds.labels[i] = static_cast<int>(i % static_cast<std::size_t>(classes));

    // Class means first, then per-node noise, then edges, then the mask
    // shuffles: a fixed draw order is what makes seeds reproducible.
    std::vector<double> means(static_cast<std::size_t>(classes) * feat_dim);
    for (auto& m : means) m = 2.0 * rng.normal();
    ds.features = Tensor(n, feat_dim);
    for (std::size_t i = 0; i < n; ++i) {
        const double* mu = means.data() +
                           static_cast<std::size_t>(ds.labels[i]) * feat_dim;
        for (std::size_t c = 0; c < feat_dim; ++c)
            ds.features(i, c) = mu[c] + rng.normal();
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double p = ds.labels[i] == ds.labels[j] ? p_in : p_out;
            if (rng.uniform() < p) ds.edges.emplace_back(i, j);
        }

    ds.train_mask.assign(n, 0);
    ds.val_mask.assign(n, 0);
    ds.test_mask.assign(n, 0);
    for (int c = 0; c < classes; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < n; ++i)
            if (ds.labels[i] == c) members.push_back(i);
        rng.shuffle(members);
        const std::size_t m = members.size();
        const std::size_t n_train = (m * 6) / 10;
        const std::size_t n_val = (m * 2) / 10;
        for (std::size_t k = 0; k < m; ++k) {
            if (k < n_train)
                ds.train_mask[members[k]] = 1;
            else if (k < n_train + n_val)
                ds.val_mask[members[k]] = 1;
            else
                ds.test_mask[members[k]] = 1;
        }
    }
    ds.validate();
    return ds;
}

} // namespace bgnn
