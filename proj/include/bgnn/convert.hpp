#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bgnn/dataset.hpp"
#include "bgnn/error.hpp"
#include "bgnn/rng.hpp"

namespace bgnn {

namespace detail {

inline void split_ws(const std::string& line, std::vector<std::string_view>& out) {
    out.clear();
    std::size_t i = 0;
    const std::size_t n = line.size();
    while (i < n) {
        while (i < n && (line[i] == ' ' || line[i] == '\t')) ++i;
        std::size_t start = i;
        while (i < n && line[i] != ' ' && line[i] != '\t') ++i;
        if (i > start) out.emplace_back(line.data() + start, i - start);
    }
}

inline void add_undirected_edge(std::set<std::pair<std::size_t, std::size_t>>& edges,
                                std::size_t a, std::size_t b) {
    if (a == b) return;
    if (a > b) std::swap(a, b);
    edges.insert({a, b});
}

} // namespace detail

struct ConvertReport {
    std::size_t nodes = 0;
    std::size_t edges = 0;
    int classes = 0;
    std::size_t skipped_edges = 0; // references to ids absent from the node table
};

/// Citation-network text format: one `<prefix>.content` row per node
/// (id, feature columns, label string) and one `<prefix>.cites` row per
/// directed citation (both ids). Labels are indexed in sorted order so the
/// mapping does not depend on row order. Splits follow the common fixed-size
/// convention for these datasets: the first 20 nodes of each class (in file
/// order) train, the next 500 remaining nodes validate, the last 1000
/// remaining nodes test.
inline ConvertReport convert_citation_text(const std::filesystem::path& content_path,
                                           const std::filesystem::path& cites_path,
                                           const std::string& name,
                                           const std::filesystem::path& out_dir) {
    auto content = detail::read_lines(content_path);
    while (!content.empty() && content.back().empty()) content.pop_back();
    if (content.empty())
        throw ParseError(content_path.string() + ": no rows");

    std::vector<std::string_view> fields;
    detail::split_ws(content[0], fields);
    if (fields.size() < 3)
        throw detail::bad_row(content_path, 1,
                              "expected id, feature columns, and a label");
    const std::size_t d0 = fields.size() - 2;
    const std::size_t n = content.size();

    GraphDataset ds;
    ds.name = name;
    ds.features = Tensor(n, d0, 0.0);
    std::vector<std::string> label_names(n);
    std::map<std::string, std::size_t, std::less<>> index;
    for (std::size_t r = 0; r < n; ++r) {
        detail::split_ws(content[r], fields);
        if (fields.size() != d0 + 2)
            throw detail::bad_row(content_path, r + 1,
                                  "expected " + std::to_string(d0 + 2) + " columns");
        if (!index.emplace(std::string(fields[0]), r).second)
            throw detail::bad_row(content_path, r + 1, "duplicate node id");
        for (std::size_t c = 0; c < d0; ++c)
            ds.features(r, c) =
                detail::parse_number<double>(fields[c + 1], content_path, r + 1);
        label_names[r] = std::string(fields.back());
    }

    std::set<std::string> classes(label_names.begin(), label_names.end());
    std::map<std::string, int> class_index;
    for (const auto& c : classes)
        class_index.emplace(c, static_cast<int>(class_index.size()));
    ds.num_classes = static_cast<int>(classes.size());
    ds.labels.resize(n);
    for (std::size_t r = 0; r < n; ++r) ds.labels[r] = class_index.at(label_names[r]);

    ConvertReport report;
    auto cites = detail::read_lines(cites_path);
    std::set<std::pair<std::size_t, std::size_t>> edge_set;
    for (std::size_t r = 0; r < cites.size(); ++r) {
        if (cites[r].empty()) continue;
        detail::split_ws(cites[r], fields);
        if (fields.size() != 2)
            throw detail::bad_row(cites_path, r + 1, "expected two ids");
        auto a = index.find(fields[0]);
        auto b = index.find(fields[1]);
        if (a == index.end() || b == index.end()) {
            ++report.skipped_edges; // citations into ids the node table lacks
            continue;
        }
        detail::add_undirected_edge(edge_set, a->second, b->second);
    }
    ds.edges.assign(edge_set.begin(), edge_set.end());

    ds.train_mask.assign(n, 0);
    ds.val_mask.assign(n, 0);
    ds.test_mask.assign(n, 0);
    std::vector<int> per_class(static_cast<std::size_t>(ds.num_classes), 0);
    for (std::size_t r = 0; r < n; ++r) {
        int& taken = per_class[static_cast<std::size_t>(ds.labels[r])];
        if (taken < 20) {
            ds.train_mask[r] = 1;
            ++taken;
        }
    }
    std::size_t picked = 0;
    for (std::size_t r = 0; r < n && picked < 500; ++r)
        if (!ds.train_mask[r]) {
            ds.val_mask[r] = 1;
            ++picked;
        }
    picked = 0;
    for (std::size_t r = n; r-- > 0 && picked < 1000;)
        if (!ds.train_mask[r] && !ds.val_mask[r]) {
            ds.test_mask[r] = 1;
            ++picked;
        }

    ds.validate();
    save_dataset(ds, out_dir, /*row_normalize=*/true);
    report.nodes = n;
    report.edges = ds.edges.size();
    report.classes = ds.num_classes;
    return report;
}

/// Tab-separated node-table format: `out1_node_feature_label.txt` carries
/// (node id, comma-joined features, integer label) under a header row, and
/// `out1_graph_edges.txt` carries directed (source, target) pairs under a
/// header row. Feature cells hold either a dense 0/1 vector or, when any
/// value exceeds 1, a list of active feature indices (the sparse convention
/// some of these datasets use). Splits are a stratified 60/20/20 drawn with
/// a fixed seed so conversion is reproducible.
inline ConvertReport convert_node_table_text(const std::filesystem::path& features_path,
                                             const std::filesystem::path& edges_path,
                                             const std::string& name,
                                             const std::filesystem::path& out_dir) {
    auto rows = detail::read_lines(features_path);
    while (!rows.empty() && rows.back().empty()) rows.pop_back();
    if (rows.size() < 2)
        throw ParseError(features_path.string() + ": no data rows");

    struct NodeRow {
        std::size_t id;
        std::vector<double> feats;
        int label;
    };
    std::vector<NodeRow> nodes;
    std::vector<std::string_view> fields, feat_fields;
    double max_value = 0.0;
    std::size_t max_len = 0;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        detail::split_ws(rows[r], fields);
        if (fields.size() != 3)
            throw detail::bad_row(features_path, r + 1,
                                  "expected node id, features, label");
        NodeRow row;
        row.id = detail::parse_number<std::size_t>(fields[0], features_path, r + 1);
        const std::string feat_cell(fields[1]);
        detail::split_fields(feat_cell, feat_fields);
        for (const auto& f : feat_fields)
            row.feats.push_back(detail::parse_number<double>(f, features_path, r + 1));
        row.label = detail::parse_number<int>(fields[2], features_path, r + 1);
        for (double v : row.feats) max_value = std::max(max_value, v);
        max_len = std::max(max_len, row.feats.size());
        nodes.push_back(std::move(row));
    }

    const std::size_t n = nodes.size();
    std::vector<std::size_t> by_id(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        if (nodes[i].id >= n)
            throw ParseError(features_path.string() + ": node id " +
                             std::to_string(nodes[i].id) + " out of range for " +
                             std::to_string(n) + " rows");
        if (by_id[nodes[i].id] != n)
            throw ParseError(features_path.string() + ": duplicate node id " +
                             std::to_string(nodes[i].id));
        by_id[nodes[i].id] = i;
    }

    const bool sparse_indices = max_value > 1.0;
    GraphDataset ds;
    ds.name = name;
    if (sparse_indices) {
        const std::size_t d0 = static_cast<std::size_t>(max_value) + 1;
        ds.features = Tensor(n, d0, 0.0);
        for (std::size_t id = 0; id < n; ++id)
            for (double v : nodes[by_id[id]].feats)
                ds.features(id, static_cast<std::size_t>(v)) = 1.0;
    } else {
        ds.features = Tensor(n, max_len, 0.0);
        for (std::size_t id = 0; id < n; ++id) {
            const auto& feats = nodes[by_id[id]].feats;
            if (feats.size() != max_len)
                throw ParseError(features_path.string() +
                                 ": dense feature rows disagree on length");
            for (std::size_t c = 0; c < max_len; ++c) ds.features(id, c) = feats[c];
        }
    }

    int max_label = 0;
    ds.labels.resize(n);
    for (std::size_t id = 0; id < n; ++id) {
        const int lab = nodes[by_id[id]].label;
        if (lab < 0)
            throw ParseError(features_path.string() + ": negative label");
        ds.labels[id] = lab;
        max_label = std::max(max_label, lab);
    }
    ds.num_classes = max_label + 1;

    ConvertReport report;
    auto edge_rows = detail::read_lines(edges_path);
    std::set<std::pair<std::size_t, std::size_t>> edge_set;
    for (std::size_t r = 1; r < edge_rows.size(); ++r) {
        if (edge_rows[r].empty()) continue;
        detail::split_ws(edge_rows[r], fields);
        if (fields.size() != 2)
            throw detail::bad_row(edges_path, r + 1, "expected two node ids");
        const auto a = detail::parse_number<std::size_t>(fields[0], edges_path, r + 1);
        const auto b = detail::parse_number<std::size_t>(fields[1], edges_path, r + 1);
        if (a >= n || b >= n)
            throw detail::bad_row(edges_path, r + 1, "node id out of range");
        detail::add_undirected_edge(edge_set, a, b);
    }
    ds.edges.assign(edge_set.begin(), edge_set.end());

    ds.train_mask.assign(n, 0);
    ds.val_mask.assign(n, 0);
    ds.test_mask.assign(n, 0);
    std::vector<std::vector<std::size_t>> members(
        static_cast<std::size_t>(ds.num_classes));
    for (std::size_t id = 0; id < n; ++id)
        members[static_cast<std::size_t>(ds.labels[id])].push_back(id);
    Rng rng(0);
    for (auto& group : members) {
        rng.shuffle(group);
        const std::size_t m = group.size();
        const std::size_t n_train = (m * 6) / 10, n_val = (m * 2) / 10;
        for (std::size_t k = 0; k < m; ++k) {
            if (k < n_train)
                ds.train_mask[group[k]] = 1;
            else if (k < n_train + n_val)
                ds.val_mask[group[k]] = 1;
            else
                ds.test_mask[group[k]] = 1;
        }
    }

    ds.validate();
    save_dataset(ds, out_dir, /*row_normalize=*/true);
    report.nodes = n;
    report.edges = ds.edges.size();
    report.classes = ds.num_classes;
    return report;
}

/// Looks at what files the input directory holds and dispatches to the
/// matching converter. `name` doubles as the citation format's file prefix;
/// when empty it defaults to the directory's basename.
inline ConvertReport convert_dataset(const std::filesystem::path& input_dir,
                                     std::string name,
                                     const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    if (name.empty()) {
        name = input_dir.filename().string();
        if (name.empty()) name = input_dir.parent_path().filename().string();
    }
    const fs::path content = input_dir / (name + ".content");
    const fs::path cites = input_dir / (name + ".cites");
    const fs::path node_table = input_dir / "out1_node_feature_label.txt";
    const fs::path edge_table = input_dir / "out1_graph_edges.txt";
    if (fs::exists(content) && fs::exists(cites))
        return convert_citation_text(content, cites, name, out_dir);
    if (fs::exists(node_table) && fs::exists(edge_table))
        return convert_node_table_text(node_table, edge_table, name, out_dir);
    throw ConfigError("convert: " + input_dir.string() + " holds neither " + name +
                      ".content/" + name +
                      ".cites nor out1_node_feature_label.txt/out1_graph_edges.txt");
}

} // namespace bgnn
