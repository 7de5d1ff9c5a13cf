#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bgnn/error.hpp"
#include "bgnn/tensor.hpp"

namespace bgnn {

namespace detail {

struct Csr {
    std::size_t n = 0;                  // square: n x n
    std::vector<std::size_t> row_ptr;   // size n + 1
    std::vector<std::size_t> col_idx;   // sorted within each row, no duplicates
    std::vector<double> vals;
};

} // namespace detail

/// Square sparse matrix in CSR form. Immutable after construction; copies are
/// cheap handles to shared storage, safe to capture in backward rules.
class SparseMatrix {
public:
    SparseMatrix() : d_(std::make_shared<detail::Csr>()) {}

    explicit SparseMatrix(detail::Csr csr)
        : d_(std::make_shared<detail::Csr>(std::move(csr))) {}

    /// Builds the symmetric adjacency of an undirected edge list: each pair
    /// (i, j) produces entries at (i, j) and (j, i) with the given weight.
    /// Duplicate edges collapse to one entry. Endpoints must be distinct and
    /// within [0, n).
    static SparseMatrix from_edges(
        std::size_t n,
        const std::vector<std::pair<std::size_t, std::size_t>>& edges,
        double weight = 1.0) {
        std::vector<std::vector<std::size_t>> nbrs(n);
        for (const auto& [i, j] : edges) {
            if (i >= n || j >= n)
                throw ShapeError("SparseMatrix::from_edges: endpoint out of range: (" +
                                 std::to_string(i) + ", " + std::to_string(j) +
                                 ") with n = " + std::to_string(n));
            if (i == j)
                throw ShapeError("SparseMatrix::from_edges: self-loop at node " +
                                 std::to_string(i));
            nbrs[i].push_back(j);
            nbrs[j].push_back(i);
        }
        detail::Csr csr;
        csr.n = n;
        csr.row_ptr.assign(n + 1, 0);
        for (std::size_t r = 0; r < n; ++r) {
            auto& v = nbrs[r];
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
            csr.row_ptr[r + 1] = csr.row_ptr[r] + v.size();
        }
        csr.col_idx.reserve(csr.row_ptr[n]);
        for (std::size_t r = 0; r < n; ++r)
            csr.col_idx.insert(csr.col_idx.end(), nbrs[r].begin(), nbrs[r].end());
        csr.vals.assign(csr.col_idx.size(), weight);
        return SparseMatrix(std::move(csr));
    }

    static SparseMatrix identity(std::size_t n) {
        detail::Csr csr;
        csr.n = n;
        csr.row_ptr.resize(n + 1);
        csr.col_idx.resize(n);
        csr.vals.assign(n, 1.0);
        for (std::size_t i = 0; i <= n; ++i) csr.row_ptr[i] = i;
        for (std::size_t i = 0; i < n; ++i) csr.col_idx[i] = i;
        return SparseMatrix(std::move(csr));
    }

    std::size_t size() const { return d_->n; }
    std::size_t nnz() const { return d_->col_idx.size(); }

    std::size_t row_begin(std::size_t r) const { return d_->row_ptr[r]; }
    std::size_t row_end(std::size_t r) const { return d_->row_ptr[r + 1]; }
    std::size_t col(std::size_t k) const { return d_->col_idx[k]; }
    double val(std::size_t k) const { return d_->vals[k]; }

    /// True when the sparsity pattern equals its transpose.
    bool is_structurally_symmetric() const {
        for (std::size_t r = 0; r < d_->n; ++r)
            for (std::size_t k = row_begin(r); k < row_end(r); ++k) {
                std::size_t c = col(k);
                auto lo = d_->col_idx.begin() + static_cast<std::ptrdiff_t>(row_begin(c));
                auto hi = d_->col_idx.begin() + static_cast<std::ptrdiff_t>(row_end(c));
                if (!std::binary_search(lo, hi, r)) return false;
            }
        return true;
    }

    const std::shared_ptr<detail::Csr>& data() const { return d_; }

private:
    std::shared_ptr<detail::Csr> d_;
};

/// Symmetric normalization D^{-1/2} (A + I) D^{-1/2} where D is the degree
/// matrix after the optional self-loops. Zero-degree rows (possible only
/// without self-loops) stay all zero rather than dividing by zero. The input
/// must be structurally symmetric; the result then is too, and its spectral
/// radius is at most 1.
inline SparseMatrix normalize_sym(const SparseMatrix& a, bool add_self_loops = true) {
    const std::size_t n = a.size();
    detail::Csr csr;
    csr.n = n;
    csr.row_ptr.assign(n + 1, 0);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t count = a.row_end(r) - a.row_begin(r);
        if (add_self_loops) {
            bool has_diag = false;
            for (std::size_t k = a.row_begin(r); k < a.row_end(r); ++k)
                if (a.col(k) == r) { has_diag = true; break; }
            if (!has_diag) ++count;
        }
        csr.row_ptr[r + 1] = csr.row_ptr[r] + count;
    }
    csr.col_idx.resize(csr.row_ptr[n]);
    csr.vals.resize(csr.row_ptr[n]);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t w = csr.row_ptr[r];
        bool placed_diag = !add_self_loops;
        for (std::size_t k = a.row_begin(r); k < a.row_end(r); ++k) {
            std::size_t c = a.col(k);
            if (!placed_diag && c > r) {
                csr.col_idx[w] = r;
                csr.vals[w++] = 1.0;
                placed_diag = true;
            }
            double v = a.val(k);
            if (add_self_loops && c == r) {
                v += 1.0;
                placed_diag = true;
            }
            csr.col_idx[w] = c;
            csr.vals[w++] = v;
        }
        if (!placed_diag) {
            csr.col_idx[w] = r;
            csr.vals[w++] = 1.0;
        }
    }
    std::vector<double> inv_sqrt(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        double deg = 0.0;
        for (std::size_t k = csr.row_ptr[r]; k < csr.row_ptr[r + 1]; ++k)
            deg += csr.vals[k];
        if (deg > 0.0) inv_sqrt[r] = 1.0 / std::sqrt(deg);
    }
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = csr.row_ptr[r]; k < csr.row_ptr[r + 1]; ++k)
            csr.vals[k] *= inv_sqrt[r] * inv_sqrt[csr.col_idx[k]];
    return SparseMatrix(std::move(csr));
}

/// Returns the matrix with a unit diagonal entry inserted wherever a row has
/// none; existing diagonal entries are left as they are.
inline SparseMatrix with_self_loops(const SparseMatrix& a) {
    const std::size_t n = a.size();
    detail::Csr csr;
    csr.n = n;
    csr.row_ptr.assign(n + 1, 0);
    for (std::size_t r = 0; r < n; ++r) {
        bool has_diag = false;
        for (std::size_t k = a.row_begin(r); k < a.row_end(r); ++k)
            if (a.col(k) == r) { has_diag = true; break; }
        csr.row_ptr[r + 1] = csr.row_ptr[r] + (a.row_end(r) - a.row_begin(r)) +
                             (has_diag ? 0 : 1);
    }
    csr.col_idx.resize(csr.row_ptr[n]);
    csr.vals.resize(csr.row_ptr[n]);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t w = csr.row_ptr[r];
        bool placed = false;
        for (std::size_t k = a.row_begin(r); k < a.row_end(r); ++k) {
            std::size_t c = a.col(k);
            if (!placed && c > r) {
                csr.col_idx[w] = r;
                csr.vals[w++] = 1.0;
                placed = true;
            }
            if (c == r) placed = true;
            csr.col_idx[w] = c;
            csr.vals[w++] = a.val(k);
        }
        if (!placed) {
            csr.col_idx[w] = r;
            csr.vals[w++] = 1.0;
        }
    }
    return SparseMatrix(std::move(csr));
}

/// Row normalization D^{-1} A (no self-loops added). Rows of isolated nodes
/// stay all zero. Each nonempty row then sums to 1.
inline SparseMatrix normalize_row(const SparseMatrix& a) {
    detail::Csr csr = *a.data();
    for (std::size_t r = 0; r < csr.n; ++r) {
        double deg = 0.0;
        for (std::size_t k = csr.row_ptr[r]; k < csr.row_ptr[r + 1]; ++k)
            deg += csr.vals[k];
        if (deg <= 0.0) continue;
        for (std::size_t k = csr.row_ptr[r]; k < csr.row_ptr[r + 1]; ++k)
            csr.vals[k] /= deg;
    }
    return SparseMatrix(std::move(csr));
}

/// Y = A * X with A sparse and fixed. Only X receives a gradient:
/// dX += A^T * dY, accumulated row by row through the same pattern.
inline Tensor spmm(Tape& tape, const SparseMatrix& a, const Tensor& x) {
    const std::size_t n = a.size(), d = x.cols();
    if (x.rows() != n)
        throw ShapeError("spmm: matrix is " + std::to_string(n) + "x" +
                         std::to_string(n) + " but tensor is " + x.shape_str());
    Tensor out(n, d, 0.0, detail::tracks(tape, x));
    for (std::size_t r = 0; r < n; ++r) {
        double* o = out.values().data() + r * d;
        for (std::size_t k = a.row_begin(r); k < a.row_end(r); ++k) {
            const double v = a.val(k);
            const double* xr = x.values().data() + a.col(k) * d;
            for (std::size_t c = 0; c < d; ++c) o[c] += v * xr[c];
        }
    }
    if (out.requires_grad()) {
        auto csr = a.data();
        auto xd = x.data(), od = out.data();
        tape.record({{xd}, od, [csr, xd, od, n, d] {
            xd->ensure_grad();
            for (std::size_t r = 0; r < n; ++r) {
                const double* g = od->grad.data() + r * d;
                for (std::size_t k = csr->row_ptr[r]; k < csr->row_ptr[r + 1]; ++k) {
                    const double v = csr->vals[k];
                    double* xg = xd->grad.data() + csr->col_idx[k] * d;
                    for (std::size_t c = 0; c < d; ++c) xg[c] += v * g[c];
                }
            }
        }});
    }
    return out;
}

} // namespace bgnn
