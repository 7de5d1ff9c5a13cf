#pragma once

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bgnn/error.hpp"
#include "bgnn/rng.hpp"

namespace bgnn {

namespace detail {

struct TensorData {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;   // row-major
    bool requires_grad = false;
    std::vector<double> grad;     // empty until a gradient is first accumulated

    TensorData(std::size_t r, std::size_t c, double fill)
        : rows(r), cols(c), values(r * c, fill) {}
    TensorData(std::size_t r, std::size_t c, std::vector<double> v)
        : rows(r), cols(c), values(std::move(v)) {}

    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
    }
};

/// C (m x n) = alpha * op(A) * op(B) + beta * C, row-major storage.
inline void gemm(bool trans_a, bool trans_b,
                 std::size_t m, std::size_t n, std::size_t k,
                 double alpha, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb,
                 double beta, double* c, std::size_t ldc) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        if (beta == 0.0) std::fill(c, c + m * ldc, 0.0);
        return;
    }
    cblas_dgemm(CblasRowMajor,
                trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k),
                alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                beta, c, static_cast<int>(ldc));
}

} // namespace detail

/// Dense 2-D tensor of doubles. A Tensor is a shared handle: copies alias the
/// same storage, which is what lets backward rules write gradients into the
/// tensors the caller still holds.
class Tensor {
public:
    Tensor() : d_(std::make_shared<detail::TensorData>(0, 0, 0.0)) {}

    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0,
           bool requires_grad = false)
        : d_(std::make_shared<detail::TensorData>(rows, cols, fill)) {
        d_->requires_grad = requires_grad;
    }

    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values,
           bool requires_grad = false)
        : d_(std::make_shared<detail::TensorData>(rows, cols, std::move(values))) {
        if (d_->values.size() != rows * cols)
            throw ShapeError("Tensor: value count " + std::to_string(d_->values.size()) +
                             " does not match " + std::to_string(rows) + "x" +
                             std::to_string(cols));
        d_->requires_grad = requires_grad;
    }

    /// 1 x n row vector.
    static Tensor row(std::vector<double> values, bool requires_grad = false) {
        std::size_t n = values.size();
        return Tensor(1, n, std::move(values), requires_grad);
    }

    std::size_t rows() const { return d_->rows; }
    std::size_t cols() const { return d_->cols; }
    std::size_t size() const { return d_->values.size(); }

    double operator()(std::size_t r, std::size_t c) const {
        return d_->values[r * d_->cols + c];
    }
    double& operator()(std::size_t r, std::size_t c) {
        return d_->values[r * d_->cols + c];
    }

    const std::vector<double>& values() const { return d_->values; }
    std::vector<double>& values() { return d_->values; }

    bool requires_grad() const { return d_->requires_grad; }
    bool has_grad() const { return !d_->grad.empty(); }

    /// Gradient entry; zero if no gradient has been accumulated yet.
    double grad_at(std::size_t r, std::size_t c) const {
        if (d_->grad.empty()) return 0.0;
        return d_->grad[r * d_->cols + c];
    }

    const std::vector<double>& grad() const {
        if (d_->grad.empty())
            throw Error("Tensor::grad: no gradient accumulated");
        return d_->grad;
    }

    /// Zeroes the gradient buffer if one exists; never allocates.
    void zero_grad() {
        if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
    }

    /// Value of a 1 x 1 tensor.
    double item() const {
        if (d_->rows != 1 || d_->cols != 1)
            throw ShapeError("Tensor::item: tensor is " + shape_str() + ", not 1x1");
        return d_->values[0];
    }

    /// Deep copy of the values; the copy shares nothing with the original.
    Tensor clone() const {
        return Tensor(d_->rows, d_->cols, d_->values, d_->requires_grad);
    }

    std::string shape_str() const {
        return std::to_string(d_->rows) + "x" + std::to_string(d_->cols);
    }

    const std::shared_ptr<detail::TensorData>& data() const { return d_; }

private:
    std::shared_ptr<detail::TensorData> d_;
};

/// Records the forward pass as a list of backward rules. Append order is
/// topological by construction (an op's inputs exist before its output), so
/// one reverse sweep propagates every gradient, visiting each node once.
/// Construct with recording = false for evaluation passes; no nodes are
/// appended and outputs carry requires_grad = false.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    struct Node {
        std::vector<std::shared_ptr<detail::TensorData>> inputs;
        std::shared_ptr<detail::TensorData> output;
        std::function<void()> backward;
    };

    void record(Node node) { nodes_.push_back(std::move(node)); }

    /// Seeds d(loss)/d(loss) = 1 and runs all backward rules in reverse
    /// append order. Gradients accumulate additively into every tensor
    /// reachable from the loss that has requires_grad set.
    void backward(const Tensor& loss) {
        if (loss.rows() != 1 || loss.cols() != 1)
            throw ShapeError("Tape::backward: loss is " + loss.shape_str() +
                             ", expected 1x1 scalar");
        loss.data()->ensure_grad();
        loss.data()->grad[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            it->backward();
    }

private:
    std::vector<Node> nodes_;
    bool recording_ = true;
};

namespace detail {

inline bool tracks(const Tape& tape, const Tensor& a) {
    return tape.recording() && a.requires_grad();
}
inline bool tracks(const Tape& tape, const Tensor& a, const Tensor& b) {
    return tape.recording() && (a.requires_grad() || b.requires_grad());
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shapes " + a.shape_str() + " and " +
                         b.shape_str() + " differ");
}

} // namespace detail

/// C = A * B.
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions of " + a.shape_str() + " and " +
                         b.shape_str() + " do not match");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out(m, n, 0.0, detail::tracks(tape, a, b));
    detail::gemm(false, false, m, n, k, 1.0,
                 a.values().data(), k, b.values().data(), n,
                 0.0, out.values().data(), n);
    if (out.requires_grad()) {
        auto ad = a.data(), bd = b.data(), od = out.data();
        tape.record({{ad, bd}, od, [ad, bd, od, m, n, k] {
            const double* g = od->grad.data();
            if (ad->requires_grad) {
                ad->ensure_grad();
                // dA += G * B^T
                detail::gemm(false, true, m, k, n, 1.0, g, n,
                             bd->values.data(), n, 1.0, ad->grad.data(), k);
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                // dB += A^T * G
                detail::gemm(true, false, k, n, m, 1.0, ad->values.data(), k,
                             g, n, 1.0, bd->grad.data(), n);
            }
        }});
    }
    return out;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::check_same_shape("add", a, b);
    Tensor out(a.rows(), a.cols(), 0.0, detail::tracks(tape, a, b));
    for (std::size_t i = 0; i < a.size(); ++i)
        out.values()[i] = a.values()[i] + b.values()[i];
    if (out.requires_grad()) {
        auto ad = a.data(), bd = b.data(), od = out.data();
        tape.record({{ad, bd}, od, [ad, bd, od] {
            for (auto* t : {ad.get(), bd.get()}) {
                if (!t->requires_grad) continue;
                t->ensure_grad();
                for (std::size_t i = 0; i < t->grad.size(); ++i)
                    t->grad[i] += od->grad[i];
            }
        }});
    }
    return out;
}

inline Tensor subtract(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::check_same_shape("subtract", a, b);
    Tensor out(a.rows(), a.cols(), 0.0, detail::tracks(tape, a, b));
    for (std::size_t i = 0; i < a.size(); ++i)
        out.values()[i] = a.values()[i] - b.values()[i];
    if (out.requires_grad()) {
        auto ad = a.data(), bd = b.data(), od = out.data();
        tape.record({{ad, bd}, od, [ad, bd, od] {
            if (ad->requires_grad) {
                ad->ensure_grad();
                for (std::size_t i = 0; i < ad->grad.size(); ++i)
                    ad->grad[i] += od->grad[i];
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                for (std::size_t i = 0; i < bd->grad.size(); ++i)
                    bd->grad[i] -= od->grad[i];
            }
        }});
    }
    return out;
}

inline Tensor scale(Tape& tape, const Tensor& a, double s) {
    Tensor out(a.rows(), a.cols(), 0.0, detail::tracks(tape, a));
    for (std::size_t i = 0; i < a.size(); ++i)
        out.values()[i] = s * a.values()[i];
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        tape.record({{ad}, od, [ad, od, s] {
            ad->ensure_grad();
            for (std::size_t i = 0; i < ad->grad.size(); ++i)
                ad->grad[i] += s * od->grad[i];
        }});
    }
    return out;
}

inline Tensor transpose(Tape& tape, const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out(n, m, 0.0, detail::tracks(tape, a));
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c)
            out(c, r) = a(r, c);
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        tape.record({{ad}, od, [ad, od, m, n] {
            ad->ensure_grad();
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c)
                    ad->grad[r * n + c] += od->grad[c * m + r];
        }});
    }
    return out;
}

/// out[r, c] = a[r, c] + b[0, c]; b is a 1 x cols row vector.
inline Tensor add_row_broadcast(Tape& tape, const Tensor& a, const Tensor& b) {
    if (b.rows() != 1 || b.cols() != a.cols())
        throw ShapeError("add_row_broadcast: bias is " + b.shape_str() +
                         ", expected 1x" + std::to_string(a.cols()));
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out(m, n, 0.0, detail::tracks(tape, a, b));
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c)
            out(r, c) = a(r, c) + b(0, c);
    if (out.requires_grad()) {
        auto ad = a.data(), bd = b.data(), od = out.data();
        tape.record({{ad, bd}, od, [ad, bd, od, m, n] {
            if (ad->requires_grad) {
                ad->ensure_grad();
                for (std::size_t i = 0; i < m * n; ++i)
                    ad->grad[i] += od->grad[i];
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < n; ++c)
                        bd->grad[c] += od->grad[r * n + c];
            }
        }});
    }
    return out;
}

/// Applies f entrywise. df must be the derivative of f as a function of the
/// input value; the backward rule is dx += g * df(x).
template <class F, class DF>
inline Tensor elementwise(Tape& tape, const Tensor& a, F f, DF df) {
    Tensor out(a.rows(), a.cols(), 0.0, detail::tracks(tape, a));
    for (std::size_t i = 0; i < a.size(); ++i)
        out.values()[i] = f(a.values()[i]);
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        tape.record({{ad}, od, [ad, od, df] {
            ad->ensure_grad();
            for (std::size_t i = 0; i < ad->grad.size(); ++i)
                ad->grad[i] += od->grad[i] * df(ad->values[i]);
        }});
    }
    return out;
}

/// Row-wise softmax, shifted by the row max so exp never overflows.
inline Tensor softmax_rows(Tape& tape, const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    if (n == 0) throw ShapeError("softmax_rows: zero columns");
    Tensor out(m, n, 0.0, detail::tracks(tape, a));
    for (std::size_t r = 0; r < m; ++r) {
        double mx = a(r, 0);
        for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, a(r, c));
        double z = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            double e = std::exp(a(r, c) - mx);
            out(r, c) = e;
            z += e;
        }
        for (std::size_t c = 0; c < n; ++c) out(r, c) /= z;
    }
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        tape.record({{ad}, od, [ad, od, m, n] {
            ad->ensure_grad();
            for (std::size_t r = 0; r < m; ++r) {
                const double* s = od->values.data() + r * n;
                const double* g = od->grad.data() + r * n;
                double dot = 0.0;
                for (std::size_t c = 0; c < n; ++c) dot += s[c] * g[c];
                for (std::size_t c = 0; c < n; ++c)
                    ad->grad[r * n + c] += s[c] * (g[c] - dot);
            }
        }});
    }
    return out;
}

/// Mean negative log-likelihood over the masked rows, fused with a stable
/// log-softmax. labels[i] is only read where mask[i] is set.
inline Tensor cross_entropy(Tape& tape, const Tensor& logits,
                            const std::vector<int>& labels,
                            const std::vector<std::uint8_t>& mask) {
    const std::size_t m = logits.rows(), n = logits.cols();
    if (labels.size() != m || mask.size() != m)
        throw ShapeError("cross_entropy: logits have " + std::to_string(m) +
                         " rows, labels " + std::to_string(labels.size()) +
                         ", mask " + std::to_string(mask.size()));
    std::vector<std::size_t> picked;
    for (std::size_t r = 0; r < m; ++r)
        if (mask[r]) picked.push_back(r);
    if (picked.empty())
        throw ConfigError("cross_entropy: mask selects no rows");

    // Softmax probabilities of the masked rows, kept for the backward rule.
    auto probs = std::make_shared<std::vector<double>>(picked.size() * n);
    double total = 0.0;
    for (std::size_t j = 0; j < picked.size(); ++j) {
        std::size_t r = picked[j];
        int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= n)
            throw ConfigError("cross_entropy: label " + std::to_string(y) +
                              " out of range at row " + std::to_string(r));
        double mx = logits(r, 0);
        for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, logits(r, c));
        double z = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            double e = std::exp(logits(r, c) - mx);
            (*probs)[j * n + c] = e;
            z += e;
        }
        for (std::size_t c = 0; c < n; ++c) (*probs)[j * n + c] /= z;
        total += (mx + std::log(z)) - logits(r, static_cast<std::size_t>(y));
    }
    const double inv = 1.0 / static_cast<double>(picked.size());
    Tensor out(1, 1, total * inv, detail::tracks(tape, logits));
    if (out.requires_grad()) {
        auto ld = logits.data(), od = out.data();
        auto rows_p = std::make_shared<std::vector<std::size_t>>(std::move(picked));
        auto labels_p = std::make_shared<std::vector<int>>(labels);
        tape.record({{ld}, od, [ld, od, rows_p, labels_p, probs, n, inv] {
            ld->ensure_grad();
            const double g = od->grad[0] * inv;
            for (std::size_t j = 0; j < rows_p->size(); ++j) {
                std::size_t r = (*rows_p)[j];
                auto y = static_cast<std::size_t>((*labels_p)[r]);
                for (std::size_t c = 0; c < n; ++c) {
                    double p = (*probs)[j * n + c];
                    ld->grad[r * n + c] += g * (p - (c == y ? 1.0 : 0.0));
                }
            }
        }});
    }
    return out;
}

/// Sum of all entries, as a 1 x 1 tensor.
inline Tensor sum(Tape& tape, const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    Tensor out(1, 1, total, detail::tracks(tape, a));
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        tape.record({{ad}, od, [ad, od] {
            ad->ensure_grad();
            for (std::size_t i = 0; i < ad->grad.size(); ++i)
                ad->grad[i] += od->grad[0];
        }});
    }
    return out;
}

/// Column means, as a 1 x cols row vector.
inline Tensor mean_rows(Tape& tape, const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    if (m == 0) throw ShapeError("mean_rows: zero rows");
    Tensor out(1, n, 0.0, detail::tracks(tape, a));
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c)
            out(0, c) += a(r, c);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t c = 0; c < n; ++c) out(0, c) *= inv;
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        tape.record({{ad}, od, [ad, od, m, n, inv] {
            ad->ensure_grad();
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c)
                    ad->grad[r * n + c] += od->grad[c] * inv;
        }});
    }
    return out;
}

/// [a | b] side by side; row counts must match.
inline Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows())
        throw ShapeError("concat_cols: row counts of " + a.shape_str() + " and " +
                         b.shape_str() + " differ");
    const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
    Tensor out(m, na + nb, 0.0, detail::tracks(tape, a, b));
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < na; ++c) out(r, c) = a(r, c);
        for (std::size_t c = 0; c < nb; ++c) out(r, na + c) = b(r, c);
    }
    if (out.requires_grad()) {
        auto ad = a.data(), bd = b.data(), od = out.data();
        tape.record({{ad, bd}, od, [ad, bd, od, m, na, nb] {
            if (ad->requires_grad) {
                ad->ensure_grad();
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < na; ++c)
                        ad->grad[r * na + c] += od->grad[r * (na + nb) + c];
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < nb; ++c)
                        bd->grad[r * nb + c] += od->grad[r * (na + nb) + na + c];
            }
        }});
    }
    return out;
}

/// <A, B> = sum of entrywise products, as a 1 x 1 tensor.
inline Tensor frobenius_inner_product(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::check_same_shape("frobenius_inner_product", a, b);
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        total += a.values()[i] * b.values()[i];
    Tensor out(1, 1, total, detail::tracks(tape, a, b));
    if (out.requires_grad()) {
        auto ad = a.data(), bd = b.data(), od = out.data();
        tape.record({{ad, bd}, od, [ad, bd, od] {
            const double g = od->grad[0];
            if (ad->requires_grad) {
                ad->ensure_grad();
                for (std::size_t i = 0; i < ad->grad.size(); ++i)
                    ad->grad[i] += g * bd->values[i];
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                for (std::size_t i = 0; i < bd->grad.size(); ++i)
                    bd->grad[i] += g * ad->values[i];
            }
        }});
    }
    return out;
}

/// Inverted dropout: kept entries are scaled by 1 / (1 - rate) so the
/// expectation is unchanged. rate = 0 returns the input untouched. The rng is
/// consumed in row-major order, one draw per entry.
inline Tensor dropout(Tape& tape, const Tensor& a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout: rate " + std::to_string(rate) +
                          " outside [0, 1)");
    if (rate == 0.0) return a;
    const double keep_scale = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<std::vector<std::uint8_t>>(a.size());
    Tensor out(a.rows(), a.cols(), 0.0, detail::tracks(tape, a));
    for (std::size_t i = 0; i < a.size(); ++i) {
        bool keep = rng.uniform() >= rate;
        (*mask)[i] = keep;
        out.values()[i] = keep ? a.values()[i] * keep_scale : 0.0;
    }
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        tape.record({{ad}, od, [ad, od, mask, keep_scale] {
            ad->ensure_grad();
            for (std::size_t i = 0; i < ad->grad.size(); ++i)
                if ((*mask)[i]) ad->grad[i] += od->grad[i] * keep_scale;
        }});
    }
    return out;
}

/// Index of the largest entry in each row; ties resolve to the lowest index.
inline std::vector<std::size_t> argmax_rows(const Tensor& a) {
    if (a.cols() == 0) throw ShapeError("argmax_rows: zero columns");
    std::vector<std::size_t> idx(a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < a.cols(); ++c)
            if (a(r, c) > a(r, best)) best = c;
        idx[r] = best;
    }
    return idx;
}

} // namespace bgnn
