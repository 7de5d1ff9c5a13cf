#pragma once

// Independent re-derivations the test suite checks library results against.
// Everything here is deliberately naive: plain loops, no shared code with the
// implementations under test. High-precision constants were computed once
// with an arbitrary-precision calculator and frozen.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "bgnn/rng.hpp"
#include "bgnn/sparse.hpp"
#include "bgnn/tensor.hpp"

namespace oracle {

// softmax([1, 2, 3])
inline constexpr double kSoftmax123[3] = {0.090030573170380457998,
                                          0.24472847105479765247,
                                          0.66524095577482188953};
// cross entropy of the single row [1, 2, 3] against label 0
inline constexpr double kCrossEntropy123Label0 = 2.4076059644443803045;

inline constexpr double kArtanhHalf = 0.5493061443340548457; // artanh(0.5)
// artanh of the binary64 value of 1.0 - 1e-6 (the conditioning of artanh near
// 1 makes the representation error of the argument visible at 1e-11)
inline constexpr double kArtanhNearOne = 7.2543286192476693673;
inline constexpr double kTanOne = 1.5574077246549022305;         // tan(1)
inline constexpr double kLogEMinusOne = 0.54132485461291810898;  // ln(e - 1)

// Bregman distances between scalars, one per activation pair
inline constexpr double kDistTanh_03_05 = 0.024749734450986861214;   // p=0.3  q=0.5
inline constexpr double kDistArctan_02_m04 = 0.19158168522024997672; // p=0.2  q=-0.4
inline constexpr double kDistSoftplus_2_07 = 1.2999419977073715737;  // p=2.0  q=0.7
inline constexpr double kDistLeakyRelu_m03_04 = 0.425;               // p=-0.3 q=0.4
// integral of ln(e^y - 1) over [1, 2]: softplus potential difference
inline constexpr double kSoftplusPotential2Minus1 = 1.2314582945419919094;

inline constexpr double kInvSqrt6 = 0.40824829046386301637;
inline constexpr double kGlorotBound16x16 = 0.43301270189221932338; // sqrt(6/32)

// expected homophily of an SBM block model with equal classes: see test
inline constexpr double kSbmHomophilyPin05Pout005C3 = 0.76923076923076923077;

// triple-loop matrix product, no BLAS
inline std::vector<double> naive_matmul(const std::vector<double>& a,
                                        const std::vector<double>& b, std::size_t m,
                                        std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t t = 0; t < k; ++t)
                c[i * n + j] += a[i * k + t] * b[t * n + j];
    return c;
}

// sparse matrix densified entry by entry
inline std::vector<double> densify(const bgnn::SparseMatrix& a) {
    const std::size_t n = a.size();
    std::vector<double> dense(n * n, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = a.row_begin(r); k < a.row_end(r); ++k)
            dense[r * n + a.col(k)] += a.val(k);
    return dense;
}

// one Adam update on a single scalar, straight from the update equations
struct ScalarAdam {
    double m = 0.0, v = 0.0;
    int t = 0;
    double step(double param, double grad, double lr, double wd, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8) {
        const double g = grad + wd * param;
        ++t;
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        const double mhat = m / (1.0 - std::pow(beta1, t));
        const double vhat = v / (1.0 - std::pow(beta2, t));
        return param - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

inline bgnn::Tensor random_tensor(bgnn::Rng& rng, std::size_t rows, std::size_t cols,
                                  double lo, double hi, bool requires_grad = true) {
    bgnn::Tensor t(rows, cols, 0.0, requires_grad);
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

/// Scratch directory under the system temp root, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    TempDir() {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() /
               ("bgnn_test_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    operator const std::filesystem::path&() const { return path; }
};

struct GradCheckResult {
    bool ok = true;
    double worst_rel_err = 0.0;
    std::string detail; // empty when ok
};

/// Checks autodiff against central finite differences for a scalar-valued
/// computation. `loss_fn` must rebuild the computation from the inputs'
/// current values on every call (it runs many times with perturbed entries).
/// Comparison is relative to max(1, |gradient|): the acceptance threshold
/// for full models is 1e-3, unit tests use tighter tolerances.
inline GradCheckResult check_gradients(
    std::vector<bgnn::Tensor> inputs,
    const std::function<bgnn::Tensor(bgnn::Tape&)>& loss_fn, double rel_tol = 1e-6,
    double step = 1e-5) {
    using namespace bgnn;
    Tape tape;
    Tensor loss = loss_fn(tape);
    tape.backward(loss);

    GradCheckResult result;
    for (std::size_t which = 0; which < inputs.size(); ++which) {
        Tensor& input = inputs[which];
        for (std::size_t i = 0; i < input.size(); ++i) {
            const double saved = input.values()[i];
            Tape fwd(false);
            input.values()[i] = saved + step;
            const double f_plus = loss_fn(fwd).item();
            input.values()[i] = saved - step;
            const double f_minus = loss_fn(fwd).item();
            input.values()[i] = saved;

            const double fd = (f_plus - f_minus) / (2.0 * step);
            const double ad = input.has_grad() ? input.data()->grad[i] : 0.0;
            const double scale = std::max({1.0, std::fabs(fd), std::fabs(ad)});
            const double rel = std::fabs(fd - ad) / scale;
            result.worst_rel_err = std::max(result.worst_rel_err, rel);
            if (rel > rel_tol && result.ok) {
                result.ok = false;
                result.detail = "gradient mismatch at input " +
                                std::to_string(which) + " entry " +
                                std::to_string(i) + ": autodiff " +
                                std::to_string(ad) + " vs finite difference " +
                                std::to_string(fd);
            }
        }
    }
    return result;
}

} // namespace oracle
