// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense f64 kernels shared by every other module: a row-major Matrix,
// a stable softmax, Adam, a cyclic-Jacobi symmetric eigensolver, a
// central-difference gradient checker and a counter-based RNG.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace prompt_forge {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Raised when a loss, gradient or probe value stops being finite.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed or version-mismatched artifact file.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
        if (data.size() != r * c) {
            throw InvalidArgument("Matrix: data length " + std::to_string(data.size()) + " != " +
                                  std::to_string(r) + "x" + std::to_string(c));
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

inline std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

/// C = A·B.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw InvalidArgument("matmul: " + shape_str(a) + " * " + shape_str(b));
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* crow = c.data.data() + i * c.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

/// C = A·Bᵀ.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw InvalidArgument("matmul_nt: " + shape_str(a) + " * T(" + shape_str(b) + ")");
    Matrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.data.data() + j * b.cols;
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            c(i, j) = s;
        }
    }
    return c;
}

/// C = Aᵀ·B.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) throw InvalidArgument("matmul_tn: T(" + shape_str(a) + ") * " + shape_str(b));
    Matrix c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* arow = a.data.data() + k * a.cols;
        const double* brow = b.data.data() + k * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* crow = c.data.data() + i * c.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double euclidean_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

/// Max-subtracted softmax. Throws on empty input.
inline std::vector<double> softmax(std::span<const double> v) {
    if (v.empty()) throw InvalidArgument("softmax: empty input");
    const double mx = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double z = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        z += out[i];
    }
    for (double& o : out) o /= z;
    return out;
}

inline double log_sum_exp(std::span<const double> v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (double x : v) z += std::exp(x - mx);
    return mx + std::log(z);
}

// ---------------------------------------------------------------------------
// Seeded RNG
// ---------------------------------------------------------------------------

/// SplitMix64 (Steele, Lea & Flood 2014). The state is a plain counter that
/// advances by the golden-ratio increment; each draw is the finalizer mix of
/// the counter. Uniform doubles take the top 53 bits. Every draw is defined
/// by integer arithmetic alone, so sequences match on any platform.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Multiply-shift reduction.
    std::size_t below(std::size_t n) {
        if (n == 0) throw InvalidArgument("SeededRng::below: n == 0");
        const unsigned __int128 prod = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::size_t>(prod >> 64);
    }

    /// Standard normal via Box-Muller (one draw per call, no caching).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
};

/// Derives an independent sub-seed from a parent seed and a stream tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    return SeededRng::mix(seed ^ SeededRng::mix(tag + 0x632BE59BD9B4E019ULL));
}

// ---------------------------------------------------------------------------
// Content hashing (FNV-1a over bit patterns)
// ---------------------------------------------------------------------------

class Fnv1a {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= b[i];
            h_ *= 0x100000001B3ULL;
        }
    }
    void str(std::string_view s) {
        const std::uint64_t n = s.size();
        bytes(&n, sizeof n);
        bytes(s.data(), s.size());
    }
    void u64(std::uint64_t v) { bytes(&v, sizeof v); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void values(std::span<const double> v) {
        u64(v.size());
        for (double x : v) f64(x);
    }
    std::uint64_t digest() const { return h_; }

private:
    std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    std::size_t step = 0;
    std::vector<double> m;
    std::vector<double> v;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-6;

    AdamState() = default;
    AdamState(std::size_t n, double learning_rate) : m(n, 0.0), v(n, 0.0), lr(learning_rate) {}
};

/// One bias-corrected Adam update in place.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st) {
    if (params.size() != grads.size() || st.m.size() != params.size() || st.v.size() != params.size()) {
        throw InvalidArgument("adam_step: length mismatch (params " + std::to_string(params.size()) + ", grads " +
                              std::to_string(grads.size()) + ", moments " + std::to_string(st.m.size()) + ")");
    }
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        params[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
}

// ---------------------------------------------------------------------------
// Symmetric eigensolver (cyclic Jacobi)
// ---------------------------------------------------------------------------

struct EigenResult {
    std::vector<double> values;  // ascending
    Matrix vectors;              // n x k, column i pairs with values[i]
};

/// Smallest k eigenpairs of a symmetric matrix.
inline EigenResult sym_eigen(const Matrix& a, std::size_t k) {
    if (a.rows != a.cols) throw InvalidArgument("sym_eigen: matrix is " + shape_str(a) + ", not square");
    const std::size_t n = a.rows;
    if (k > n) throw InvalidArgument("sym_eigen: k > n");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(a(i, j) - a(j, i)) > 1e-10)
                throw InvalidArgument("sym_eigen: matrix not symmetric at (" + std::to_string(i) + "," +
                                      std::to_string(j) + ")");

    Matrix m = a;
    Matrix v = Matrix::identity(n);
    double scale = 0.0;
    for (double x : m.data) scale = std::max(scale, std::abs(x));
    const double tol = 1e-15 * std::max(scale, 1e-300);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off = std::max(off, std::abs(m(p, q)));
        if (off <= tol) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = m(p, q);
                if (std::abs(apq) <= tol) continue;
                const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t r = 0; r < n; ++r) {
                    const double mrp = m(r, p);
                    const double mrq = m(r, q);
                    m(r, p) = c * mrp - s * mrq;
                    m(r, q) = s * mrp + c * mrq;
                }
                for (std::size_t r = 0; r < n; ++r) {
                    const double mpr = m(p, r);
                    const double mqr = m(q, r);
                    m(p, r) = c * mpr - s * mqr;
                    m(q, r) = s * mpr + c * mqr;
                }
                for (std::size_t r = 0; r < n; ++r) {
                    const double vrp = v(r, p);
                    const double vrq = v(r, q);
                    v(r, p) = c * vrp - s * vrq;
                    v(r, q) = s * vrp + c * vrq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return m(x, x) < m(y, y); });

    EigenResult res;
    res.vectors = Matrix(n, k);
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t src = order[c];
        res.values.push_back(m(src, src));
        // Sign convention: largest-magnitude component positive.
        std::size_t arg = 0;
        for (std::size_t r = 1; r < n; ++r)
            if (std::abs(v(r, src)) > std::abs(v(arg, src)) + 1e-12) arg = r;
        const double sign = v(arg, src) < 0 ? -1.0 : 1.0;
        for (std::size_t r = 0; r < n; ++r) res.vectors(r, c) = sign * v(r, src);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Max over coordinates of |analytic - central| / max(1, |central|).
/// `coords` restricts the probe to a subset; empty means all coordinates.
inline double grad_check(const std::function<double(std::span<const double>)>& f, std::span<const double> x0,
                         std::span<const double> analytic, double h = 1e-5,
                         std::span<const std::size_t> coords = {}) {
    if (analytic.size() != x0.size()) throw InvalidArgument("grad_check: analytic gradient length mismatch");
    std::vector<double> x(x0.begin(), x0.end());
    double worst = 0.0;
    auto probe = [&](std::size_t i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("grad_check: non-finite f at coordinate " + std::to_string(i));
        const double central = (fp - fm) / (2.0 * h);
        worst = std::max(worst, std::abs(analytic[i] - central) / std::max(1.0, std::abs(central)));
    };
    if (coords.empty()) {
        for (std::size_t i = 0; i < x.size(); ++i) probe(i);
    } else {
        for (std::size_t i : coords) probe(i);
    }
    return worst;
}

}  // namespace prompt_forge
