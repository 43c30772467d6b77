#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <string>
#include <vector>

#include "medit/error.hpp"
#include "medit/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace medit {

// Global worker count for the row-parallel kernels. All parallel loops split
// over independent output rows, so results are bitwise identical for any
// thread count.
inline int& thread_count_ref() {
    static int n = 1;
    return n;
}

inline void set_num_threads(int n) { thread_count_ref() = n < 1 ? 1 : n; }
inline int num_threads() { return thread_count_ref(); }

// Dense row-major double matrix. The whole editing path runs in double
// precision.
struct Mat {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double* row(size_t i) { return data.data() + i * cols; }
    const double* row(size_t i) const { return data.data() + i * cols; }
    double& at(size_t i, size_t j) { return data[i * cols + j]; }
    double at(size_t i, size_t j) const { return data[i * cols + j]; }

    void zero() { std::memset(data.data(), 0, data.size() * sizeof(double)); }

    // Reshape keeping the underlying capacity; contents are unspecified.
    void resize(size_t r, size_t c) {
        rows = r;
        cols = c;
        data.resize(r * c);
    }

    void resize_zero(size_t r, size_t c) {
        resize(r, c);
        zero();
    }

    void fill_normal(Rng& rng, double stddev) {
        for (double& x : data) x = rng.normal(0.0, stddev);
    }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double x : data) {
            if (!std::isfinite(x)) return false;
        }
        return true;
    }
};

inline void check_shape(bool ok, const char* what) {
    if (!ok) throw PipelineError(std::string("shape mismatch in ") + what);
}

inline double dot_ptr(const double* a, const double* b, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

// C = A * B. Four A-rows per pass so each streamed B row is reused; cuts
// memory traffic enough that the 2-core parallel split actually pays.
inline void matmul(const Mat& a, const Mat& b, Mat& c) {
    check_shape(a.cols == b.rows, "matmul");
    c.resize(a.rows, b.cols);
    const size_t M = a.rows, K = a.cols, N = b.cols;
    const size_t MB = (M + 3) / 4;
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1 && MB > 1)
    for (size_t ib = 0; ib < MB; ++ib) {
        const size_t i0 = ib * 4;
        const size_t ilim = std::min(M, i0 + 4);
        for (size_t i = i0; i < ilim; ++i) std::memset(c.row(i), 0, N * sizeof(double));
        if (ilim - i0 == 4) {
            double* c0 = c.row(i0);
            double* c1 = c.row(i0 + 1);
            double* c2 = c.row(i0 + 2);
            double* c3 = c.row(i0 + 3);
            const double* a0 = a.row(i0);
            const double* a1 = a.row(i0 + 1);
            const double* a2 = a.row(i0 + 2);
            const double* a3 = a.row(i0 + 3);
            for (size_t k = 0; k < K; ++k) {
                const double* bk = b.row(k);
                const double x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
                for (size_t j = 0; j < N; ++j) {
                    const double bj = bk[j];
                    c0[j] += x0 * bj;
                    c1[j] += x1 * bj;
                    c2[j] += x2 * bj;
                    c3[j] += x3 * bj;
                }
            }
        } else {
            for (size_t i = i0; i < ilim; ++i) {
                double* ci = c.row(i);
                const double* ai = a.row(i);
                for (size_t k = 0; k < K; ++k) {
                    const double aik = ai[k];
                    const double* bk = b.row(k);
                    for (size_t j = 0; j < N; ++j) ci[j] += aik * bk[j];
                }
            }
        }
    }
}

// C = A * B^T. Routed through a transposed scratch copy of B so the hot loop
// is the vectorizable output-parallel form; the strict left-to-right
// reduction of the dot-product form cannot use SIMD without reassociation.
inline void matmul_nt(const Mat& a, const Mat& b, Mat& c) {
    check_shape(a.cols == b.cols, "matmul_nt");
    const size_t N = b.rows, K = b.cols;
    thread_local Mat scratch;
    scratch.resize(K, N);
    constexpr size_t TB = 32;
    for (size_t j0 = 0; j0 < N; j0 += TB) {
        const size_t j1 = std::min(N, j0 + TB);
        for (size_t k0 = 0; k0 < K; k0 += TB) {
            const size_t k1 = std::min(K, k0 + TB);
            for (size_t j = j0; j < j1; ++j) {
                const double* bj = b.row(j);
                for (size_t k = k0; k < k1; ++k) scratch.at(k, j) = bj[k];
            }
        }
    }
    matmul(a, scratch, c);
}

// C += A^T * B, used for weight-gradient accumulation. Each 4-row C block
// stays hot while B streams once per block.
inline void matmul_tn_acc(const Mat& a, const Mat& b, Mat& c) {
    check_shape(a.rows == b.rows, "matmul_tn_acc");
    check_shape(c.rows == a.cols && c.cols == b.cols, "matmul_tn_acc out");
    const size_t M = a.cols, K = a.rows, N = b.cols;
    const size_t MB = (M + 3) / 4;
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1 && MB > 1)
    for (size_t ib = 0; ib < MB; ++ib) {
        const size_t i0 = ib * 4;
        const size_t ni = std::min<size_t>(4, M - i0);
        if (ni == 4) {
            double* c0 = c.row(i0);
            double* c1 = c.row(i0 + 1);
            double* c2 = c.row(i0 + 2);
            double* c3 = c.row(i0 + 3);
            for (size_t k = 0; k < K; ++k) {
                const double* ak = a.row(k) + i0;
                const double* bk = b.row(k);
                const double x0 = ak[0], x1 = ak[1], x2 = ak[2], x3 = ak[3];
                for (size_t j = 0; j < N; ++j) {
                    const double bj = bk[j];
                    c0[j] += x0 * bj;
                    c1[j] += x1 * bj;
                    c2[j] += x2 * bj;
                    c3[j] += x3 * bj;
                }
            }
        } else {
            for (size_t i = i0; i < i0 + ni; ++i) {
                double* ci = c.row(i);
                for (size_t k = 0; k < K; ++k) {
                    const double aki = a.at(k, i);
                    const double* bk = b.row(k);
                    for (size_t j = 0; j < N; ++j) ci[j] += aki * bk[j];
                }
            }
        }
    }
}

inline Mat transpose(const Mat& a) {
    Mat t(a.cols, a.rows);
    for (size_t i = 0; i < a.rows; ++i) {
        for (size_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    }
    return t;
}

inline double frobenius_norm(const Mat& a) {
    double s = 0.0;
    for (double x : a.data) s += x * x;
    return std::sqrt(s);
}

inline double max_abs(const Mat& a) {
    double m = 0.0;
    for (double x : a.data) m = std::max(m, std::abs(x));
    return m;
}

inline void axpy(double alpha, const Mat& x, Mat& y) {
    check_shape(x.same_shape(y), "axpy");
    for (size_t i = 0; i < x.data.size(); ++i) y.data[i] += alpha * x.data[i];
}

// In-place lower Cholesky factorization of an SPD matrix. Returns false if a
// non-positive pivot is met.
inline bool cholesky_factor(Mat& a) {
    check_shape(a.rows == a.cols, "cholesky");
    const size_t n = a.rows;
    for (size_t j = 0; j < n; ++j) {
        double diag = a.at(j, j);
        for (size_t k = 0; k < j; ++k) diag -= a.at(j, k) * a.at(j, k);
        if (!(diag > 0.0) || !std::isfinite(diag)) return false;
        const double ljj = std::sqrt(diag);
        a.at(j, j) = ljj;
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1 && n - j > 64)
        for (size_t i = j + 1; i < n; ++i) {
            double s = a.at(i, j);
            const double* ri = a.row(i);
            const double* rj = a.row(j);
            for (size_t k = 0; k < j; ++k) s -= ri[k] * rj[k];
            a.at(i, j) = s / ljj;
        }
    }
    // zero the strict upper triangle so the factor is clean
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) a.at(i, j) = 0.0;
    }
    return true;
}

// Solves A * x = b given the lower Cholesky factor L of A (A = L L^T).
inline void cholesky_solve_vec(const Mat& l, const double* b, double* x) {
    const size_t n = l.rows;
    // forward: L y = b
    for (size_t i = 0; i < n; ++i) {
        double s = b[i];
        const double* li = l.row(i);
        for (size_t k = 0; k < i; ++k) s -= li[k] * x[k];
        x[i] = s / li[i];
    }
    // backward: L^T x = y
    for (size_t ii = n; ii-- > 0;) {
        double s = x[ii];
        for (size_t k = ii + 1; k < n; ++k) s -= l.at(k, ii) * x[k];
        x[ii] = s / l.at(ii, ii);
    }
}

// Solves X * A = B for X with A SPD (right division through the symmetric
// factorization: each row of X solves A x = b_row).
inline bool spd_right_solve(Mat a, const Mat& b, Mat& x) {
    check_shape(a.rows == a.cols && b.cols == a.rows, "spd_right_solve");
    if (!cholesky_factor(a)) return false;
    x.resize(b.rows, b.cols);
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1 && b.rows > 1)
    for (size_t i = 0; i < b.rows; ++i) cholesky_solve_vec(a, b.row(i), x.row(i));
    return true;
}

// ---- small vector helpers over raw spans ----

inline double dot(const double* a, const double* b, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const double* a, size_t n) { return std::sqrt(dot(a, a, n)); }

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    check_shape(a.size() == b.size(), "cosine_similarity");
    double na = norm2(a.data(), a.size());
    double nb = norm2(b.data(), b.size());
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a.data(), b.data(), a.size()) / (na * nb);
}

}  // namespace medit
