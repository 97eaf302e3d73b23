#pragma once

// Small dense linear algebra kit used throughout the project. Everything is
// double precision and row-major; shapes are carried explicitly so the
// verification suites can cross-check dimensions cheaply.

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace softstack {

// 64-byte aligned allocator for all numeric buffers. Uniform alignment keeps
// the vectorized kernels on one code path for every allocation, so repeated
// calls on equal inputs are bit-identical (the purity contract) even with
// FMA contraction enabled.
template <typename T, std::size_t Align = 64>
struct AlignedAlloc {
    using value_type = T;
    template <typename U>
    struct rebind {
        using other = AlignedAlloc<U, Align>;
    };
    AlignedAlloc() noexcept = default;
    template <typename U>
    AlignedAlloc(const AlignedAlloc<U, Align>&) noexcept {}
    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Align}));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{Align}); }
    template <typename U>
    bool operator==(const AlignedAlloc<U, Align>&) const noexcept { return true; }
};

using Vec = std::vector<double, AlignedAlloc<double>>;

struct Mat {
    int rows = 0;
    int cols = 0;
    Vec a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
    double* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }
    size_t size() const { return a.size(); }
    void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

inline bool all_finite(const double* p, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) return false;
    }
    return true;
}

inline bool all_finite(const Vec& v) { return all_finite(v.data(), v.size()); }
inline bool all_finite(const Mat& m) { return all_finite(m.a.data(), m.a.size()); }

// out = M x   (M: r x c, x: c, out: r)
inline void matvec(const Mat& m, const double* x, double* out) {
    for (int r = 0; r < m.rows; ++r) {
        const double* __restrict__ mr = m.row(r);
        double s = 0.0;
        for (int c = 0; c < m.cols; ++c) s += mr[c] * x[c];
        out[r] = s;
    }
}

// out += M^T g   (M: r x c, g: r, out: c)
inline void matvec_t_acc(const Mat& m, const double* g, double* out) {
    for (int r = 0; r < m.rows; ++r) {
        const double* __restrict__ mr = m.row(r);
        const double gr = g[r];
        if (gr == 0.0) continue;
        for (int c = 0; c < m.cols; ++c) out[c] += gr * mr[c];
    }
}

// gM += g x^T   (outer product accumulate; gM: r x c, g: r, x: c)
inline void outer_acc(Mat& gm, const double* g, const double* x) {
    for (int r = 0; r < gm.rows; ++r) {
        double* __restrict__ row = gm.row(r);
        const double gr = g[r];
        if (gr == 0.0) continue;
        for (int c = 0; c < gm.cols; ++c) row[c] += gr * x[c];
    }
}

// C (M x N) = A (M x K) * B^T where B is N x K. Row-major friendly: both A's
// rows and B's rows are contiguous, so the inner loop is a dot product.
inline void matmul_bt(const Mat& a, const Mat& b, Mat& c) {
    assert(a.cols == b.cols);
    c = Mat(a.rows, b.rows);
    for (int m = 0; m < a.rows; ++m) {
        const double* __restrict__ ar = a.row(m);
        double* __restrict__ cr = c.row(m);
        for (int n = 0; n < b.rows; ++n) {
            const double* __restrict__ br = b.row(n);
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) s += ar[k] * br[k];
            cr[n] = s;
        }
    }
}

// C (M x N) = A (M x K) * B (K x N)
inline void matmul_nn(const Mat& a, const Mat& b, Mat& c) {
    assert(a.cols == b.rows);
    c = Mat(a.rows, b.cols);
    for (int m = 0; m < a.rows; ++m) {
        const double* __restrict__ ar = a.row(m);
        double* __restrict__ cr = c.row(m);
        for (int k = 0; k < a.cols; ++k) {
            const double av = ar[k];
            if (av == 0.0) continue;
            const double* __restrict__ br = b.row(k);
            for (int n = 0; n < b.cols; ++n) cr[n] += av * br[n];
        }
    }
}

// C (K x N) += A^T (K x T) * B (T x N) where A is T x K.
inline void matmul_tn_acc(const Mat& a, const Mat& b, Mat& c) {
    assert(a.rows == b.rows);
    assert(c.rows == a.cols && c.cols == b.cols);
    for (int t = 0; t < a.rows; ++t) {
        const double* __restrict__ ar = a.row(t);
        const double* __restrict__ br = b.row(t);
        for (int k = 0; k < a.cols; ++k) {
            const double av = ar[k];
            if (av == 0.0) continue;
            double* __restrict__ cr = c.row(k);
            for (int n = 0; n < b.cols; ++n) cr[n] += av * br[n];
        }
    }
}

inline int argmax(const double* x, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i) {
        if (x[i] > x[best]) best = i;
    }
    return best;
}

inline double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline void axpy(double alpha, const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// In-place softmax over n entries.
inline void softmax_inplace(double* x, int n) {
    double mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        z += x[i];
    }
    const double inv = 1.0 / z;
    for (int i = 0; i < n; ++i) x[i] *= inv;
}

// Given p = softmax(z) and dL/dp, accumulate dL/dz into gz.
inline void softmax_backward_acc(const double* p, const double* gp, double* gz, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += p[i] * gp[i];
    for (int i = 0; i < n; ++i) gz[i] += p[i] * (gp[i] - s);
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

// Deterministic RNG. std::mt19937_64 for the stream; the uniform/normal
// transforms are pinned here rather than left to the standard library so
// that sample streams are reproducible bit-for-bit.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return state_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(state_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(state_() % span);
    }

    // Box-Muller; one fresh sample per call (no cached spare, keeps replay trivial).
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Derive an independent stream (for per-sample / per-trial parallelism).
    Rng split(uint64_t salt) {
        uint64_t x = state_() ^ (0x9e3779b97f4a7c15ULL * (salt + 1));
        x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27; x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return Rng(x);
    }

private:
    std::mt19937_64 state_;
};

} // namespace softstack
