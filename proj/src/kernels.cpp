#include "umc/kernels.hpp"

#include <atomic>

namespace umc::kernels {

namespace {
std::atomic<bool> g_parallel{true};
}

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

namespace {

template <typename T>
void nn_row(const T* a, const T* b, T* c, int i, int k, int n, bool acc) {
    const T* ai = a + static_cast<long>(i) * k;
    T* ci = c + static_cast<long>(i) * n;
    if (!acc) {
        for (int j = 0; j < n; ++j) ci[j] = T(0);
    }
    for (int p = 0; p < k; ++p) {
        const T av = ai[p];
        if (av == T(0)) continue;
        const T* bp = b + static_cast<long>(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
}

template <typename T>
void nt_row(const T* a, const T* b, T* c, int i, int k, int n, bool acc) {
    const T* ai = a + static_cast<long>(i) * k;
    T* ci = c + static_cast<long>(i) * n;
    for (int j = 0; j < n; ++j) {
        const T* bj = b + static_cast<long>(j) * k;
        T s = T(0);
        for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
        ci[j] = acc ? ci[j] + s : s;
    }
}

template <typename T>
void tn_row(const T* a, const T* b, T* c, int r, int m, int k, int n, bool acc) {
    // row r of C = column r of A (length m) times B
    T* cr = c + static_cast<long>(r) * n;
    if (!acc) {
        for (int j = 0; j < n; ++j) cr[j] = T(0);
    }
    for (int i = 0; i < m; ++i) {
        const T av = a[static_cast<long>(i) * k + r];
        if (av == T(0)) continue;
        const T* bi = b + static_cast<long>(i) * n;
        for (int j = 0; j < n; ++j) cr[j] += av * bi[j];
    }
}

}  // namespace

#define UMC_DEFINE_KERNELS(T)                                                              \
    void mm_nn_serial(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {       \
        for (int i = 0; i < m; ++i) nn_row(a, b, c, i, k, n, acc);                         \
    }                                                                                      \
    void mm_nn_parallel(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {     \
        _Pragma("omp parallel for schedule(static)")                                       \
        for (int i = 0; i < m; ++i) nn_row(a, b, c, i, k, n, acc);                         \
    }                                                                                      \
    void mm_nt_serial(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {       \
        for (int i = 0; i < m; ++i) nt_row(a, b, c, i, k, n, acc);                         \
    }                                                                                      \
    void mm_nt_parallel(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {     \
        _Pragma("omp parallel for schedule(static)")                                       \
        for (int i = 0; i < m; ++i) nt_row(a, b, c, i, k, n, acc);                         \
    }                                                                                      \
    void mm_tn_serial(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {       \
        for (int r = 0; r < k; ++r) tn_row(a, b, c, r, m, k, n, acc);                      \
    }                                                                                      \
    void mm_tn_parallel(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {     \
        _Pragma("omp parallel for schedule(static)")                                       \
        for (int r = 0; r < k; ++r) tn_row(a, b, c, r, m, k, n, acc);                      \
    }

UMC_DEFINE_KERNELS(float)
UMC_DEFINE_KERNELS(double)

#undef UMC_DEFINE_KERNELS

}  // namespace umc::kernels
