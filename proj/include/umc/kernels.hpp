#pragma once

// Dense matmul kernels. Each kernel exists in a serial reference form and an
// OpenMP form parallelized over output rows; the inner accumulation order is
// identical, so both produce bitwise-equal results and runs stay reproducible
// under any thread count. Dispatch is runtime-switchable for tests and the
// benchmark target.

namespace umc::kernels {

bool parallel_enabled();
void set_parallel(bool on);

// C[m x n] = A[m x k] * B[k x n]; acc adds into C instead of overwriting.
void mm_nn_serial(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
void mm_nn_serial(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
void mm_nn_parallel(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
void mm_nn_parallel(const double* a, const double* b, double* c, int m, int k, int n, bool acc);

// C[m x n] = A[m x k] * B[n x k]^T
void mm_nt_serial(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
void mm_nt_serial(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
void mm_nt_parallel(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
void mm_nt_parallel(const double* a, const double* b, double* c, int m, int k, int n, bool acc);

// C[k x n] = A[m x k]^T * B[m x n]
void mm_tn_serial(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
void mm_tn_serial(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
void mm_tn_parallel(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
void mm_tn_parallel(const double* a, const double* b, double* c, int m, int k, int n, bool acc);

template <typename T>
inline void mm_nn(const T* a, const T* b, T* c, int m, int k, int n, bool acc = false) {
    if (parallel_enabled()) mm_nn_parallel(a, b, c, m, k, n, acc);
    else mm_nn_serial(a, b, c, m, k, n, acc);
}

template <typename T>
inline void mm_nt(const T* a, const T* b, T* c, int m, int k, int n, bool acc = false) {
    if (parallel_enabled()) mm_nt_parallel(a, b, c, m, k, n, acc);
    else mm_nt_serial(a, b, c, m, k, n, acc);
}

template <typename T>
inline void mm_tn(const T* a, const T* b, T* c, int m, int k, int n, bool acc = false) {
    if (parallel_enabled()) mm_tn_parallel(a, b, c, m, k, n, acc);
    else mm_tn_serial(a, b, c, m, k, n, acc);
}

}  // namespace umc::kernels
