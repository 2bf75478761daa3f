#pragma once

#include <cstddef>
#include <string>

namespace gcmcg::kernels {

// Leaf kernels over contiguous f64 buffers. Every entry has a scalar
// reference implementation and may have SIMD variants; the active table is
// chosen once per process at first use.
struct KernelTable {
    const char* name;
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // x *= alpha
    void (*scale)(double alpha, double* x, std::size_t n);
    void (*vadd)(const double* a, const double* b, double* out, std::size_t n);
    void (*vsub)(const double* a, const double* b, double* out, std::size_t n);
    void (*vmul)(const double* a, const double* b, double* out, std::size_t n);
    // acc += a .* b
    void (*vfma)(const double* a, const double* b, double* acc, std::size_t n);
    double (*sum)(const double* x, std::size_t n);
};

const KernelTable& scalar_table();
// nullptr when the CPU (or build) lacks AVX2.
const KernelTable* avx2_table();

// Runtime-selected table. Honors GCMCG_KERNELS=scalar|avx2 if set; otherwise
// picks the widest supported variant.
const KernelTable& active();
// Force a table (tests); pass nullptr to restore automatic selection.
void force(const KernelTable* table);
std::string active_name();

// Composite routines built on the active table.

// C[m x n] += A[m x k] * B[k x n], all row-major.
void gemm_acc(const double* A, const double* B, double* C,
              std::size_t m, std::size_t k, std::size_t n);
// out[m] = M[m x n] * v[n]
void gemv(const double* M, const double* v, double* out,
          std::size_t m, std::size_t n);
// out[n] += M^T[n x m] * v[m]  (i.e. v * M for row-major M)
void gemv_t_acc(const double* M, const double* v, double* out,
                std::size_t m, std::size_t n);

} // namespace gcmcg::kernels
