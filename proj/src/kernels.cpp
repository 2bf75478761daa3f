#include "gcmcg/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace gcmcg::kernels {

#if defined(GCMCG_HAVE_AVX2_BUILD)
const KernelTable* avx2_table_impl();
#endif

const KernelTable* avx2_table() {
#if defined(GCMCG_HAVE_AVX2_BUILD)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
        return avx2_table_impl();
#endif
    return nullptr;
}

namespace {

std::atomic<const KernelTable*> g_forced{nullptr};

const KernelTable* select() {
    if (const char* env = std::getenv("GCMCG_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return &scalar_table();
        if (std::strcmp(env, "avx2") == 0 && avx2_table()) return avx2_table();
    }
    if (const KernelTable* t = avx2_table()) return t;
    return &scalar_table();
}

} // namespace

const KernelTable& active() {
    if (const KernelTable* f = g_forced.load(std::memory_order_relaxed)) return *f;
    static const KernelTable* chosen = select();
    return *chosen;
}

void force(const KernelTable* table) { g_forced.store(table, std::memory_order_relaxed); }

std::string active_name() { return active().name; }

void gemm_acc(const double* A, const double* B, double* C,
              std::size_t m, std::size_t k, std::size_t n) {
    const KernelTable& t = active();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        double* crow = C + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double a = arow[l];
            if (a != 0.0) t.axpy(a, B + l * n, crow, n);
        }
    }
}

void gemv(const double* M, const double* v, double* out,
          std::size_t m, std::size_t n) {
    const KernelTable& t = active();
    for (std::size_t i = 0; i < m; ++i) out[i] = t.dot(M + i * n, v, n);
}

void gemv_t_acc(const double* M, const double* v, double* out,
                std::size_t m, std::size_t n) {
    const KernelTable& t = active();
    for (std::size_t i = 0; i < m; ++i) {
        if (v[i] != 0.0) t.axpy(v[i], M + i * n, out, n);
    }
}

} // namespace gcmcg::kernels
