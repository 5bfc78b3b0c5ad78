#pragma once

#include <cstdint>
#include <vector>

namespace absnet::detail {

// Small row-major matrix kernels backing matmul and the im2col convolution
// path. Loop order keeps the innermost dimension contiguous so -O3 can
// vectorize; no threading, results are bit-stable for a given binary.

/// C (MxN) = A (MxK) * B (KxN); accumulates into C when `acc`.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::int64_t M, std::int64_t K, std::int64_t N,
             bool acc = false) {
    for (std::int64_t i = 0; i < M; ++i) {
        T* ci = c + i * N;
        if (!acc)
            for (std::int64_t j = 0; j < N; ++j) ci[j] = T{};
        const T* ai = a + i * K;
        for (std::int64_t k = 0; k < K; ++k) {
            const T aik = ai[k];
            const T* bk = b + k * N;
            for (std::int64_t j = 0; j < N; ++j) ci[j] += aik * bk[j];
        }
    }
}

/// C (MxN) = A (MxK) * B^T, where B is stored (NxK). B is transposed into a
/// scratch buffer first; the nn kernel beats per-cell dot products by a wide
/// margin and B is small next to A in every call site.
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::int64_t M, std::int64_t K, std::int64_t N,
             bool acc = false) {
    std::vector<T> bt(static_cast<std::size_t>(K * N));
    for (std::int64_t j = 0; j < N; ++j)
        for (std::int64_t k = 0; k < K; ++k) bt[static_cast<std::size_t>(k * N + j)] = b[j * K + k];
    gemm_nn(a, bt.data(), c, M, K, N, acc);
}

/// C (MxN) = A^T * B, where A is stored (KxM) and B (KxN).
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::int64_t M, std::int64_t K, std::int64_t N,
             bool acc = false) {
    if (!acc)
        for (std::int64_t i = 0; i < M * N; ++i) c[i] = T{};
    for (std::int64_t k = 0; k < K; ++k) {
        const T* ak = a + k * M;
        const T* bk = b + k * N;
        for (std::int64_t i = 0; i < M; ++i) {
            const T aki = ak[i];
            T* ci = c + i * N;
            for (std::int64_t j = 0; j < N; ++j) ci[j] += aki * bk[j];
        }
    }
}

}  // namespace absnet::detail
