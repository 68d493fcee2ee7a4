#include "numerics/gemm.hpp"

#include <algorithm>
#include <vector>

namespace stylecode::nn {

namespace {

template <typename T>
void transpose_into(const T* src, std::size_t rows, std::size_t cols, std::vector<T>& dst) {
    dst.resize(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// C += A[m,k] B[k,n]. Rows are processed four at a time to reuse each B row;
// every C element still accumulates over p in order, so results match the
// plain triple loop bit for bit.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        T* c0 = c + i * n;
        T* c1 = c0 + n;
        T* c2 = c1 + n;
        T* c3 = c2 + n;
        const T* a0 = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
            const T* __restrict bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                const T bv = bp[j];
                c0[j] += v0 * bv;
                c1[j] += v1 * bv;
                c2[j] += v2 * bv;
                c3[j] += v3 * bv;
            }
        }
    }
    for (; i < m; ++i) {
        T* ci = c + i * n;
        const T* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            const T* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C += A^T B with A stored [k,m]. Four p steps per pass, applied in order.
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
        const T* ap = a + p * m;
        const T* __restrict b0 = b + p * n;
        const T* __restrict b1 = b0 + n;
        const T* __restrict b2 = b1 + n;
        const T* __restrict b3 = b2 + n;
        for (std::size_t i = 0; i < m; ++i) {
            const T v0 = ap[i], v1 = ap[m + i], v2 = ap[2 * m + i], v3 = ap[3 * m + i];
            T* __restrict ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                T acc = ci[j];
                acc += v0 * b0[j];
                acc += v1 * b1[j];
                acc += v2 * b2[j];
                acc += v3 * b3[j];
                ci[j] = acc;
            }
        }
    }
    for (; p < k; ++p) {
        const T* ap = a + p * m;
        const T* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = ap[i];
            T* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

} // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    if (m == 0 || n == 0 || k == 0) return;
    thread_local std::vector<T> bt;
    const T* bb = b;
    if (trans_b) {
        transpose_into(b, n, k, bt);
        bb = bt.data();
    }
    if (trans_a)
        gemm_tn(m, n, k, a, bb, c);
    else
        gemm_nn(m, n, k, a, bb, c);
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, const float*, const float*,
                          float*, bool);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, const double*,
                           const double*, double*, bool);

} // namespace stylecode::nn
