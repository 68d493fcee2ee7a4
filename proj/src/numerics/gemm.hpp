#pragma once

#include <cstddef>

namespace stylecode::nn {

// C[m,n] (+)= op(A)[m,k] * op(B)[k,n], row-major, op = optional transpose.
// Summation order over k is fixed, so results are bitwise reproducible.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

} // namespace stylecode::nn
