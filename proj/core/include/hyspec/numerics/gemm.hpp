#pragma once

#include <cstdint>

namespace hyspec::numerics {

// C[m,n] (+)= op(A)[m,k] * op(B)[k,n], all row-major and contiguous.
// op(A) = A when !trans_a (A is m x k), else A^T (A stored k x m).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
          const T* b, T* c, bool accumulate);

}  // namespace hyspec::numerics
