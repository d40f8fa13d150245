#include "hyspec/numerics/gemm.hpp"

#include <Eigen/Core>

namespace hyspec::numerics {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  Eigen::Map<Mat> cm(c, m, n);
  if (!accumulate) cm.setZero();
  if (m == 0 || n == 0 || k == 0) return;
  if (!trans_a && !trans_b) {
    cm.noalias() += CMap(a, m, k) * CMap(b, k, n);
  } else if (trans_a && !trans_b) {
    cm.noalias() += CMap(a, k, m).transpose() * CMap(b, k, n);
  } else if (!trans_a && trans_b) {
    cm.noalias() += CMap(a, m, k) * CMap(b, n, k).transpose();
  } else {
    cm.noalias() += CMap(a, k, m).transpose() * CMap(b, n, k).transpose();
  }
}

template void gemm<float>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const double*,
                           const double*, double*, bool);

}  // namespace hyspec::numerics
