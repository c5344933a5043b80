#pragma once

#include <cblas.h>

#include <Eigen/Core>

namespace fdb::blas {

// Row-major C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
              alpha, a, lda, b, ldb, beta, c, ldc);
}

// Double precision goes through Eigen: the dgemm kernels of some OpenBLAS
// builds (0.3.20 on AVX-512 targets) return wrong products for m > 128.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  const Eigen::Map<const RowMat, 0, Stride> A(a, trans_a ? k : m, trans_a ? m : k, Stride(lda));
  const Eigen::Map<const RowMat, 0, Stride> B(b, trans_b ? n : k, trans_b ? k : n, Stride(ldb));
  Eigen::Map<RowMat, 0, Stride> C(c, m, n, Stride(ldc));
  if (beta == 0.0)
    C.setZero();
  else if (beta != 1.0)
    C *= beta;
  if (trans_a && trans_b)
    C.noalias() += alpha * A.transpose() * B.transpose();
  else if (trans_a)
    C.noalias() += alpha * A.transpose() * B;
  else if (trans_b)
    C.noalias() += alpha * A * B.transpose();
  else
    C.noalias() += alpha * A * B;
}

}  // namespace fdb::blas
