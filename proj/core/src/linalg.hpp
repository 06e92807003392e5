#pragma once

// Internal GEMM helpers over row-major buffers. Eigen stays out of the public
// headers; only the model translation units include this.

#include <Eigen/Core>

#include <cstddef>

namespace heartbert::detail {

template <typename T>
using RowMajorMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMajorMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMajorMatrix<T>>;

// c[m,n] = a[m,k] * b[k,n]   (+= when accumulate)
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, size_t m, size_t k, size_t n,
             bool accumulate = false) {
    ConstMatMap<T> A(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    ConstMatMap<T> B(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    MatMap<T> C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    if (accumulate) {
        C.noalias() += A * B;
    } else {
        C.noalias() = A * B;
    }
}

// c[m,n] = a[m,k] * b[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, size_t m, size_t k, size_t n,
             bool accumulate = false) {
    ConstMatMap<T> A(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    ConstMatMap<T> B(b, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    MatMap<T> C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    if (accumulate) {
        C.noalias() += A * B.transpose();
    } else {
        C.noalias() = A * B.transpose();
    }
}

// c[k,n] = a[m,k]^T * b[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, size_t m, size_t k, size_t n,
             bool accumulate = false) {
    ConstMatMap<T> A(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    ConstMatMap<T> B(b, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    MatMap<T> C(c, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    if (accumulate) {
        C.noalias() += A.transpose() * B;
    } else {
        C.noalias() = A.transpose() * B;
    }
}

}  // namespace heartbert::detail
