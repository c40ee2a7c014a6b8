#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace mis {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;

template <typename T>
using CMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
inline MatMap<T> mat(T* data, std::size_t rows, std::size_t cols) {
  return MatMap<T>(data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
inline CMatMap<T> cmat(const T* data, std::size_t rows, std::size_t cols) {
  return CMatMap<T>(data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace mis
