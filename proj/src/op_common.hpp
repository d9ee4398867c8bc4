#pragma once

#include <cstdint>
#include <vector>

#include "bcsi/tensor.hpp"

// Shared machinery for op implementations: stride math, broadcasting plans
// and the odometer loop that walks an output while tracking input offsets.

namespace bcsi::detail {

std::vector<int64_t> row_major_strides(const Shape& s);

// numpy rules: align trailing axes, a size-1 axis stretches to match
Shape broadcast_shape(const Shape& a, const Shape& b);

// strides of `s` viewed through broadcast target `out`; 0 where stretched
std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out);

// validates and normalizes reduction axes; empty input means all axes
std::vector<int> normalize_axes(const std::vector<int>& axes, int rank);

Shape reduced_shape(const Shape& in, const std::vector<int>& axes, bool keepdims);

// Walks `shape` in row-major order calling fn(linear, off_a, off_b) where the
// offsets advance by the given per-axis strides (0 entries pin an axis).
template <typename Fn>
void for_each_2off(const Shape& shape, const std::vector<int64_t>& sa,
                   const std::vector<int64_t>& sb, Fn&& fn) {
  const int rank = static_cast<int>(shape.size());
  const int64_t n = numel_of(shape);
  if (rank == 0) {
    if (n == 1) fn(int64_t{0}, int64_t{0}, int64_t{0});
    return;
  }
  std::vector<int> idx(static_cast<size_t>(rank), 0);
  int64_t off_a = 0, off_b = 0;
  for (int64_t i = 0; i < n; ++i) {
    fn(i, off_a, off_b);
    for (int ax = rank - 1; ax >= 0; --ax) {
      ++idx[static_cast<size_t>(ax)];
      off_a += sa[static_cast<size_t>(ax)];
      off_b += sb[static_cast<size_t>(ax)];
      if (idx[static_cast<size_t>(ax)] < shape[static_cast<size_t>(ax)]) break;
      idx[static_cast<size_t>(ax)] = 0;
      off_a -= sa[static_cast<size_t>(ax)] * shape[static_cast<size_t>(ax)];
      off_b -= sb[static_cast<size_t>(ax)] * shape[static_cast<size_t>(ax)];
    }
  }
}

// ---- GEMM kernels, C must be pre-initialized (all accumulate) ---------------
// C(m x n) += A(m x k) * B(k x n)
void gemm_nn(int64_t m, int64_t n, int64_t k, const double* A, const double* B, double* C);
// C(m x n) += A(m x k) * B(n x k)^T
void gemm_nt(int64_t m, int64_t n, int64_t k, const double* A, const double* B, double* C);
// C(m x n) += A(k x m)^T * B(k x n)
void gemm_tn(int64_t m, int64_t n, int64_t k, const double* A, const double* B, double* C);

}  // namespace bcsi::detail
