#pragma once

#include <cmath>
#include <cstddef>

#include <Eigen/Core>

#include "gridparse/error.hpp"

namespace gridparse {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Logical H x W grid stored with a one-cell zero border. A grid tensor is a
// Mat with (H+2)(W+2) rows (one per padded cell, row-major) and one column
// per channel. Border rows are kept at zero by every operation.
struct GridShape {
  int h = 0;
  int w = 0;

  bool is_grid() const { return h > 0 && w > 0; }
  int stride() const { return w + 2; }
  Eigen::Index padded_rows() const { return static_cast<Eigen::Index>(h + 2) * (w + 2); }
  Eigen::Index index(int i, int j) const { return static_cast<Eigen::Index>(i + 1) * (w + 2) + (j + 1); }
  // First and last padded row that belongs to a real cell.
  Eigen::Index first_cell() const { return index(0, 0); }
  Eigen::Index last_cell() const { return index(h - 1, w - 1); }
  bool operator==(const GridShape&) const = default;
};

inline GridShape square_grid(int n) { return GridShape{n, n}; }

template <typename T>
void zero_border(Mat<T>& m, const GridShape& g) {
  const Eigen::Index s = g.stride();
  m.topRows(s).setZero();
  m.bottomRows(s).setZero();
  for (int i = 1; i <= g.h; ++i) {
    m.row(static_cast<Eigen::Index>(i) * s).setZero();
    m.row(static_cast<Eigen::Index>(i) * s + s - 1).setZero();
  }
}

template <typename T>
Mat<T> zero_grid(const GridShape& g, int channels) {
  return Mat<T>::Zero(g.padded_rows(), channels);
}

// out = conv3x3(in, kernel) + bias with zero padding; out keeps in's spatial
// size. kernel is (9 * Cin) x Cout, tap-major: tap = (di + 1) * 3 + (dj + 1),
// and output(i, j) += in(i + di, j + dj) * kernel_tap. bias may be null.
// With accumulate, out must already be a grid tensor of the right shape and
// the result is added to it.
template <typename T>
void conv3x3_forward(const Mat<T>& in, const GridShape& g, const Mat<T>& kernel, const T* bias, Mat<T>& out,
                     bool accumulate = false) {
  const auto cin = in.cols();
  const auto cout = kernel.cols();
  if (in.rows() != g.padded_rows() || kernel.rows() != 9 * cin) {
    throw Error(ErrorKind::ShapeMismatch, "conv3x3: input/kernel shape mismatch");
  }
  if (!accumulate) {
    out.setZero(g.padded_rows(), cout);
  } else if (out.rows() != g.padded_rows() || out.cols() != cout) {
    throw Error(ErrorKind::ShapeMismatch, "conv3x3: accumulator shape mismatch");
  }
  const Eigen::Index first = g.first_cell();
  const Eigen::Index n = g.last_cell() - first + 1;
  const Eigen::Index s = g.stride();
  for (int di = -1; di <= 1; ++di) {
    for (int dj = -1; dj <= 1; ++dj) {
      const Eigen::Index tap = (di + 1) * 3 + (dj + 1);
      const Eigen::Index off = di * s + dj;
      out.middleRows(first, n).noalias() += in.middleRows(first + off, n) * kernel.middleRows(tap * cin, cin);
    }
  }
  if (bias != nullptr) {
    for (Eigen::Index r = first; r < first + n; ++r) {
      for (Eigen::Index c = 0; c < cout; ++c) out(r, c) += bias[c];
    }
  }
  zero_border(out, g);
}

// Accumulating backward of conv3x3_forward. d_out must have a zero border.
// Any of d_in / d_kernel / d_bias may be null.
template <typename T>
void conv3x3_backward(const Mat<T>& in, const GridShape& g, const Mat<T>& kernel, const Mat<T>& d_out, Mat<T>* d_in,
                      Mat<T>* d_kernel, Mat<T>* d_bias) {
  const auto cin = in.cols();
  const Eigen::Index first = g.first_cell();
  const Eigen::Index n = g.last_cell() - first + 1;
  const Eigen::Index s = g.stride();
  for (int di = -1; di <= 1; ++di) {
    for (int dj = -1; dj <= 1; ++dj) {
      const Eigen::Index tap = (di + 1) * 3 + (dj + 1);
      const Eigen::Index off = di * s + dj;
      if (d_in != nullptr) {
        d_in->middleRows(first + off, n).noalias() +=
            d_out.middleRows(first, n) * kernel.middleRows(tap * cin, cin).transpose();
      }
      if (d_kernel != nullptr) {
        d_kernel->middleRows(tap * cin, cin).noalias() +=
            in.middleRows(first + off, n).transpose() * d_out.middleRows(first, n);
      }
    }
  }
  if (d_in != nullptr) zero_border(*d_in, g);
  if (d_bias != nullptr) *d_bias += d_out.colwise().sum();
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
bool all_finite(const Mat<T>& m) {
  return m.allFinite();
}

}  // namespace gridparse
