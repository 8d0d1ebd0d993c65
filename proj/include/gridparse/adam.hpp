#pragma once

#include <cmath>
#include <vector>

#include "gridparse/tensor.hpp"

namespace gridparse {

template <typename T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<Mat<T>> m;
  std::vector<Mat<T>> v;
};

// One Adam update with bias correction. Moments are created on first use.
template <typename T>
void adam_step(const std::vector<Mat<T>*>& params, const std::vector<Mat<T>>& grads, AdamState<T>& st) {
  if (params.size() != grads.size()) throw Error(ErrorKind::ShapeMismatch, "adam: parameter/gradient count mismatch");
  if (st.m.empty()) {
    for (const auto* p : params) {
      st.m.push_back(Mat<T>::Zero(p->rows(), p->cols()));
      st.v.push_back(Mat<T>::Zero(p->rows(), p->cols()));
    }
  }
  if (st.m.size() != params.size()) throw Error(ErrorKind::ShapeMismatch, "adam: state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i].rows() || params[i]->cols() != grads[i].cols() ||
        st.m[i].rows() != grads[i].rows() || st.m[i].cols() != grads[i].cols()) {
      throw Error(ErrorKind::ShapeMismatch, "adam: gradient shape mismatch");
    }
  }
  ++st.step;
  const T b1 = static_cast<T>(st.beta1);
  const T b2 = static_cast<T>(st.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(st.beta1, static_cast<double>(st.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(st.beta2, static_cast<double>(st.step)));
  const T lr = static_cast<T>(st.lr);
  const T eps = static_cast<T>(st.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = st.m[i];
    auto& v = st.v[i];
    const auto& g = grads[i];
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    params[i]->array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

}  // namespace gridparse
