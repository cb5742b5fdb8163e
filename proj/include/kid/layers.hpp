#pragma once
// Building blocks with explicit forward caches and backward passes.

#include "kid/tensor.hpp"

namespace kid {

template <class T>
struct LayerNormCache {
  Matrix<T> xhat;
  Vector<T> inv_std;
};

inline constexpr double kLayerNormEps = 1e-6;

/// Row-wise layer normalization with affine scale/shift.
template <class T>
Matrix<T> layer_norm(const Matrix<T>& x, const RowVector<T>& gamma, const RowVector<T>& beta,
                     LayerNormCache<T>* cache = nullptr) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Matrix<T> xhat(n, d);
  Vector<T> inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    T mean = x.row(i).mean();
    T var = (x.row(i).array() - mean).square().mean();
    T is = T(1) / std::sqrt(var + T(kLayerNormEps));
    inv_std(i) = is;
    xhat.row(i) = (x.row(i).array() - mean) * is;
  }
  Matrix<T> y = (xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

/// Returns dx; accumulates into dgamma/dbeta.
template <class T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const RowVector<T>& gamma, const LayerNormCache<T>& c,
                              RowVector<T>& dgamma, RowVector<T>& dbeta) {
  dgamma += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  dbeta += dy.colwise().sum();
  Matrix<T> dxhat = dy.array().rowwise() * gamma.array();
  const T inv_d = T(1) / T(dy.cols());
  Matrix<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    T m1 = dxhat.row(i).sum() * inv_d;
    T m2 = dxhat.row(i).dot(c.xhat.row(i)) * inv_d;
    dx.row(i) = c.inv_std(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

template <class T>
Matrix<T> linear(const Matrix<T>& x, const Matrix<T>& w, const RowVector<T>& b) {
  Matrix<T> y = x * w;
  y.rowwise() += b;
  return y;
}

// Exact (erf based) GELU.
template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(M_PI));
  return cdf + x * pdf;
}

template <class T>
Matrix<T> gelu(const Matrix<T>& x) {
  return x.unaryExpr([](T v) { return gelu(v); });
}

template <class T>
Matrix<T> gelu_backward(const Matrix<T>& dy, const Matrix<T>& x) {
  return dy.array() * x.unaryExpr([](T v) { return gelu_grad(v); }).array();
}

template <class T>
T sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

/// Numerically stable row-wise softmax.
template <class T>
Matrix<T> softmax_rows(const Matrix<T>& s) {
  Matrix<T> p(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    T m = s.row(i).maxCoeff();
    p.row(i) = (s.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

template <class T>
Matrix<T> softmax_rows_backward(const Matrix<T>& dp, const Matrix<T>& p) {
  Vector<T> dots = (dp.array() * p.array()).rowwise().sum();
  return p.array() * (dp.array().colwise() - dots.array());
}

/// Fixed 2-D sinusoidal encoding over a grid x grid patch layout. The first
/// half of the channels encodes the row, the second half the column.
template <class T>
Matrix<T> sinusoidal_position_encoding(int grid, int dim) {
  Matrix<T> pe(grid * grid, dim);
  const int half = dim / 2;
  auto encode = [](int pos, int i, int width) {
    const double freq = std::pow(10000.0, -2.0 * (i / 2) / std::max(1, width));
    return i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq);
  };
  for (int r = 0; r < grid; ++r)
    for (int c = 0; c < grid; ++c) {
      const int row = r * grid + c;
      for (int i = 0; i < half; ++i) pe(row, i) = T(encode(r, i, half));
      for (int i = half; i < dim; ++i) pe(row, i) = T(encode(c, i - half, dim - half));
    }
  return pe;
}

}  // namespace kid
