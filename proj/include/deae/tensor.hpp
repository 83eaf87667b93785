#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "deae/error.hpp"
#include "deae/rng.hpp"

namespace deae {

// Dense row-major matrix of doubles. Everything in the toy model runs in
// double precision; desk scale is small enough that speed is irrelevant and
// the gradient checks require the headroom.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

  double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }

  void zero() { std::fill(a.begin(), a.end(), 0.0); }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : a)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Matrix& o) const {
    return rows == o.rows && cols == o.cols && a == o.a;
  }
};

// Position-indexed hidden-state sequence: one row per position, `cols` is the
// model dimension h.
using HiddenStates = Matrix;

inline Matrix random_uniform(int rows, int cols, double scale, SplitMix64& rng) {
  Matrix m(rows, cols);
  for (double& v : m.a) v = rng.next_double(-scale, scale);
  return m;
}

// C = A * B
inline Matrix matmul(const Matrix& A, const Matrix& B) {
  assert(A.cols == B.rows);
  Matrix C(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i) {
    const double* ai = A.row(i);
    double* ci = C.row(i);
    for (int k = 0; k < A.cols; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = B.row(k);
      for (int j = 0; j < B.cols; ++j) ci[j] += aik * bk[j];
    }
  }
  return C;
}

// C = A^T * B
inline Matrix matmul_tn(const Matrix& A, const Matrix& B) {
  assert(A.rows == B.rows);
  Matrix C(A.cols, B.cols);
  for (int k = 0; k < A.rows; ++k) {
    const double* ak = A.row(k);
    const double* bk = B.row(k);
    for (int i = 0; i < A.cols; ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      double* ci = C.row(i);
      for (int j = 0; j < B.cols; ++j) ci[j] += aki * bk[j];
    }
  }
  return C;
}

// C = A * B^T
inline Matrix matmul_nt(const Matrix& A, const Matrix& B) {
  assert(A.cols == B.cols);
  Matrix C(A.rows, B.rows);
  for (int i = 0; i < A.rows; ++i) {
    const double* ai = A.row(i);
    double* ci = C.row(i);
    for (int j = 0; j < B.rows; ++j) {
      const double* bj = B.row(j);
      double s = 0.0;
      for (int k = 0; k < A.cols; ++k) s += ai[k] * bj[k];
      ci[j] = s;
    }
  }
  return C;
}

inline void add_inplace(Matrix& A, const Matrix& B, double scale = 1.0) {
  assert(A.same_shape(B));
  for (std::size_t i = 0; i < A.a.size(); ++i) A.a[i] += scale * B.a[i];
}

inline Matrix add(const Matrix& A, const Matrix& B) {
  Matrix C = A;
  add_inplace(C, B);
  return C;
}

// Adds a 1 x cols bias row to every row of A.
inline void add_row_bias(Matrix& A, const Matrix& bias) {
  assert(bias.rows == 1 && bias.cols == A.cols);
  for (int i = 0; i < A.rows; ++i) {
    double* ai = A.row(i);
    for (int j = 0; j < A.cols; ++j) ai[j] += bias.a[j];
  }
}

// Numerically stable softmax over a contiguous range of logits.
inline void softmax_inplace(double* x, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (int i = 0; i < n; ++i) x[i] /= sum;
}

inline void softmax_rows_inplace(Matrix& m) {
  for (int i = 0; i < m.rows; ++i) softmax_inplace(m.row(i), m.cols);
}

// log softmax of logits; returns the log-probabilities.
inline std::vector<double> log_softmax(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

// Backward of row-wise softmax: given probs p (forward output) and upstream
// dL/dp, writes dL/dlogits. dlogit_j = p_j * (dp_j - sum_k dp_k p_k).
inline void softmax_rows_backward(const Matrix& probs, const Matrix& dprobs,
                                  Matrix& dlogits) {
  assert(probs.same_shape(dprobs));
  dlogits = Matrix(probs.rows, probs.cols);
  for (int i = 0; i < probs.rows; ++i) {
    const double* p = probs.row(i);
    const double* dp = dprobs.row(i);
    double dot = 0.0;
    for (int j = 0; j < probs.cols; ++j) dot += dp[j] * p[j];
    double* dl = dlogits.row(i);
    for (int j = 0; j < probs.cols; ++j) dl[j] = p[j] * (dp[j] - dot);
  }
}

inline void tanh_inplace(Matrix& m) {
  for (double& v : m.a) v = std::tanh(v);
}

}  // namespace deae
