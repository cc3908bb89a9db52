// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scalar reference kernels, templated on the value type. The float
// instantiation is the scalar backend; the double instantiation drives the
// high-precision forward replay used by the gradient checker.
#pragma once

#include <cmath>
#include <cstddef>

namespace mrssm::kernels::ref {

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n, bool acc = false) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    if (!acc) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (int kk = 0; kk < k; ++kk) {
      const T av = a[static_cast<std::size_t>(i) * k + kk];
      const T* brow = b + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// a stored as (k,m): C = a^T * b
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n, bool acc = false) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    if (!acc) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (int kk = 0; kk < k; ++kk) {
      const T av = a[static_cast<std::size_t>(kk) * m + i];
      const T* brow = b + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// b stored as (n,k): C = a * b^T
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n, bool acc = false) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<std::size_t>(j) * k;
      T s = T(0);
      for (int kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      crow[j] = acc ? crow[j] + s : s;
    }
  }
}

template <typename T>
void vadd(const T* a, const T* b, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}
template <typename T>
void vsub(const T* a, const T* b, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}
template <typename T>
void vmul(const T* a, const T* b, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}
template <typename T>
void vdiv(const T* a, const T* b, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] / b[i];
}
template <typename T>
void vscale(const T* x, T alpha, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = alpha * x[i];
}
template <typename T>
void vaxpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
template <typename T>
void vfma_acc(const T* a, const T* b, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

template <typename T>
double vsum(const T* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(x[i]);
  return s;
}

template <typename T>
void vtanh(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}
template <typename T>
void vsigmoid(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const T v = x[i];
    if (v >= T(0)) {
      y[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y[i] = e / (T(1) + e);
    }
  }
}
template <typename T>
void vexp(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}
template <typename T>
void vlog(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::log(x[i]);
}
// softplus(x) = max(x,0) + log1p(exp(-|x|)), stable in both tails
template <typename T>
void vsoftplus(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const T v = x[i];
    y[i] = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
  }
}
template <typename T>
void vsqrt(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::sqrt(x[i]);
}

// Unfolds one (C,H,W) image into a (C*kh*kw, ho*wo) column matrix with zero
// padding. col must hold C*kh*kw*ho*wo elements.
template <typename T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, T* col) {
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int ch = 0; ch < c; ++ch) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* dst = col + (static_cast<std::size_t>(ch) * kh * kw + ki * kw + kj) * plane;
        for (int oi = 0; oi < ho; ++oi) {
          const int ii = oi * stride - pad + ki;
          for (int oj = 0; oj < wo; ++oj) {
            const int jj = oj * stride - pad + kj;
            const bool in = ii >= 0 && ii < h && jj >= 0 && jj < w;
            dst[static_cast<std::size_t>(oi) * wo + oj] =
                in ? x[(static_cast<std::size_t>(ch) * h + ii) * w + jj] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates the column matrix back into the image.
template <typename T>
void col2im(const T* col, int c, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, T* x) {
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int ch = 0; ch < c; ++ch) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* src = col + (static_cast<std::size_t>(ch) * kh * kw + ki * kw + kj) * plane;
        for (int oi = 0; oi < ho; ++oi) {
          const int ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= h) continue;
          for (int oj = 0; oj < wo; ++oj) {
            const int jj = oj * stride - pad + kj;
            if (jj < 0 || jj >= w) continue;
            x[(static_cast<std::size_t>(ch) * h + ii) * w + jj] +=
                src[static_cast<std::size_t>(oi) * wo + oj];
          }
        }
      }
    }
  }
}

}  // namespace mrssm::kernels::ref
