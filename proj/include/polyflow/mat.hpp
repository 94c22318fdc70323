#pragma once

#include <array>
#include <cmath>
#include <iosfwd>

namespace polyflow {

/// 2x2 matrix, row-major storage (a11, a12, a21, a22).
struct Mat2 {
  std::array<double, 4> e{0.0, 0.0, 0.0, 0.0};

  Mat2() = default;
  Mat2(double a11, double a12, double a21, double a22) : e{a11, a12, a21, a22} {}

  static Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }
  static Mat2 zero() { return {}; }
  /// Rank-one product u otimes v, entries u_i v_j.
  static Mat2 outer(const std::array<double, 2>& u, const std::array<double, 2>& v) {
    return {u[0] * v[0], u[0] * v[1], u[1] * v[0], u[1] * v[1]};
  }

  double operator()(int i, int j) const { return e[2 * i + j]; }
  double& operator()(int i, int j) { return e[2 * i + j]; }

  Mat2 operator+(const Mat2& o) const { return {e[0] + o.e[0], e[1] + o.e[1], e[2] + o.e[2], e[3] + o.e[3]}; }
  Mat2 operator-(const Mat2& o) const { return {e[0] - o.e[0], e[1] - o.e[1], e[2] - o.e[2], e[3] - o.e[3]}; }
  Mat2 operator*(double s) const { return {e[0] * s, e[1] * s, e[2] * s, e[3] * s}; }
  Mat2& operator+=(const Mat2& o) {
    for (int i = 0; i < 4; ++i) e[i] += o.e[i];
    return *this;
  }
  std::array<double, 2> row(int i) const { return {e[2 * i], e[2 * i + 1]}; }
  /// Matrix-vector product.
  std::array<double, 2> apply(const std::array<double, 2>& v) const {
    return {e[0] * v[0] + e[1] * v[1], e[2] * v[0] + e[3] * v[1]};
  }

  double norm() const { return std::sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2] + e[3] * e[3]); }
  bool finite() const {
    return std::isfinite(e[0]) && std::isfinite(e[1]) && std::isfinite(e[2]) && std::isfinite(e[3]);
  }
};

inline Mat2 operator*(double s, const Mat2& m) { return m * s; }

/// Frobenius inner product A:B = tr(A^T B).
inline double dot(const Mat2& a, const Mat2& b) {
  return a.e[0] * b.e[0] + a.e[1] * b.e[1] + a.e[2] * b.e[2] + a.e[3] * b.e[3];
}

double det2(const Mat2& a);
/// Cofactor matrix; satisfies A : cof2(A) = 2 det A and d(det)/dA = cof2(A).
Mat2 cof2(const Mat2& a);

/// Point of the differential inclusion: gradient slot A, flux slot B.
/// Identified with R^8 under the ordering (A row-major, then B row-major).
struct StatePoint {
  Mat2 A;
  Mat2 B;

  StatePoint() = default;
  StatePoint(const Mat2& a, const Mat2& b) : A(a), B(b) {}

  double coord(int k) const { return k < 4 ? A.e[k] : B.e[k - 4]; }
  double& coord(int k) { return k < 4 ? A.e[k] : B.e[k - 4]; }

  StatePoint operator+(const StatePoint& o) const { return {A + o.A, B + o.B}; }
  StatePoint operator-(const StatePoint& o) const { return {A - o.A, B - o.B}; }
  StatePoint operator*(double s) const { return {A * s, B * s}; }
  double norm() const { return std::sqrt(dot(A, A) + dot(B, B)); }
};

inline StatePoint operator*(double s, const StatePoint& x) { return x * s; }
inline double dot(const StatePoint& x, const StatePoint& y) { return dot(x.A, y.A) + dot(x.B, y.B); }

std::ostream& operator<<(std::ostream& os, const Mat2& m);
std::ostream& operator<<(std::ostream& os, const StatePoint& x);

}  // namespace polyflow
