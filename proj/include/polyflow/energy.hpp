#pragma once

#include <string>
#include <vector>

#include "polyflow/mat.hpp"

namespace polyflow {

/// One convex term of G(A, d).  Supported kinds:
///   affine     : value = c0 + <L,A> + l*d                     (affine, convex)
///   square     : value = w * (<L,A> + l*d + c0)^2             (squared linear form)
///   even_power : value = w * d^(2m)                           (even power of det)
///   smooth_max : value = w * sqrt((<L,A> + l*d + c0)^2 + eps^2)
///                smooth surrogate of max(q, -q), smoothing width eps
struct GTerm {
  std::string kind;
  Mat2 L;             // linear form on A
  double l = 0.0;     // coefficient of d = det A
  double c0 = 0.0;    // constant offset
  double w = 1.0;     // overall weight (>= 0 for convexity except 'affine')
  int m = 1;          // half-power for even_power
  double eps = 1.0;   // smoothing width for smooth_max

  double value(const Mat2& A, double d) const;
  /// Gradient in A (holding d fixed) and partial in d.
  void grad(const Mat2& A, double d, Mat2& dA, double& dd) const;
  bool convex() const;
};

/// F(A) = (nu/2)|A|^2 + G(A, det A) with G a finite sum of convex terms.
struct PolyconvexEnergy {
  double nu = 1.0;
  std::vector<GTerm> terms;

  double G(const Mat2& A, double d) const;
  void dG(const Mat2& A, double d, Mat2& dA, double& dd) const;

  /// Spot-check convexity of G by midpoint inequality on random segments.
  /// Throws std::runtime_error on failure (hard configuration error).
  void check_convexity(int samples = 200, double tol = 1e-9, unsigned seed = 2024) const;

  std::string to_json() const;
  static PolyconvexEnergy from_json(const std::string& text);
};

double eval_F(const PolyconvexEnergy& E, const Mat2& A);
Mat2 eval_DF(const PolyconvexEnergy& E, const Mat2& A);
/// Graph residual f(X) = DF(A) - B; zero exactly on the graph K.
Mat2 residual_f(const PolyconvexEnergy& E, const StatePoint& X);

}  // namespace polyflow
