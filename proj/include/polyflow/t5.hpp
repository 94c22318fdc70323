#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "polyflow/energy.hpp"
#include "polyflow/mat.hpp"

namespace polyflow {

using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat8 = Eigen::Matrix<double, 8, 8>;

inline Vec8 to_vec8(const StatePoint& x) {
  Vec8 v;
  for (int k = 0; k < 8; ++k) v[k] = x.coord(k);
  return v;
}
inline StatePoint from_vec8(const Vec8& v) {
  StatePoint x;
  for (int k = 0; k < 8; ++k) x.coord(k) = v[k];
  return x;
}

/// Lemma-2.1 chain algebra: coefficients nu with P_i = sum_j nu[i][j] X_j for
/// the cyclic chain P_{k+1} = t_k X_k + (1 - t_k) P_k (indices mod 5).
/// Throws std::domain_error if any t_k is outside (0,1).
std::array<std::array<double, 5>, 5> chain_coefficients(const std::array<double, 5>& t);

/// Independent oracle: solve the 5x5 cyclic linear system directly.
std::array<std::array<double, 5>, 5> chain_coefficients_solve(const std::array<double, 5>& t);

/// One fiber of the parametrized configuration: values at parameter q.
struct T5Fiber {
  Vec8 q = Vec8::Zero();
  std::array<StatePoint, 5> xi;
  std::array<StatePoint, 5> pi;
  std::array<double, 5> lam{};

  /// max_i |pi[i+1] - (lam_i xi_i + (1-lam_i) pi_i)|
  double chain_residual() const;
};

/// Answer to an X-in-S_i(lambda) query.
struct Membership {
  int branch = 0;       // 1..5
  double lambda = 0.0;  // in [0, lambda_max]
  Vec8 q = Vec8::Zero();
  double residual = 0.0;
};

/// Wave frame detected from the configuration geometry: all chain directions
/// xi_k - pi_k share the rank-one spatial part a (x) n with an axis-aligned n
/// and flux parts annihilated by n.  Required by the oscillation builder.
struct WaveFrame {
  bool valid = false;
  int s_axis = 0;                    // 0: n = e1, 1: n = e2
  std::array<double, 2> a{1.0, 0.0}; // unit vector of the gradient line
  std::array<double, 2> nperp{0.0, 1.0};
  double detect_residual = 0.0;
  std::string why;

  Mat2 thin_dir() const;  // a (x) n, unit Frobenius norm
  /// p-coordinate of an A-matrix relative to the line through A_ref.
  double p_coord(const Mat2& A, const Mat2& A_ref) const;
  /// B-basis matrices e1 (x) nperp, e2 (x) nperp.
  Mat2 bdir(int i) const;
};

/// The fiber family over the parameter ball B_beta, stored on a finite sample
/// grid with affine interpolation (exact for the synthetic families built
/// here: xi_i(q) = xi_i(0) + S_i q with lambda_i constant).
struct ConfigBundle {
  double beta = 1.0;
  double nu0 = 0.1, nu1 = 0.6, delta1 = 0.6;
  std::string mode = "synthetic";  // or "graph-certified"
  std::vector<T5Fiber> fibers;     // fibers[0] at q = 0
  double membership_tol = 1e-7;

  // Affine model (reconstructed from the sample grid).
  bool affine_ok = false;
  std::array<Mat8, 5> slope_xi;
  std::array<Mat8, 5> slope_pi;
  double affine_fit_residual = 0.0;

  const T5Fiber& center() const { return fibers.at(0); }
  T5Fiber fiber_at(const Vec8& q) const;
  double diameter() const;  // diameter of the center configuration
  void rebuild_affine_model();
};

/// lambda xi_i(q) + (1-lambda) pi_i(q); branch i in 1..5.
StatePoint point_on_segment(const T5Fiber& fiber, int branch, double lambda);

struct BarycentricExpansion {
  std::array<std::array<double, 5>, 5> nu_tilde;
  std::array<double, 5> y_weights;
  std::array<StatePoint, 5> targets;  // X_k = mu xi_k + (1-mu) pi_k
  double reconstruction_defect = 0.0;
  double entry_lower_bound = 0.0;  // (mu - nu1)^4 nu0
  double min_entry = 0.0;
};

/// Theorem-2.2 preamble data: chain coefficients at t_k = lambda_k(q)/mu and
/// the barycentric weights of Y = point_on_segment(fiber, i, lambda) over the
/// targets X_k.  Throws std::domain_error on hypothesis violation.
BarycentricExpansion barycentric_expand(double lambda, double mu, const T5Fiber& fiber, int branch,
                                        double nu0, double nu1, double delta1);

/// Membership search.  Returns the smallest-residual membership with
/// lambda <= lambda_max, or nullopt when the best residual exceeds tol
/// (absence is a valid answer).  tol < 0 uses bundle.membership_tol.
std::optional<Membership> locate(const StatePoint& X, const ConfigBundle& bundle,
                                 double lambda_max, double tol = -1.0);

struct PropertyReport {
  bool p2_pass = false;
  double p2_max_chain_residual = 0.0;
  bool p2_lambda_range_pass = false;
  bool p1_pass = false;
  double p1_min_margin_xi = 0.0;
  double p1_min_margin_pi = 0.0;
  double pi1_anchor_residual = 0.0;
  bool p3a_pass = false;
  bool p3c_pass = false;
  double p3c_min_margin = 0.0;
  bool p3b_pass = false;
  double p3b_certified_radius = 0.0;
  bool graph_pass = false;  // only meaningful in graph-certified mode
  double graph_max_residual = 0.0;
  bool all_pass() const {
    return p2_pass && p2_lambda_range_pass && p1_pass && p3a_pass && p3c_pass && p3b_pass;
  }
  std::string to_json() const;
};

PropertyReport verify_properties(const ConfigBundle& bundle, int samples,
                                 const PolyconvexEnergy* E = nullptr);

/// min_{k != l} dist(closure P(S_k(1)), closure P(S_l(1))); throws if not
/// strictly positive within tolerance.
double separation_delta(const ConfigBundle& bundle);

struct SyntheticSpec {
  std::array<StatePoint, 5> xi;
  std::array<double, 5> lam{};
  double beta = 1.0;
  double nu0 = 0.1, nu1 = 0.6, delta1 = 0.6;
  /// Shared fiber slope (applied to xi; pi slopes derived by the chain).
  Mat8 slope = Mat8::Identity();
  bool anchor_pi1 = true;  // translate so that pi_1(0) = (0,0)
};

/// Build a synthetic bundle: pi derived from xi and lam by the chain algebra,
/// fibered affinely in q; (P2) residual is exactly zero at every fiber.
ConfigBundle make_synthetic(const SyntheticSpec& spec);

/// Least-squares refinement toward the graph of DF (flux slots refit per
/// sampled fiber; mode flag communicates the outcome).
ConfigBundle search_config(const PolyconvexEnergy& E, const ConfigBundle& seed, int iters);

WaveFrame detect_wave_frame(const ConfigBundle& bundle);

std::string bundle_to_json(const ConfigBundle& bundle);
ConfigBundle bundle_from_json(const std::string& text);

/// Parameters for the canonical wave-compatible demo/run bundles.
struct WaveBundleParams {
  double nu0 = 0.1, nu1 = 0.6, delta1 = 0.6;
  double lambda_value = 0.12;  // all five lambda_i
  double beta = 1.0;
  double sigma = 1e-4;      // gradient-line spacing scale
  double thin_gain = -1.0;  // <0: auto from separation
  double fatA_gain = -1.0;  // <0: auto
  double fatB_gain = -1.0;  // <0: auto
  int s_axis = 0;
  double collar = 1.0 / 128.0;  // oscillation collar fraction the bundle must absorb
  double membership_tol = 1e-7;
};

/// Canonical synthetic bundle compatible with the oscillation builder:
/// gradient parts collinear along a (x) n, flux differences annihilating n,
/// anisotropic fibering (thin along the gradient line, fat elsewhere).
ConfigBundle make_wave_bundle(const WaveBundleParams& params);

}  // namespace polyflow
