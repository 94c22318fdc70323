#include "polyflow/t5.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace polyflow {

namespace {
constexpr int kMod = 5;
inline int wrap(int i) { return ((i % kMod) + kMod) % kMod; }
}  // namespace

std::array<std::array<double, 5>, 5> chain_coefficients(const std::array<double, 5>& t) {
  for (double v : t)
    if (!(v > 0.0 && v < 1.0)) throw std::domain_error("chain_coefficients: t outside (0,1)");
  double prod = 1.0;
  for (double v : t) prod *= (1.0 - v);
  const double tt = 1.0 - prod;
  std::array<std::array<double, 5>, 5> nu{};
  // nu[(k+1) mod 5][(k-j) mod 5] = t_{k-j} * prod_{m=0..j-1} (1 - t_{k-m}) / tt
  for (int k = 0; k < 5; ++k) {
    const int row = wrap(k + 1);
    double pref = 1.0;
    for (int j = 0; j < 5; ++j) {
      const int col = wrap(k - j);
      nu[row][col] = pref * t[col] / tt;
      pref *= (1.0 - t[wrap(k - j)]);
    }
  }
  return nu;
}

std::array<std::array<double, 5>, 5> chain_coefficients_solve(const std::array<double, 5>& t) {
  // For each j solve the cyclic system nu_{k+1} = t_k delta_{kj} + (1-t_k) nu_k.
  std::array<std::array<double, 5>, 5> nu{};
  Eigen::Matrix<double, 5, 5> A = Eigen::Matrix<double, 5, 5>::Zero();
  for (int k = 0; k < 5; ++k) {
    A(wrap(k + 1), wrap(k + 1)) += 1.0;
    A(wrap(k + 1), k) -= (1.0 - t[k]);
  }
  Eigen::FullPivLU<Eigen::Matrix<double, 5, 5>> lu(A);
  for (int j = 0; j < 5; ++j) {
    Eigen::Matrix<double, 5, 1> b = Eigen::Matrix<double, 5, 1>::Zero();
    b(wrap(j + 1)) = t[j];
    Eigen::Matrix<double, 5, 1> x = lu.solve(b);
    for (int i = 0; i < 5; ++i) nu[i][j] = x(i);
  }
  return nu;
}

double T5Fiber::chain_residual() const {
  double worst = 0.0;
  for (int i = 0; i < 5; ++i) {
    const StatePoint pred = lam[i] * xi[i] + (1.0 - lam[i]) * pi[i];
    worst = std::max(worst, (pi[wrap(i + 1)] - pred).norm());
  }
  return worst;
}

Mat2 WaveFrame::thin_dir() const {
  const std::array<double, 2> n = s_axis == 0 ? std::array<double, 2>{1.0, 0.0}
                                              : std::array<double, 2>{0.0, 1.0};
  return Mat2::outer(a, n);
}

double WaveFrame::p_coord(const Mat2& A, const Mat2& A_ref) const {
  const Mat2 T = thin_dir();
  return dot(A - A_ref, T) / dot(T, T);
}

Mat2 WaveFrame::bdir(int i) const {
  const std::array<double, 2> e = i == 0 ? std::array<double, 2>{1.0, 0.0}
                                         : std::array<double, 2>{0.0, 1.0};
  return Mat2::outer(e, nperp);
}

T5Fiber ConfigBundle::fiber_at(const Vec8& q) const {
  if (!affine_ok) throw std::runtime_error("bundle: affine model unavailable");
  const T5Fiber& c = center();
  T5Fiber f;
  f.q = q;
  f.lam = c.lam;
  for (int i = 0; i < 5; ++i) {
    f.xi[i] = from_vec8(to_vec8(c.xi[i]) + slope_xi[i] * q);
    f.pi[i] = from_vec8(to_vec8(c.pi[i]) + slope_pi[i] * q);
  }
  return f;
}

double ConfigBundle::diameter() const {
  const T5Fiber& c = center();
  double d = 0.0;
  std::vector<StatePoint> pts;
  for (int i = 0; i < 5; ++i) {
    pts.push_back(c.xi[i]);
    pts.push_back(c.pi[i]);
  }
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j) d = std::max(d, (pts[i] - pts[j]).norm());
  return d;
}

void ConfigBundle::rebuild_affine_model() {
  if (fibers.empty()) throw std::runtime_error("bundle: no fibers");
  const size_t n = fibers.size();
  affine_fit_residual = 0.0;
  // Least squares q -> point for each branch with intercept fixed at fibers[0].
  Eigen::MatrixXd Q(n, 8);
  for (size_t s = 0; s < n; ++s) Q.row(s) = (fibers[s].q - fibers[0].q).transpose();
  const auto fit = [&](auto&& get, Mat8& S) {
    Eigen::MatrixXd Y(n, 8);
    for (size_t s = 0; s < n; ++s)
      Y.row(s) = (to_vec8(get(fibers[s])) - to_vec8(get(fibers[0]))).transpose();
    // Solve Q * S^T = Y in least squares.
    Eigen::MatrixXd St = Q.colPivHouseholderQr().solve(Y);
    S = St.transpose();
    affine_fit_residual = std::max(affine_fit_residual, (Q * St - Y).cwiseAbs().maxCoeff());
  };
  for (int i = 0; i < 5; ++i) {
    fit([i](const T5Fiber& f) { return f.xi[i]; }, slope_xi[i]);
    fit([i](const T5Fiber& f) { return f.pi[i]; }, slope_pi[i]);
  }
  const double scale = std::max(1e-300, diameter());
  affine_ok = affine_fit_residual <= 1e-8 * scale + 1e-14;
}

StatePoint point_on_segment(const T5Fiber& fiber, int branch, double lambda) {
  if (branch < 1 || branch > 5) throw std::domain_error("point_on_segment: branch out of range");
  const int i = branch - 1;
  return lambda * fiber.xi[i] + (1.0 - lambda) * fiber.pi[i];
}

BarycentricExpansion barycentric_expand(double lambda, double mu, const T5Fiber& fiber, int branch,
                                        double nu0, double nu1, double delta1) {
  if (!(mu > std::max({lambda, nu1, delta1}) && mu < 1.0))
    throw std::domain_error("barycentric_expand: need max{lambda,nu1,delta1} < mu < 1");
  if (branch < 1 || branch > 5) throw std::domain_error("barycentric_expand: branch");
  const int i = branch - 1;
  std::array<double, 5> t{};
  for (int k = 0; k < 5; ++k) {
    t[k] = fiber.lam[k] / mu;
    if (!(t[k] > 0.0 && t[k] < 1.0))
      throw std::domain_error("barycentric_expand: lambda_k/mu outside (0,1)");
  }
  BarycentricExpansion out;
  out.nu_tilde = chain_coefficients(t);
  for (int k = 0; k < 5; ++k) out.targets[k] = point_on_segment(fiber, k + 1, mu);
  const double r = lambda / mu;
  for (int k = 0; k < 5; ++k) out.y_weights[k] = (1.0 - r) * out.nu_tilde[i][k];
  out.y_weights[i] += r;
  // Reconstruction defect |Y - sum y_k X_k|.
  StatePoint acc;
  for (int k = 0; k < 5; ++k) acc = acc + out.y_weights[k] * out.targets[k];
  out.reconstruction_defect = (point_on_segment(fiber, branch, lambda) - acc).norm();
  out.entry_lower_bound = std::pow(mu - nu1, 4) * nu0;
  out.min_entry = 1.0;
  for (auto& row : out.nu_tilde)
    for (double v : row) out.min_entry = std::min(out.min_entry, v);
  return out;
}

namespace {

/// min_{|w| <= radius} |dc - M w|, with the minimizing w reported.
double min_dist_affine(const Eigen::VectorXd& dc, const Eigen::MatrixXd& M, double radius,
                       Eigen::VectorXd* w_out = nullptr) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  Eigen::VectorXd b = svd.matrixU().transpose() * dc;
  const int r = static_cast<int>(sv.size());
  // Unconstrained minimal-norm solution.
  Eigen::VectorXd y(r);
  for (int i = 0; i < r; ++i) y[i] = sv[i] > 1e-300 ? b[i] / sv[i] : 0.0;
  auto assemble = [&](const Eigen::VectorXd& yy) {
    Eigen::VectorXd w = svd.matrixV() * yy;
    if (w_out) *w_out = w;
    return (dc - M * w).norm();
  };
  if (y.norm() <= radius) return assemble(y);
  // Secular equation: y_i(mu) = sv_i b_i / (sv_i^2 + mu), find mu with |y| = radius.
  double lo = 0.0, hi = 1.0;
  auto norm_at = [&](double m) {
    double s = 0.0;
    for (int i = 0; i < r; ++i) {
      const double yi = sv[i] * b[i] / (sv[i] * sv[i] + m);
      s += yi * yi;
    }
    return std::sqrt(s);
  };
  while (norm_at(hi) > radius && hi < 1e300) hi *= 4.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (norm_at(mid) > radius ? lo : hi) = mid;
  }
  const double mu = 0.5 * (lo + hi);
  Eigen::VectorXd yy(r);
  for (int i = 0; i < r; ++i) yy[i] = sv[i] * b[i] / (sv[i] * sv[i] + mu);
  return assemble(yy);
}

/// Distance between translated affine images c1 + M1 B_beta and c2 + M2 B_beta.
double image_distance(const Eigen::VectorXd& c1, const Eigen::MatrixXd& M1,
                      const Eigen::VectorXd& c2, const Eigen::MatrixXd& M2, double beta) {
  const double tol = 1e-12;
  if ((M1 - M2).cwiseAbs().maxCoeff() <= tol * (1.0 + M1.cwiseAbs().maxCoeff())) {
    // Shared slope: difference set is M (q1 - q2), |q1 - q2| <= 2 beta.
    return min_dist_affine(c1 - c2, M1, 2.0 * beta);
  }
  // Conservative relaxation: |(q1; q2)| <= sqrt(2) beta contains the product of balls.
  Eigen::MatrixXd M(M1.rows(), M1.cols() + M2.cols());
  M << M1, -M2;
  return min_dist_affine(c1 - c2, M, std::sqrt(2.0) * beta);
}

Eigen::Vector4d proj_A(const StatePoint& x) {
  return Eigen::Vector4d(x.A.e[0], x.A.e[1], x.A.e[2], x.A.e[3]);
}

}  // namespace

std::optional<Membership> locate(const StatePoint& X, const ConfigBundle& bundle,
                                 double lambda_max, double tol) {
  if (tol < 0.0) tol = bundle.membership_tol;
  if (!bundle.affine_ok) return std::nullopt;
  const T5Fiber& c = bundle.center();
  const Vec8 x = to_vec8(X);
  std::optional<Membership> best;
  const double lam_hi = std::max(0.0, lambda_max);

  for (int i = 0; i < 5; ++i) {
    const Vec8 pi0 = to_vec8(c.pi[i]);
    const Vec8 C0 = to_vec8(c.xi[i]) - pi0;
    const Mat8 dS = bundle.slope_xi[i] - bundle.slope_pi[i];
    const bool shared = dS.cwiseAbs().maxCoeff() <= 1e-13 * (1.0 + bundle.slope_pi[i].cwiseAbs().maxCoeff());

    auto dist_at = [&](double lam, Vec8* q_out) {
      Eigen::MatrixXd M = bundle.slope_pi[i] + lam * dS;
      Eigen::VectorXd w;
      const double d = min_dist_affine(x - pi0 - lam * C0, M, bundle.beta, &w);
      if (q_out) *q_out = w;
      return d;
    };

    double lam_best = 0.0;
    if (shared) {
      // q*(lambda) solves S q = x - pi0 - lam C0; |q*(lambda)|^2 is quadratic.
      Eigen::FullPivLU<Mat8> lu(bundle.slope_pi[i]);
      if (lu.isInvertible()) {
        const Vec8 u = lu.solve(x - pi0);
        const Vec8 v = lu.solve(C0);
        // |u - lam v|^2 = a lam^2 - 2 b lam + c
        const double a = v.squaredNorm(), b = u.dot(v), cc = u.squaredNorm();
        const double beta2 = bundle.beta * bundle.beta;
        bool feasible = false;
        if (a <= 1e-300) {
          feasible = cc <= beta2;
          lam_best = 0.0;
        } else {
          const double disc = b * b - a * (cc - beta2);
          if (disc >= 0.0) {
            const double lo = (b - std::sqrt(disc)) / a;
            const double hi2 = (b + std::sqrt(disc)) / a;
            if (hi2 >= 0.0 && lo <= lam_hi) {
              feasible = true;
              lam_best = std::clamp(lo, 0.0, lam_hi);
            }
          }
        }
        if (feasible) {
          Vec8 q = u - lam_best * v;
          const double res = (x - pi0 - lam_best * C0 - bundle.slope_pi[i] * q).norm();
          if (res <= tol) {
            if (!best || res < best->residual - 1e-300 ||
                (std::fabs(res - best->residual) < 1e-300 && false)) {
              if (!best || res < best->residual) best = Membership{i + 1, lam_best, q, res};
            }
            continue;
          }
        }
      }
    }
    // Golden-section scan over lambda with exact ball projection inside.
    const int coarse = 17;
    double bestd = 1e300, bl = 0.0;
    for (int s = 0; s <= coarse; ++s) {
      const double lam = lam_hi * s / coarse;
      const double d = dist_at(lam, nullptr);
      if (d < bestd) {
        bestd = d;
        bl = lam;
      }
    }
    double a0 = std::max(0.0, bl - lam_hi / coarse), b0 = std::min(lam_hi, bl + lam_hi / coarse);
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b0 - gr * (b0 - a0), x2 = a0 + gr * (b0 - a0);
    double f1 = dist_at(x1, nullptr), f2 = dist_at(x2, nullptr);
    for (int it = 0; it < 60; ++it) {
      if (f1 < f2) {
        b0 = x2;
        x2 = x1;
        f2 = f1;
        x1 = b0 - gr * (b0 - a0);
        f1 = dist_at(x1, nullptr);
      } else {
        a0 = x1;
        x1 = x2;
        f1 = f2;
        x2 = a0 + gr * (b0 - a0);
        f2 = dist_at(x2, nullptr);
      }
    }
    lam_best = 0.5 * (a0 + b0);
    Vec8 q;
    const double res = dist_at(lam_best, &q);
    if (res <= tol && (!best || res < best->residual)) best = Membership{i + 1, lam_best, q, res};
  }
  return best;
}

PropertyReport verify_properties(const ConfigBundle& bundle, int samples,
                                 const PolyconvexEnergy* E) {
  PropertyReport rep;
  const double scale = std::max(1e-300, bundle.diameter());

  // (P2): chain residual and lambda range over stored fibers plus random ones.
  std::mt19937 rng(7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<T5Fiber> probe = bundle.fibers;
  if (bundle.affine_ok) {
    for (int s = 0; s < samples; ++s) {
      Vec8 q;
      for (int k = 0; k < 8; ++k) q[k] = gauss(rng);
      q *= (bundle.beta * 0.9) / std::max(1e-300, q.norm());
      probe.push_back(bundle.fiber_at(q));
    }
  }
  rep.p2_lambda_range_pass = true;
  for (const auto& f : probe) {
    rep.p2_max_chain_residual = std::max(rep.p2_max_chain_residual, f.chain_residual());
    for (double l : f.lam)
      if (!(l > bundle.nu0 && l < bundle.nu1)) rep.p2_lambda_range_pass = false;
  }
  rep.p2_pass = rep.p2_max_chain_residual <= 1e-9 * scale + 1e-15;

  // (P1): pairwise projected separation of xi and pi families.
  rep.pi1_anchor_residual = bundle.center().pi[0].norm();
  double mxi = 1e300, mpi = 1e300;
  for (int i = 0; i < 5 && bundle.affine_ok; ++i)
    for (int j = i + 1; j < 5; ++j) {
      Eigen::MatrixXd Mi = bundle.slope_xi[i].topRows(4);
      Eigen::MatrixXd Mj = bundle.slope_xi[j].topRows(4);
      mxi = std::min(mxi, image_distance(proj_A(bundle.center().xi[i]), Mi,
                                         proj_A(bundle.center().xi[j]), Mj, bundle.beta));
      Eigen::MatrixXd Pi = bundle.slope_pi[i].topRows(4);
      Eigen::MatrixXd Pj = bundle.slope_pi[j].topRows(4);
      mpi = std::min(mpi, image_distance(proj_A(bundle.center().pi[i]), Pi,
                                         proj_A(bundle.center().pi[j]), Pj, bundle.beta));
    }
  rep.p1_min_margin_xi = mxi;
  rep.p1_min_margin_pi = mpi;
  rep.p1_pass = bundle.affine_ok && mxi > 0.0 && mpi > 0.0;
  rep.p3a_pass = rep.p1_pass;  // S_i(0) = pi_i(B_beta) disjointness.

  // (P3)(c): disjointness of {S_i(lambda)} for lambda in [delta1, 1).
  rep.p3c_min_margin = 1e300;
  rep.p3c_pass = bundle.affine_ok;
  const int nl = 24;
  for (int s = 0; s <= nl && bundle.affine_ok; ++s) {
    const double lam = bundle.delta1 + (1.0 - 1e-9 - bundle.delta1) * s / nl;
    for (int i = 0; i < 5; ++i)
      for (int j = i + 1; j < 5; ++j) {
        Eigen::VectorXd ci =
            lam * proj_A(bundle.center().xi[i]) + (1.0 - lam) * proj_A(bundle.center().pi[i]);
        Eigen::VectorXd cj =
            lam * proj_A(bundle.center().xi[j]) + (1.0 - lam) * proj_A(bundle.center().pi[j]);
        Eigen::MatrixXd Mi =
            (lam * bundle.slope_xi[i] + (1.0 - lam) * bundle.slope_pi[i]).topRows(4);
        Eigen::MatrixXd Mj =
            (lam * bundle.slope_xi[j] + (1.0 - lam) * bundle.slope_pi[j]).topRows(4);
        const double d = image_distance(ci, Mi, cj, Mj, bundle.beta);
        rep.p3c_min_margin = std::min(rep.p3c_min_margin, d);
        if (d <= 0.0) rep.p3c_pass = false;
      }
  }

  // (P3)(b) openness proxy: interior points of Sigma(lambda) keep membership
  // under perturbations of certified radius.
  if (bundle.affine_ok) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double radius = 0.25 * scale;
    bool any_pass = false;
    for (int halving = 0; halving < 40 && !any_pass; ++halving) {
      bool all = true;
      for (int s = 0; s < std::max(8, samples / 4); ++s) {
        const int i = 1 + static_cast<int>(uni(rng) * 5) % 5;
        const double lam = 0.5 * uni(rng) * bundle.delta1;
        Vec8 q;
        for (int k = 0; k < 8; ++k) q[k] = gauss(rng);
        q *= (0.3 * bundle.beta) / std::max(1e-300, q.norm());
        StatePoint X = point_on_segment(bundle.fiber_at(q), i, lam);
        StatePoint d;
        for (int k = 0; k < 8; ++k) d.coord(k) = gauss(rng);
        X = X + (radius / std::max(1e-300, d.norm())) * d;
        if (!locate(X, bundle, bundle.delta1, bundle.membership_tol)) {
          all = false;
          break;
        }
      }
      if (all) {
        any_pass = true;
        rep.p3b_certified_radius = radius;
      } else {
        radius *= 0.5;
      }
    }
    rep.p3b_pass = any_pass;
  }

  if (E != nullptr) {
    double worst = 0.0;
    for (const auto& f : probe)
      for (int i = 0; i < 5; ++i) worst = std::max(worst, residual_f(*E, f.xi[i]).norm());
    rep.graph_max_residual = worst;
    rep.graph_pass = worst <= 1e-8;
  }
  return rep;
}

std::string PropertyReport::to_json() const {
  nlohmann::ordered_json j;
  j["p2"] = {{"pass", p2_pass},
             {"max_chain_residual", p2_max_chain_residual},
             {"lambda_range_pass", p2_lambda_range_pass}};
  j["p1"] = {{"pass", p1_pass},
             {"min_margin_xi", p1_min_margin_xi},
             {"min_margin_pi", p1_min_margin_pi},
             {"pi1_anchor_residual", pi1_anchor_residual}};
  j["p3a"] = {{"pass", p3a_pass}};
  j["p3b"] = {{"pass", p3b_pass}, {"certified_radius", p3b_certified_radius}};
  j["p3c"] = {{"pass", p3c_pass}, {"min_margin", p3c_min_margin}};
  j["graph"] = {{"pass", graph_pass}, {"max_residual", graph_max_residual}};
  j["all_pass"] = all_pass();
  return j.dump(2);
}

double separation_delta(const ConfigBundle& bundle) {
  if (!bundle.affine_ok) throw std::runtime_error("separation_delta: affine model required");
  double m = 1e300;
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) {
      Eigen::MatrixXd Mi = bundle.slope_xi[i].topRows(4);
      Eigen::MatrixXd Mj = bundle.slope_xi[j].topRows(4);
      m = std::min(m, image_distance(proj_A(bundle.center().xi[i]), Mi,
                                     proj_A(bundle.center().xi[j]), Mj, bundle.beta));
    }
  if (!(m > 1e-12 * bundle.diameter()))
    throw std::runtime_error("separation_delta: projected xi closures are not separated");
  return m;
}

ConfigBundle make_synthetic(const SyntheticSpec& spec) {
  for (double l : spec.lam)
    if (!(l > spec.nu0 && l < spec.nu1))
      throw std::domain_error("make_synthetic: lambda outside (nu0, nu1)");
  if (!(0.0 < spec.nu0 && spec.nu0 < spec.nu1 && spec.nu1 < 1.0) || !(spec.delta1 > 0.0) ||
      !(spec.delta1 < 1.0))
    throw std::domain_error("make_synthetic: invalid nu0/nu1/delta1");

  const auto nu = chain_coefficients(spec.lam);
  std::array<StatePoint, 5> xi = spec.xi;
  std::array<StatePoint, 5> pi;
  for (int i = 0; i < 5; ++i) {
    StatePoint acc;
    for (int j = 0; j < 5; ++j) acc = acc + nu[i][j] * xi[j];
    pi[i] = acc;
  }
  if (spec.anchor_pi1) {
    const StatePoint d = pi[0];
    for (int i = 0; i < 5; ++i) {
      xi[i] = xi[i] - d;
      pi[i] = pi[i] - d;
    }
  }

  ConfigBundle b;
  b.beta = spec.beta;
  b.nu0 = spec.nu0;
  b.nu1 = spec.nu1;
  b.delta1 = spec.delta1;
  b.mode = "synthetic";

  auto make_fiber = [&](const Vec8& q) {
    T5Fiber f;
    f.q = q;
    f.lam = spec.lam;
    for (int i = 0; i < 5; ++i) {
      f.xi[i] = from_vec8(to_vec8(xi[i]) + spec.slope * q);
      f.pi[i] = from_vec8(to_vec8(pi[i]) + spec.slope * q);
    }
    return f;
  };
  b.fibers.push_back(make_fiber(Vec8::Zero()));
  for (int d = 0; d < 8; ++d)
    for (int s : {+1, -1}) {
      Vec8 q = Vec8::Zero();
      q[d] = 0.5 * spec.beta * s;
      b.fibers.push_back(make_fiber(q));
    }
  b.rebuild_affine_model();

  PropertyReport rep = verify_properties(b, 16);
  if (!(rep.p1_min_margin_xi > 0.0 && rep.p1_min_margin_pi > 0.0))
    throw std::runtime_error("make_synthetic: (P1) separation margins not positive");
  return b;
}

ConfigBundle search_config(const PolyconvexEnergy& E, const ConfigBundle& seed, int iters) {
  ConfigBundle b = seed;
  auto graph_residual = [&](const ConfigBundle& bb) {
    double worst = 0.0;
    for (const auto& f : bb.fibers)
      for (int i = 0; i < 5; ++i) worst = std::max(worst, residual_f(E, f.xi[i]).norm());
    return worst;
  };
  if (graph_residual(b) <= 1e-8) {
    b.mode = "graph-certified";
    return b;
  }
  const auto nu = chain_coefficients(b.center().lam);
  for (int it = 0; it < std::max(1, iters); ++it) {
    // Project flux slots onto the graph at every sampled fiber, then refit the
    // affine fiber model and recompute pi by the chain algebra.
    for (auto& f : b.fibers) {
      for (int i = 0; i < 5; ++i) f.xi[i].B = eval_DF(E, f.xi[i].A);
      for (int i = 0; i < 5; ++i) {
        StatePoint acc;
        for (int j = 0; j < 5; ++j) acc = acc + nu[i][j] * f.xi[j];
        f.pi[i] = acc;
      }
    }
    b.rebuild_affine_model();
    if (graph_residual(b) <= 1e-8) break;
  }
  b.mode = graph_residual(b) <= 1e-8 ? "graph-certified" : "synthetic";
  return b;
}

WaveFrame detect_wave_frame(const ConfigBundle& bundle) {
  WaveFrame w;
  const T5Fiber& c = bundle.center();
  const double scale = std::max(1e-300, bundle.diameter());

  Eigen::MatrixXd M(5, 4);
  for (int k = 0; k < 5; ++k) M.row(k) = proj_A(c.xi[k] - c.pi[k]).transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinV);
  if (svd.singularValues()[1] > 1e-7 * svd.singularValues()[0]) {
    w.why = "gradient parts of chain directions are not collinear";
    return w;
  }
  Eigen::Vector4d v = svd.matrixV().col(0);
  Mat2 D(v[0], v[1], v[2], v[3]);
  Eigen::Matrix2d Dm;
  Dm << D.e[0], D.e[1], D.e[2], D.e[3];
  Eigen::JacobiSVD<Eigen::Matrix2d> svd2(Dm, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd2.singularValues()[1] > 1e-7 * svd2.singularValues()[0]) {
    w.why = "common gradient direction is not rank one";
    return w;
  }
  Eigen::Vector2d a = svd2.matrixU().col(0);
  Eigen::Vector2d n = svd2.matrixV().col(0);
  // n must be an axis direction.
  int axis = std::fabs(n[0]) >= std::fabs(n[1]) ? 0 : 1;
  if (std::fabs(n[1 - axis]) > 1e-7) {
    w.why = "wave normal is not axis-aligned";
    return w;
  }
  if (n[axis] < 0.0) {
    n = -n;
    a = -a;
  }
  w.s_axis = axis;
  w.a = {a[0], a[1]};
  // nperp = rotate90(n): e1 -> e2, e2 -> -e1.
  w.nperp = axis == 0 ? std::array<double, 2>{0.0, 1.0} : std::array<double, 2>{-1.0, 0.0};

  // Flux parts of chain directions must annihilate n, and all gradient parts
  // must lie on the common line.
  double worst = 0.0;
  const Mat2 T = Mat2::outer(w.a, axis == 0 ? std::array<double, 2>{1.0, 0.0}
                                            : std::array<double, 2>{0.0, 1.0});
  const Mat2 Aref = c.pi[0].A;
  for (int k = 0; k < 5; ++k) {
    const Mat2 CB = c.xi[k].B - c.pi[k].B;
    const auto col = CB.apply(axis == 0 ? std::array<double, 2>{1.0, 0.0}
                                        : std::array<double, 2>{0.0, 1.0});
    worst = std::max(worst, std::hypot(col[0], col[1]));
    for (const Mat2* A : {&c.xi[k].A, &c.pi[k].A}) {
      const double p = dot(*A - Aref, T) / dot(T, T);
      worst = std::max(worst, (*A - Aref - T * p).norm());
    }
  }
  w.detect_residual = worst;
  if (worst > 1e-7 * scale) {
    w.why = "configuration leaves the wave-compatible subspace";
    return w;
  }
  w.valid = true;
  return w;
}

std::string bundle_to_json(const ConfigBundle& b) {
  nlohmann::ordered_json j;
  j["beta"] = b.beta;
  j["nu0"] = b.nu0;
  j["nu1"] = b.nu1;
  j["delta1"] = b.delta1;
  j["mode"] = b.mode;
  j["membership_tol"] = b.membership_tol;
  j["fibers"] = nlohmann::ordered_json::array();
  for (const auto& f : b.fibers) {
    nlohmann::ordered_json jf;
    jf["q"] = std::vector<double>(f.q.data(), f.q.data() + 8);
    auto dump5 = [&](const std::array<StatePoint, 5>& pts) {
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (const auto& p : pts) {
        std::vector<double> v(8);
        for (int k = 0; k < 8; ++k) v[k] = p.coord(k);
        arr.push_back(v);
      }
      return arr;
    };
    jf["xi"] = dump5(f.xi);
    jf["pi"] = dump5(f.pi);
    jf["lam"] = std::vector<double>(f.lam.begin(), f.lam.end());
    j["fibers"].push_back(jf);
  }
  return j.dump(2);
}

ConfigBundle bundle_from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  ConfigBundle b;
  b.beta = j.at("beta").get<double>();
  b.nu0 = j.at("nu0").get<double>();
  b.nu1 = j.at("nu1").get<double>();
  b.delta1 = j.at("delta1").get<double>();
  b.mode = j.at("mode").get<std::string>();
  b.membership_tol = j.value("membership_tol", 1e-7);
  for (const auto& jf : j.at("fibers")) {
    T5Fiber f;
    auto q = jf.at("q").get<std::vector<double>>();
    for (int k = 0; k < 8; ++k) f.q[k] = q.at(k);
    auto load5 = [&](const char* key, std::array<StatePoint, 5>& pts) {
      const auto arr = jf.at(key);
      for (int i = 0; i < 5; ++i) {
        auto v = arr.at(i).get<std::vector<double>>();
        for (int k = 0; k < 8; ++k) pts[i].coord(k) = v.at(k);
      }
    };
    load5("xi", f.xi);
    load5("pi", f.pi);
    auto lam = jf.at("lam").get<std::vector<double>>();
    for (int i = 0; i < 5; ++i) f.lam[i] = lam.at(i);
    b.fibers.push_back(f);
  }
  b.rebuild_affine_model();
  return b;
}

ConfigBundle make_wave_bundle(const WaveBundleParams& P) {
  const double sg = P.sigma;
  const int ax = P.s_axis;
  const std::array<double, 2> a{1.0, 0.0};
  const std::array<double, 2> n = ax == 0 ? std::array<double, 2>{1.0, 0.0}
                                          : std::array<double, 2>{0.0, 1.0};
  const std::array<double, 2> nperp = ax == 0 ? std::array<double, 2>{0.0, 1.0}
                                              : std::array<double, 2>{-1.0, 0.0};
  const Mat2 T = Mat2::outer(a, n);
  const Mat2 B1 = Mat2::outer({0.0, 1.0}, nperp);  // det-compatible flux direction
  const Mat2 B2 = Mat2::outer({1.0, 0.0}, nperp);

  // Gradient-line positions and a generic flux spread in span{B1,B2}.
  const std::array<double, 5> pxi{-2.0 * sg, -1.0 * sg, 0.0, 1.0 * sg, 2.0 * sg};
  const std::array<std::array<double, 2>, 5> mxi{{{1.0, 0.3},
                                                  {-0.5, 1.0},
                                                  {-1.0, -0.8},
                                                  {0.6, -1.0},
                                                  {0.2, 0.5}}};
  SyntheticSpec spec;
  spec.beta = P.beta;
  spec.nu0 = P.nu0;
  spec.nu1 = P.nu1;
  spec.delta1 = P.delta1;
  for (int i = 0; i < 5; ++i) {
    spec.lam[i] = P.lambda_value;
    spec.xi[i].A = T * pxi[i];
    spec.xi[i].B = B1 * (sg * mxi[i][0]) + B2 * (sg * mxi[i][1]);
  }

  // Anisotropic fibering in the adapted orthonormal basis of R^8: thin gain
  // along T (constrained by (P1)), fat gains elsewhere (absorb collar
  // derivative spikes of the oscillation construction).
  const double collar = std::max(P.collar, 1e-6);
  const double chi_slope = 1.8 / (0.5 * collar);
  const double lobe_peak = 2.0 / (0.5 * collar);
  double thin = P.thin_gain > 0 ? P.thin_gain : 0.05 * sg / P.beta;
  double fatA = P.fatA_gain > 0 ? P.fatA_gain : 4.0 * chi_slope * 1.5 * sg / P.beta;
  double fatB = P.fatB_gain > 0 ? P.fatB_gain : 8.0 * chi_slope * lobe_peak * 2.0 * sg / P.beta;

  // Orthonormal basis: b0 = T, b1..b3 complete the A block, b4..b7 the B block.
  std::array<Mat2, 4> Abasis{T, Mat2::outer(a, nperp),
                             Mat2::outer({-a[1], a[0]}, n), Mat2::outer({-a[1], a[0]}, nperp)};
  std::array<Mat2, 4> Bbasis{B1, B2, Mat2::outer({0.0, 1.0}, n), Mat2::outer({1.0, 0.0}, n)};
  Mat8 S = Mat8::Zero();
  auto add_dyad = [&](const Vec8& dir, double gain) { S += gain * dir * dir.transpose(); };
  for (int k = 0; k < 4; ++k) {
    StatePoint e;
    e.A = Abasis[k];
    add_dyad(to_vec8(e), k == 0 ? thin : fatA);
  }
  for (int k = 0; k < 4; ++k) {
    StatePoint e;
    e.B = Bbasis[k];
    add_dyad(to_vec8(e), fatB);
  }
  spec.slope = S;

  ConfigBundle b = make_synthetic(spec);
  b.membership_tol = P.membership_tol;
  WaveFrame w = detect_wave_frame(b);
  if (!w.valid) throw std::runtime_error("make_wave_bundle: frame detection failed: " + w.why);
  return b;
}

}  // namespace polyflow
