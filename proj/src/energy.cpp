#include "polyflow/energy.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace polyflow {

namespace {
double lin_form(const GTerm& t, const Mat2& A, double d) { return dot(t.L, A) + t.l * d + t.c0; }
}  // namespace

double GTerm::value(const Mat2& A, double d) const {
  if (kind == "affine") return w * (lin_form(*this, A, d) );
  if (kind == "square") {
    const double q = lin_form(*this, A, d);
    return w * q * q;
  }
  if (kind == "even_power") return w * std::pow(d, 2 * m);
  if (kind == "smooth_max") {
    const double q = lin_form(*this, A, d);
    return w * std::sqrt(q * q + eps * eps);
  }
  throw std::runtime_error("unknown G term kind: " + kind);
}

void GTerm::grad(const Mat2& A, double d, Mat2& dA, double& dd) const {
  if (kind == "affine") {
    dA = L * w;
    dd = w * l;
    return;
  }
  if (kind == "square") {
    const double q = lin_form(*this, A, d);
    dA = L * (2.0 * w * q);
    dd = 2.0 * w * q * l;
    return;
  }
  if (kind == "even_power") {
    dA = Mat2::zero();
    dd = w * 2.0 * m * std::pow(d, 2 * m - 1);
    return;
  }
  if (kind == "smooth_max") {
    const double q = lin_form(*this, A, d);
    const double r = std::sqrt(q * q + eps * eps);
    dA = L * (w * q / r);
    dd = w * q / r * l;
    return;
  }
  throw std::runtime_error("unknown G term kind: " + kind);
}

bool GTerm::convex() const {
  if (kind == "affine") return true;
  if (kind == "square" || kind == "smooth_max") return w >= 0.0;
  if (kind == "even_power") return w >= 0.0 && m >= 1;
  return false;
}

double PolyconvexEnergy::G(const Mat2& A, double d) const {
  double s = 0.0;
  for (const auto& t : terms) s += t.value(A, d);
  return s;
}

void PolyconvexEnergy::dG(const Mat2& A, double d, Mat2& dA, double& dd) const {
  dA = Mat2::zero();
  dd = 0.0;
  for (const auto& t : terms) {
    Mat2 gA;
    double gd;
    t.grad(A, d, gA, gd);
    dA += gA;
    dd += gd;
  }
}

void PolyconvexEnergy::check_convexity(int samples, double tol, unsigned seed) const {
  if (nu <= 0.0) throw std::runtime_error("energy: nu must be positive");
  for (const auto& t : terms)
    if (!t.convex()) throw std::runtime_error("energy: term '" + t.kind + "' reports non-convex");
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int s = 0; s < samples; ++s) {
    Mat2 X(u(rng), u(rng), u(rng), u(rng)), Y(u(rng), u(rng), u(rng), u(rng));
    double dx = u(rng), dy = u(rng);
    Mat2 M = (X + Y) * 0.5;
    const double mid = G(M, 0.5 * (dx + dy));
    const double avg = 0.5 * (G(X, dx) + G(Y, dy));
    const double scale = 1.0 + std::fabs(mid) + std::fabs(avg);
    if (mid > avg + tol * scale)
      throw std::runtime_error("energy: midpoint convexity check failed for G");
  }
}

double eval_F(const PolyconvexEnergy& E, const Mat2& A) {
  return 0.5 * E.nu * dot(A, A) + E.G(A, det2(A));
}

Mat2 eval_DF(const PolyconvexEnergy& E, const Mat2& A) {
  Mat2 dA;
  double dd;
  E.dG(A, det2(A), dA, dd);
  return A * E.nu + dA + cof2(A) * dd;
}

Mat2 residual_f(const PolyconvexEnergy& E, const StatePoint& X) {
  return eval_DF(E, X.A) - X.B;
}

std::string PolyconvexEnergy::to_json() const {
  nlohmann::ordered_json j;
  j["nu"] = nu;
  j["terms"] = nlohmann::ordered_json::array();
  for (const auto& t : terms) {
    nlohmann::ordered_json jt;
    jt["kind"] = t.kind;
    jt["L"] = {t.L.e[0], t.L.e[1], t.L.e[2], t.L.e[3]};
    jt["l"] = t.l;
    jt["c0"] = t.c0;
    jt["w"] = t.w;
    if (t.kind == "even_power") jt["m"] = t.m;
    if (t.kind == "smooth_max") jt["eps"] = t.eps;
    j["terms"].push_back(jt);
  }
  return j.dump(2);
}

PolyconvexEnergy PolyconvexEnergy::from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  PolyconvexEnergy E;
  E.nu = j.at("nu").get<double>();
  if (j.contains("terms")) {
    for (const auto& jt : j["terms"]) {
      GTerm t;
      t.kind = jt.at("kind").get<std::string>();
      if (jt.contains("L")) {
        auto v = jt["L"].get<std::vector<double>>();
        t.L = Mat2(v.at(0), v.at(1), v.at(2), v.at(3));
      }
      t.l = jt.value("l", 0.0);
      t.c0 = jt.value("c0", 0.0);
      t.w = jt.value("w", 1.0);
      t.m = jt.value("m", 1);
      t.eps = jt.value("eps", 1.0);
      E.terms.push_back(t);
    }
  }
  E.check_convexity();
  return E;
}

}  // namespace polyflow
