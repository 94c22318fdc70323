#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace polyflow {

/// Piecewise polynomial on [knots.front(), knots.back()], degree <= 7.
/// Piece i holds coefficients in the local variable u = x - knots[i].
/// Evaluation outside the knot range clamps to the end values of the
/// boundary pieces (callers arrange profiles so that this is the correct
/// extension, typically zero).
class Piecewise {
 public:
  static constexpr int kMaxCoef = 8;
  using Coef = std::array<double, kMaxCoef>;

  Piecewise() = default;
  Piecewise(std::vector<double> knots, std::vector<Coef> coef)
      : knots_(std::move(knots)), coef_(std::move(coef)) {
    if (knots_.size() != coef_.size() + 1 || coef_.empty())
      throw std::runtime_error("piecewise: inconsistent sizes");
  }

  /// Constant function on [lo, hi].
  static Piecewise constant(double lo, double hi, double c) {
    return Piecewise({lo, hi}, {Coef{c}});
  }

  /// Piecewise-constant from breakpoints and values (values.size()+1 knots).
  static Piecewise step(const std::vector<double>& knots, const std::vector<double>& values) {
    std::vector<Coef> c(values.size());
    for (size_t i = 0; i < values.size(); ++i) c[i] = Coef{values[i]};
    return Piecewise(knots, c);
  }

  /// Piecewise-linear interpolant through (knots[i], values[i]).
  static Piecewise linear(const std::vector<double>& knots, const std::vector<double>& values) {
    if (knots.size() != values.size() || knots.size() < 2)
      throw std::runtime_error("piecewise: bad linear spec");
    std::vector<Coef> c(knots.size() - 1);
    for (size_t i = 0; i + 1 < knots.size(); ++i) {
      const double h = knots[i + 1] - knots[i];
      c[i] = Coef{values[i], h > 0 ? (values[i + 1] - values[i]) / h : 0.0};
    }
    return Piecewise(knots, c);
  }

  double lo() const { return knots_.front(); }
  double hi() const { return knots_.back(); }
  const std::vector<double>& knots() const { return knots_; }

  double eval(double x) const {
    int i = piece(x);
    const double u = clampu(x, i);
    const auto& c = coef_[i];
    double r = 0.0;
    for (int k = kMaxCoef - 1; k >= 0; --k) r = r * u + c[k];
    return r;
  }

  /// One-sided derivative (right-sided inside pieces).
  double deriv(double x) const {
    int i = piece(x);
    const double u = clampu(x, i);
    const auto& c = coef_[i];
    double r = 0.0;
    for (int k = kMaxCoef - 1; k >= 1; --k) r = r * u + k * c[k];
    return r;
  }

  /// Antiderivative with F(lo) = c0; continuous across pieces.
  Piecewise antiderivative(double c0 = 0.0) const {
    std::vector<Coef> out(coef_.size());
    double acc = c0;
    for (size_t i = 0; i < coef_.size(); ++i) {
      Coef c{};
      c[0] = acc;
      for (int k = 0; k + 1 < kMaxCoef; ++k) c[k + 1] = coef_[i][k] / (k + 1);
      out[i] = c;
      const double h = knots_[i + 1] - knots_[i];
      double v = 0.0;
      for (int k = kMaxCoef - 1; k >= 0; --k) v = v * h + c[k];
      acc = v;
    }
    return Piecewise(knots_, out);
  }

  double integral() const {
    Piecewise F = antiderivative();
    return F.eval(hi()) - F.eval(lo());
  }

  /// First moment about the origin coordinate: integral of x*f(x) dx.
  double first_moment() const {
    // integral x f = [x F] - integral F, with F the antiderivative.
    Piecewise F = antiderivative();
    Piecewise FF = F.antiderivative();
    return hi() * F.eval(hi()) - lo() * F.eval(lo()) - (FF.eval(hi()) - FF.eval(lo()));
  }

  double max_abs(int samples_per_piece = 24) const {
    double m = 0.0;
    for (size_t i = 0; i < coef_.size(); ++i)
      for (int s = 0; s <= samples_per_piece; ++s) {
        const double x = knots_[i] + (knots_[i + 1] - knots_[i]) * s / samples_per_piece;
        m = std::max(m, std::fabs(eval(x)));
      }
    return m;
  }

  Piecewise scaled(double s) const {
    std::vector<Coef> out(coef_.size());
    for (size_t i = 0; i < coef_.size(); ++i)
      for (int k = 0; k < kMaxCoef; ++k) out[i][k] = coef_[i][k] * s;
    return Piecewise(knots_, out);
  }

 private:
  int piece(double x) const {
    if (x <= knots_.front()) return 0;
    if (x >= knots_.back()) return static_cast<int>(coef_.size()) - 1;
    int i = static_cast<int>(std::upper_bound(knots_.begin(), knots_.end(), x) - knots_.begin()) - 1;
    return std::clamp(i, 0, static_cast<int>(coef_.size()) - 1);
  }
  double clampu(double x, int i) const {
    const double u = x - knots_[i];
    const double h = knots_[i + 1] - knots_[i];
    return std::clamp(u, 0.0, h);
  }

  std::vector<double> knots_;
  std::vector<Coef> coef_;
};

/// C^1 smoothstep 0 -> 1 over [a, b] as a cubic piece (3u^2-2u^3 rescaled).
Piecewise smoothstep_up(double a, double b);

/// Plateau profile: 0 on [x0, x0+pad], rise over ramp, 1 on the core,
/// fall, 0 on the trailing pad.  All pieces C^1.
Piecewise plateau_profile(double x0, double x1, double pad, double ramp);

/// C^0 bump with unit integral supported on [a, b]: 6u(1-u)/(b-a) in u=(x-a)/(b-a).
Piecewise unit_bump(double a, double b);

}  // namespace polyflow
