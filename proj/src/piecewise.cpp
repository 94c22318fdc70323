#include "polyflow/piecewise.hpp"

namespace polyflow {

Piecewise smoothstep_up(double a, double b) {
  // s(u) = 3u^2 - 2u^3 with u = (x-a)/h; coefficients in local x-a.
  const double h = b - a;
  Piecewise::Coef c{};
  c[2] = 3.0 / (h * h);
  c[3] = -2.0 / (h * h * h);
  return Piecewise({a, b}, {c});
}

Piecewise plateau_profile(double x0, double x1, double pad, double ramp) {
  if (!(x0 + 2 * (pad + ramp) < x1)) throw std::runtime_error("plateau_profile: no room");
  const double a = x0 + pad, b = a + ramp;
  const double d = x1 - pad, cst = d - ramp;
  std::vector<double> knots{x0, a, b, cst, d, x1};
  std::vector<Piecewise::Coef> coef(5);
  coef[0] = Piecewise::Coef{0.0};
  {  // rise 0 -> 1
    Piecewise::Coef c{};
    c[2] = 3.0 / (ramp * ramp);
    c[3] = -2.0 / (ramp * ramp * ramp);
    coef[1] = c;
  }
  coef[2] = Piecewise::Coef{1.0};
  {  // fall 1 -> 0
    Piecewise::Coef c{};
    c[0] = 1.0;
    c[2] = -3.0 / (ramp * ramp);
    c[3] = 2.0 / (ramp * ramp * ramp);
    coef[3] = c;
  }
  coef[4] = Piecewise::Coef{0.0};
  return Piecewise(knots, coef);
}

Piecewise unit_bump(double a, double b) {
  const double h = b - a;
  // 6 u (1-u) / h in u = (x-a)/h: integral 1, vanishing endpoints.
  Piecewise::Coef c{};
  c[1] = 6.0 / (h * h);
  c[2] = -6.0 / (h * h * h);
  return Piecewise({a, b}, {c});
}

}  // namespace polyflow
