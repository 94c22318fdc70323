#include "polyflow/mat.hpp"

#include <ostream>

namespace polyflow {

double det2(const Mat2& a) { return a.e[0] * a.e[3] - a.e[1] * a.e[2]; }

Mat2 cof2(const Mat2& a) { return {a.e[3], -a.e[2], -a.e[1], a.e[0]}; }

std::ostream& operator<<(std::ostream& os, const Mat2& m) {
  return os << "[[" << m.e[0] << "," << m.e[1] << "],[" << m.e[2] << "," << m.e[3] << "]]";
}

std::ostream& operator<<(std::ostream& os, const StatePoint& x) {
  return os << "(A=" << x.A << ", B=" << x.B << ")";
}

}  // namespace polyflow
