#include "polyflow/field.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace polyflow {

void gauss_legendre(int order, std::vector<double>& nodes, std::vector<double>& weights) {
  if (order < 1) throw std::domain_error("gauss_legendre: order >= 1");
  nodes.resize(order);
  weights.resize(order);
  for (int i = 0; i < order; ++i) {
    // Newton iteration from the Chebyshev estimate.
    double x = std::cos(M_PI * (i + 0.75) / (order + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < order; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = order * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / pp;
      x -= dx;
      if (std::fabs(dx) < 1e-15) break;
    }
    nodes[i] = x;
    weights[i] = 2.0 / ((1.0 - x * x) * pp * pp);
  }
}

void AffineAtom::accumulate(const std::array<double, 3>& y, Sample& s) const {
  if (!box.contains(y)) return;
  const auto c = box.center();
  const double dx1 = y[0] - c[0], dx2 = y[1] - c[1], dt = y[2] - c[2];
  for (int i = 0; i < 2; ++i)
    s.u[i] += u0[i] + Du(i, 0) * dx1 + Du(i, 1) * dx2 + ut[i] * dt;
  s.Du += Du;
  s.ut = {s.ut[0] + ut[0], s.ut[1] + ut[1]};
  s.v += v0 + Dv[0] * dx1 + Dv[1] * dx2 + vt * dt;
  s.vt += vt;
  s.divv = {s.divv[0] + Dv[0](0, 0) + Dv[1](0, 1), s.divv[1] + Dv[0](1, 0) + Dv[1](1, 1)};
}

namespace {
// Per-axis bump b(u) = 16 u^2 (1-u)^2, max 1 at u = 1/2, C^1 with flat ends.
inline double bump1(double u) { return 16.0 * u * u * (1.0 - u) * (1.0 - u); }
inline double bump1d(double u) { return 32.0 * u * (1.0 - u) * (1.0 - 2.0 * u); }
}  // namespace

void BumpAtom::accumulate(const std::array<double, 3>& y, Sample& s) const {
  if (!box.contains(y)) return;
  std::array<double, 3> u{}, du{};
  for (int d = 0; d < 3; ++d) {
    const double t = (y[d] - box.lo[d]) / box.extent(d);
    u[d] = bump1(t);
    du[d] = bump1d(t) / box.extent(d);
  }
  const double b = u[0] * u[1] * u[2];
  for (int i = 0; i < 2; ++i) {
    s.u[i] += amplitude[i] * b;
    s.Du(i, 0) += amplitude[i] * du[0] * u[1] * u[2];
    s.Du(i, 1) += amplitude[i] * u[0] * du[1] * u[2];
    s.ut[i] += amplitude[i] * u[0] * u[1] * du[2];
  }
}

double BumpAtom::max_value() const {
  return std::hypot(amplitude[0], amplitude[1]);
}

Sample SpaceTimeField::sample(const std::array<double, 3>& y) const {
  Sample s;
  for (const auto& a : atoms) a->accumulate(y, s);
  return s;
}

std::vector<Site> SpaceTimeField::frontier_sites() const {
  std::vector<Site> out;
  for (const auto& a : atoms) {
    auto r = a->regions();
    for (auto& site : r)
      if (site.stage == stage_count) out.push_back(site);
  }
  return out;
}

double SpaceTimeField::ledger_volume() const {
  double v = 0.0;
  for (const auto& r : residual_ledger) v += r.volume;
  return v;
}

NormReport norms(const SpaceTimeField& f, const SpaceTimeField& g, const Quadrature& quad) {
  for (int d = 0; d < 3; ++d)
    if (std::fabs(f.domain.lo[d] - g.domain.lo[d]) > 1e-12 ||
        std::fabs(f.domain.hi[d] - g.domain.hi[d]) > 1e-12)
      throw std::runtime_error("norms: mismatched domains");

  std::vector<double> xg, wg;
  gauss_legendre(std::max(2, quad.order), xg, wg);
  const int cells = std::max(4, quad.subgrid);
  NormReport rep;
  rep.resolution = cells * static_cast<int>(xg.size());
  std::array<double, 3> h{};
  for (int d = 0; d < 3; ++d) h[d] = f.domain.extent(d) / cells;

  for (int i = 0; i < cells; ++i)
    for (int j = 0; j < cells; ++j)
      for (int k = 0; k < cells; ++k) {
        const std::array<double, 3> lo{f.domain.lo[0] + i * h[0], f.domain.lo[1] + j * h[1],
                                       f.domain.lo[2] + k * h[2]};
        for (size_t a = 0; a < xg.size(); ++a)
          for (size_t b = 0; b < xg.size(); ++b)
            for (size_t c = 0; c < xg.size(); ++c) {
              const std::array<double, 3> y{lo[0] + 0.5 * h[0] * (1.0 + xg[a]),
                                            lo[1] + 0.5 * h[1] * (1.0 + xg[b]),
                                            lo[2] + 0.5 * h[2] * (1.0 + xg[c])};
              const double w = wg[a] * wg[b] * wg[c] * h[0] * h[1] * h[2] / 8.0;
              const Sample sf = f.sample(y), sg = g.sample(y);
              const double dv = std::hypot(sf.u[0] - sg.u[0], sf.u[1] - sg.u[1]);
              rep.l1_value += w * dv;
              rep.l1_Du += w * (sf.Du - sg.Du).norm();
              rep.linf_value = std::max(rep.linf_value, dv);
              rep.linf_ut = std::max(
                  rep.linf_ut, std::hypot(sf.ut[0] - sg.ut[0], sf.ut[1] - sg.ut[1]));
            }
      }
  return rep;
}

double FractionRow::fraction_of(const std::string& label) const {
  for (const auto& [k, v] : fractions)
    if (k == label) return v;
  return 0.0;
}

std::vector<FractionRow> measure_fraction(const SpaceTimeField& f, const Classifier& classify,
                                          const std::vector<Cube>& region,
                                          const Quadrature& quad) {
  std::vector<FractionRow> rows;
  const int n = std::max(2, quad.subgrid);
  for (const auto& cube : region) {
    FractionRow row;
    row.cube = cube;
    std::vector<std::pair<std::string, int>> counts;
    const Box3 b = cube.box();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
          const std::array<double, 3> y{b.lo[0] + (i + 0.5) / n * b.extent(0),
                                        b.lo[1] + (j + 0.5) / n * b.extent(1),
                                        b.lo[2] + (k + 0.5) / n * b.extent(2)};
          const std::string lab = classify(f.sample(y).state());
          bool found = false;
          for (auto& [kk, c] : counts)
            if (kk == lab) {
              ++c;
              found = true;
            }
          if (!found) counts.push_back({lab, 1});
        }
    const double total = static_cast<double>(n) * n * n;
    std::sort(counts.begin(), counts.end());
    for (const auto& [kk, c] : counts) row.fractions.push_back({kk, c / total});
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

bool cube_inside_region(const Cube& c, const RegionPredicate& region) {
  const Box3 b = c.box();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) {
        const std::array<double, 3> y{b.lo[0] + 0.5 * i * b.extent(0),
                                      b.lo[1] + 0.5 * j * b.extent(1),
                                      b.lo[2] + 0.5 * k * b.extent(2)};
        if (!region(y)) return false;
      }
  return true;
}

bool cube_touches_region(const Cube& c, const RegionPredicate& region) {
  const Box3 b = c.box();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) {
        const std::array<double, 3> y{b.lo[0] + 0.5 * i * b.extent(0),
                                      b.lo[1] + 0.5 * j * b.extent(1),
                                      b.lo[2] + 0.5 * k * b.extent(2)};
        if (region(y)) return true;
      }
  return false;
}

void vitali_recurse(const Cube& c, const RegionPredicate& region, double eps, int depth,
                    int max_depth, std::vector<Cube>& out) {
  if (!cube_touches_region(c, region)) return;
  if (c.radius < eps && cube_inside_region(c, region)) {
    out.push_back(c);
    return;
  }
  if (depth >= max_depth) return;
  const double r = 0.5 * c.radius;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) {
        Cube child{{c.center[0] + (2 * i - 1) * r, c.center[1] + (2 * j - 1) * r,
                    c.center[2] + (2 * k - 1) * r},
                   r};
        vitali_recurse(child, region, eps, depth + 1, max_depth, out);
      }
}

}  // namespace

VitaliResult vitali_cover(const RegionPredicate& region, const Cube& bounding, double eps,
                          double eta, int max_depth) {
  if (!(eps > 0.0 && eta > 0.0)) throw std::domain_error("vitali_cover: eps, eta > 0");
  VitaliResult res;
  vitali_recurse(bounding, region, eps, 0, max_depth, res.cubes);
  // Sampled region measure on a midpoint grid.
  const int n = 48;
  const Box3 b = bounding.box();
  long inside = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const std::array<double, 3> y{b.lo[0] + (i + 0.5) / n * b.extent(0),
                                      b.lo[1] + (j + 0.5) / n * b.extent(1),
                                      b.lo[2] + (k + 0.5) / n * b.extent(2)};
        if (region(y)) ++inside;
      }
  const double measure = b.volume() * inside / (static_cast<double>(n) * n * n);
  double covered = 0.0;
  for (const auto& c : res.cubes) covered += c.volume();
  res.covered_fraction = measure > 0.0 ? std::min(1.0, covered / measure) : 1.0;
  res.achieved_eta = 1.0 - res.covered_fraction;
  res.eta_met = res.achieved_eta <= eta;
  return res;
}

SpaceTimeField attach(const SpaceTimeField& f, const Cube& cube,
                      std::shared_ptr<const FieldAtom> atom) {
  const Box3 cb = cube.box();
  if (!f.domain.contains_box(cb)) throw std::runtime_error("attach: cube outside domain");
  for (const auto& a : f.atoms) {
    const Box3 s = a->support();
    const bool inside = s.contains_box(cb);
    bool outside = false;
    for (int d = 0; d < 3; ++d)
      if (cb.lo[d] >= s.hi[d] - 1e-14 || cb.hi[d] <= s.lo[d] + 1e-14) {
        outside = true;
        break;
      }
    if (!inside && !outside) throw std::runtime_error("attach: cube straddles an existing leaf");
  }
  if (!cb.contains_box(atom->support()))
    throw std::runtime_error("attach: atom support escapes the cube");
  // Boundary compatibility: the atom contribution must vanish on the cube faces.
  const int n = 5;
  for (int face = 0; face < 6; ++face) {
    const int d = face / 2;
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j <= n; ++j) {
        std::array<double, 3> y;
        y[d] = face % 2 == 0 ? cb.lo[d] : cb.hi[d];
        const int d1 = (d + 1) % 3, d2 = (d + 2) % 3;
        y[d1] = cb.lo[d1] + cb.extent(d1) * i / n;
        y[d2] = cb.lo[d2] + cb.extent(d2) * j / n;
        Sample s;
        atom->accumulate(y, s);
        if (std::hypot(s.u[0], s.u[1]) > 1e-8 || s.v.norm() > 1e-8)
          throw std::runtime_error("attach: atom boundary-incompatible (face jump > 1e-8)");
      }
  }
  SpaceTimeField out = f;
  out.atoms.push_back(std::move(atom));
  return out;
}

PartitionResult partition_cubes(const Box3& box, double max_rad, int max_per_dim) {
  PartitionResult res;
  double side = std::min(2.0 * max_rad * (1.0 - 1e-9), box.min_extent());
  std::array<int, 3> n{};
  for (int d = 0; d < 3; ++d)
    n[d] = std::min(max_per_dim, std::max(1, static_cast<int>(std::floor(box.extent(d) / side))));
  for (int i = 0; i < n[0]; ++i)
    for (int j = 0; j < n[1]; ++j)
      for (int k = 0; k < n[2]; ++k) {
        Cube c;
        c.radius = 0.5 * side;
        c.center = {box.lo[0] + (i + 0.5) * side, box.lo[1] + (j + 0.5) * side,
                    box.lo[2] + (k + 0.5) * side};
        res.cubes.push_back(c);
      }
  res.remainder_volume =
      box.volume() - static_cast<double>(n[0]) * n[1] * n[2] * side * side * side;
  return res;
}

void export_field(const SpaceTimeField& f, const std::string& dir, int grid, bool binary) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::ordered_json index;
  index["domain"] = {{"lo", f.domain.lo}, {"hi", f.domain.hi}};
  index["grid"] = grid;
  index["format"] = binary ? "binary" : "csv";
  index["atoms"] = nlohmann::ordered_json::array();
  for (size_t i = 0; i < f.atoms.size(); ++i) {
    const Box3 s = f.atoms[i]->support();
    index["atoms"].push_back({{"id", i},
                              {"kind", f.atoms[i]->kind()},
                              {"lo", s.lo},
                              {"hi", s.hi}});
  }
  index["residual_ledger_volume"] = f.ledger_volume();
  std::ofstream(dir + "/index.json") << index.dump(2) << "\n";

  const std::string path = dir + (binary ? "/grid.bin" : "/grid.csv");
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!binary) os << "x1,x2,t,u1,u2,v11,v12,v21,v22\n";
  char buf[512];
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j)
      for (int k = 0; k < grid; ++k) {
        const std::array<double, 3> y{f.domain.lo[0] + (i + 0.5) / grid * f.domain.extent(0),
                                      f.domain.lo[1] + (j + 0.5) / grid * f.domain.extent(1),
                                      f.domain.lo[2] + (k + 0.5) / grid * f.domain.extent(2)};
        const Sample s = f.sample(y);
        if (binary) {
          double rec[9] = {y[0], y[1], y[2], s.u[0], s.u[1], s.v.e[0], s.v.e[1], s.v.e[2],
                           s.v.e[3]};
          os.write(reinterpret_cast<const char*>(rec), sizeof(rec));
        } else {
          std::snprintf(buf, sizeof(buf),
                        "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", y[0], y[1],
                        y[2], s.u[0], s.u[1], s.v.e[0], s.v.e[1], s.v.e[2], s.v.e[3]);
          os << buf;
        }
      }
}

}  // namespace polyflow
