#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "polyflow/mat.hpp"
#include "polyflow/t5.hpp"

namespace polyflow {

/// Axis-aligned box in (x1, x2, t).
struct Box3 {
  std::array<double, 3> lo{0, 0, 0};
  std::array<double, 3> hi{1, 1, 1};

  double extent(int d) const { return hi[d] - lo[d]; }
  double volume() const { return extent(0) * extent(1) * extent(2); }
  std::array<double, 3> center() const {
    return {0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])};
  }
  bool contains(const std::array<double, 3>& y, double pad = 0.0) const {
    for (int d = 0; d < 3; ++d)
      if (y[d] < lo[d] - pad || y[d] > hi[d] + pad) return false;
    return true;
  }
  bool contains_box(const Box3& b, double pad = 1e-14) const {
    for (int d = 0; d < 3; ++d)
      if (b.lo[d] < lo[d] - pad || b.hi[d] > hi[d] + pad) return false;
    return true;
  }
  double min_extent() const { return std::min({extent(0), extent(1), extent(2)}); }
};

/// Closed cube y + l [-1,1]^3 with radius l (paper's rad(Q_{y,l}) = l).
struct Cube {
  std::array<double, 3> center{0, 0, 0};
  double radius = 1.0;
  Box3 box() const {
    return {{center[0] - radius, center[1] - radius, center[2] - radius},
            {center[0] + radius, center[1] + radius, center[2] + radius}};
  }
  double volume() const { return 8.0 * radius * radius * radius; }
};

struct Quadrature {
  int order = 5;    // Gauss-Legendre points per axis
  int subgrid = 8;  // membership subgrid resolution per axis
};

/// Gauss-Legendre nodes/weights on [-1,1].
void gauss_legendre(int order, std::vector<double>& nodes, std::vector<double>& weights);

/// Field data at a point.
struct Sample {
  std::array<double, 2> u{0, 0};
  Mat2 Du;
  std::array<double, 2> ut{0, 0};
  Mat2 v;
  Mat2 vt;
  std::array<double, 2> divv{0, 0};
  StatePoint state() const { return {Du, vt}; }
};

/// A classified exact-state region produced by an oscillation atom.
struct Site {
  Box3 box;
  int branch = 0;      // 1..5
  double lambda = 0.0; // level of the state on its segment
  Vec8 q = Vec8::Zero();
  StatePoint state;    // exact (Du, dt v) on the region, relative to host
  int stage = 0;
};

/// Abstract leaf payload: adds a compactly supported contribution.
class FieldAtom {
 public:
  virtual ~FieldAtom() = default;
  virtual Box3 support() const = 0;
  virtual void accumulate(const std::array<double, 3>& y, Sample& s) const = 0;
  /// Exact-state sub-regions (empty for plain perturbations).
  virtual std::vector<Site> regions() const { return {}; }
  virtual std::string kind() const = 0;
};

/// Affine atom: u affine in (x,t), v affine, with div v = u arranged by caller.
class AffineAtom : public FieldAtom {
 public:
  Box3 box;
  std::array<double, 2> u0{0, 0};
  Mat2 Du;
  std::array<double, 2> ut{0, 0};
  Mat2 v0;
  Mat2 vt;
  std::array<Mat2, 2> Dv{};  // spatial derivative of v: Dv[d] = d v / d x_d

  Box3 support() const override { return box; }
  void accumulate(const std::array<double, 3>& y, Sample& s) const override;
  std::string kind() const override { return "affine"; }
};

/// Product-bump perturbation of u (zero v); used by attach tests.
class BumpAtom : public FieldAtom {
 public:
  Box3 box;
  std::array<double, 2> amplitude{0, 0};

  Box3 support() const override { return box; }
  void accumulate(const std::array<double, 3>& y, Sample& s) const override;
  std::string kind() const override { return "bump"; }
  double max_value() const;  // closed-form extremum of the bump profile
};

struct ResidualRecord {
  Box3 box;
  double volume = 0.0;
  std::string note;
};

/// Piecewise-C^1 space-time field: ordered stack of compactly supported atoms
/// over a rectangular domain, with explicit residual-measure bookkeeping.
class SpaceTimeField {
 public:
  Box3 domain;
  std::vector<std::shared_ptr<const FieldAtom>> atoms;  // insertion = stage order
  std::vector<ResidualRecord> residual_ledger;
  int stage_count = 0;

  Sample sample(const std::array<double, 3>& y) const;
  /// Deepest exact-state regions (the refinement frontier).
  std::vector<Site> frontier_sites() const;
  double ledger_volume() const;
};

struct NormReport {
  double l1_value = 0.0;
  double l1_Du = 0.0;
  double linf_value = 0.0;
  double linf_ut = 0.0;
  int resolution = 0;  // sup estimates are sampled lower bounds at this grid
};

/// Norms of the difference f - g per Theorem 4.1(c)/(f) bookkeeping.
NormReport norms(const SpaceTimeField& f, const SpaceTimeField& g, const Quadrature& quad);

using Classifier = std::function<std::string(const StatePoint&)>;

struct FractionRow {
  Cube cube;
  std::vector<std::pair<std::string, double>> fractions;
  double fraction_of(const std::string& label) const;
};

/// Fraction of midpoint-subgrid samples per cube carrying each label.
std::vector<FractionRow> measure_fraction(const SpaceTimeField& f, const Classifier& classify,
                                          const std::vector<Cube>& region, const Quadrature& quad);

struct VitaliResult {
  std::vector<Cube> cubes;
  double covered_fraction = 0.0;  // of the sampled region measure
  double achieved_eta = 0.0;
  bool eta_met = false;
};

using RegionPredicate = std::function<bool(const std::array<double, 3>&)>;

/// Deterministic dyadic Vitali cover of an open region inside a bounding cube:
/// disjoint closed cubes of radius < eps covering >= (1 - eta) of the sampled
/// region measure, or reports the achieved residual at the depth bound.
VitaliResult vitali_cover(const RegionPredicate& region, const Cube& bounding, double eps,
                          double eta, int max_depth = 9);

/// New field with the atom attached on a cube inside the domain; host values
/// unchanged outside.  Throws on overlap/boundary violations.
SpaceTimeField attach(const SpaceTimeField& f, const Cube& cube,
                      std::shared_ptr<const FieldAtom> atom);

/// Uniform cube partition records of a box: cubes of radius < max_rad anchored
/// at the box corner; the uncovered remainder volume is returned.
struct PartitionResult {
  std::vector<Cube> cubes;
  double remainder_volume = 0.0;
};
PartitionResult partition_cubes(const Box3& box, double max_rad, int max_per_dim = 64);

/// Field export: JSON index of atoms plus CSV sample grids.
void export_field(const SpaceTimeField& f, const std::string& dir, int grid, bool binary);

}  // namespace polyflow
