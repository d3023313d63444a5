#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fragto/field.hpp"

namespace fragto {

enum class Physics : uint8_t { elastic = 0, thermal = 1 };

// Nodal degree-of-freedom direction. Elastic nodes carry x (along columns)
// and y (along rows, positive downward); thermal nodes carry a temperature.
enum class Dof : uint8_t { x = 0, y = 1, temp = 2 };

// Element mesh of unit squares: height_elems rows by width_elems columns,
// (h+1) x (w+1) nodes. The passive mask marks permanently void elements
// excluded from the design space.
struct DomainSpec {
  int width_elems = 0;
  int height_elems = 0;
  std::vector<uint8_t> passive_mask;  // row-major h x w; empty = fully active

  bool passive(int r, int c) const {
    return !passive_mask.empty() &&
           passive_mask[static_cast<size_t>(r) * width_elems + c] != 0;
  }
  int active_count() const;
  int element_count() const { return width_elems * height_elems; }
};

struct FixedDof {
  int node_row = 0;
  int node_col = 0;
  Dof dir = Dof::x;
  double value = 0.0;  // prescribed value; 0 for every catalog problem
};

struct BoundaryCondition {
  std::vector<FixedDof> fixed_dofs;
  double prescribed_value = 0.0;
};

struct PointLoad {
  int node_row = 0;
  int node_col = 0;
  Dof dir = Dof::y;
  double magnitude = 0.0;
};

struct LoadSpec {
  std::vector<PointLoad> entries;  // elasticity: nodal forces
  Field2D thermal_source;          // thermal: per-element volumetric source
};

struct TOProblem {
  std::shared_ptr<const DomainSpec> domain;
  BoundaryCondition bc;
  LoadSpec loads;
  double volume_fraction = 0.4;
  Physics physics = Physics::elastic;
  std::string name;
};

// Per-element design variables in [0,1]; exactly 0 at passive elements.
struct DensityField {
  Field2D values;
  std::shared_ptr<const DomainSpec> domain;
};

// Benchmark catalog: cantilever_single, cantilever_multi, l_beam, bridge,
// thermal_small_sink, thermal_large_sink. Throws std::invalid_argument on an
// unknown name or dimensions not divisible by coarsen_ratio.
TOProblem make_problem(const std::string& name, int width, int height, int coarsen_ratio = 16);
const std::vector<std::string>& problem_catalog();

// SIMP start: volume_fraction everywhere active. BESO start (solid_start):
// 1.0 everywhere active. Passive elements are 0 either way.
DensityField uniform_density(const TOProblem& problem, bool solid_start = false);

// Checks the well-posedness invariants (fixed DOFs nonempty, nonzero load /
// nonnegative source, mask dimensions). Throws std::invalid_argument.
void validate_problem(const TOProblem& problem);

}  // namespace fragto
