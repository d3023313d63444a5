#pragma once

#include <array>
#include <cmath>

#include "fragto/grid.hpp"

namespace fragto {

// Unit-material stiffness of the bilinear square element, 2x2 Gauss.
// Elastic: 8x8 plane stress, E = 1, nu = 0.3, DOF order
// (x0,y0,x1,y1,x2,y2,x3,y3) for nodes (r,c),(r,c+1),(r+1,c+1),(r+1,c).
// Thermal: 4x4, unit conductivity, same node order.
struct ElementMatrix {
  int n = 0;
  std::array<double, 64> k{};  // row-major n x n
  double at(int i, int j) const { return k[static_cast<size_t>(i) * n + j]; }
};

ElementMatrix element_stiffness(Physics physics);

// Material interpolation shared by SIMP and soft-kill BESO: a 1e-9 void
// stiffness floor keeps the operator SPD at zero density.
inline constexpr double kVoidStiffness = 1e-9;

inline double stiffness_scale(double density, double penal) {
  return kVoidStiffness + std::pow(density, penal) * (1.0 - kVoidStiffness);
}

struct SolveOptions {
  // Relative-residual stopping target. The solver contract is <= 1e-8; the
  // tighter default buys solution-level agreement with direct solves.
  double tol = 1e-10;
  int max_iter_factor = 10;  // iteration cap = factor * free DOF count
};

struct FemSolution {
  std::vector<double> nodal;  // full nodal vector, prescribed DOFs included
  double compliance = 0.0;    // sum of element energies
  ScalarField element_energy;  // elastic: 1/2 u_e^T k_e(x) u_e; thermal: t_e^T k_e(x) t_e
  int pcg_iterations = 0;
  double residual = 0.0;  // achieved |KU - F| / |F|
};

// Assembles the penalized stiffness system, eliminates prescribed DOFs, and
// solves with diagonally preconditioned conjugate gradients. Throws
// std::runtime_error on singular input (no fixed DOFs, all-void density) or
// PCG non-convergence within the iteration cap.
FemSolution assemble_and_solve(const TOProblem& problem, const DensityField& density,
                               double penal, const SolveOptions& opts = {});

// Sum of densities over active elements.
double total_volume(const DensityField& density);

}  // namespace fragto
