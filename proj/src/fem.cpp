#include "fragto/fem.hpp"

#include <Eigen/Sparse>

#include <stdexcept>
#include <vector>

namespace fragto {

namespace {

constexpr double kYoung = 1.0;
constexpr double kPoisson = 0.3;
constexpr double kConductivity = 1.0;

// Shape function derivatives at (xi, eta) for nodes ordered
// (-1,-1), (1,-1), (1,1), (-1,1) in the reference square.
void shape_grads(double xi, double eta, double dN_dxi[4], double dN_deta[4]) {
  dN_dxi[0] = -0.25 * (1 - eta);
  dN_dxi[1] = 0.25 * (1 - eta);
  dN_dxi[2] = 0.25 * (1 + eta);
  dN_dxi[3] = -0.25 * (1 + eta);
  dN_deta[0] = -0.25 * (1 - xi);
  dN_deta[1] = -0.25 * (1 + xi);
  dN_deta[2] = 0.25 * (1 + xi);
  dN_deta[3] = 0.25 * (1 - xi);
}

ElementMatrix elastic_element() {
  ElementMatrix m;
  m.n = 8;
  // Unit square: x = c + (xi+1)/2, y = r + (eta+1)/2 -> J = I/2, detJ = 1/4,
  // d/dx = 2 d/dxi. Plane stress D, unit thickness.
  const double f = kYoung / (1.0 - kPoisson * kPoisson);
  const double D[3][3] = {{f, f * kPoisson, 0.0},
                          {f * kPoisson, f, 0.0},
                          {0.0, 0.0, f * (1.0 - kPoisson) / 2.0}};
  const double g = 1.0 / std::sqrt(3.0);
  for (double xi : {-g, g}) {
    for (double eta : {-g, g}) {
      double dxi[4], deta[4];
      shape_grads(xi, eta, dxi, deta);
      double B[3][8] = {};
      for (int a = 0; a < 4; ++a) {
        const double dNdx = 2.0 * dxi[a], dNdy = 2.0 * deta[a];
        B[0][2 * a] = dNdx;
        B[1][2 * a + 1] = dNdy;
        B[2][2 * a] = dNdy;
        B[2][2 * a + 1] = dNdx;
      }
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
          double s = 0.0;
          for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) s += B[a][i] * D[a][b] * B[b][j];
          m.k[static_cast<size_t>(i) * 8 + j] += s * 0.25;  // detJ
        }
    }
  }
  return m;
}

ElementMatrix thermal_element() {
  ElementMatrix m;
  m.n = 4;
  const double g = 1.0 / std::sqrt(3.0);
  for (double xi : {-g, g}) {
    for (double eta : {-g, g}) {
      double dxi[4], deta[4];
      shape_grads(xi, eta, dxi, deta);
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
          m.k[static_cast<size_t>(i) * 4 + j] +=
              kConductivity * (2.0 * dxi[i] * 2.0 * dxi[j] + 2.0 * deta[i] * 2.0 * deta[j]) *
              0.25;
    }
  }
  return m;
}

// Global DOF index of a node's direction.
inline int dof_index(int node_row, int node_col, Dof dir, int node_cols, int dofs_per_node) {
  const int node = node_row * node_cols + node_col;
  return dofs_per_node == 1 ? node : 2 * node + static_cast<int>(dir);
}

}  // namespace

ElementMatrix element_stiffness(Physics physics) {
  static const ElementMatrix elastic = elastic_element();
  static const ElementMatrix thermal = thermal_element();
  return physics == Physics::elastic ? elastic : thermal;
}

double total_volume(const DensityField& density) {
  const auto& d = *density.domain;
  double v = 0.0;
  for (int r = 0; r < d.height_elems; ++r)
    for (int c = 0; c < d.width_elems; ++c)
      if (!d.passive(r, c)) v += density.values.at(r, c);
  return v;
}

FemSolution assemble_and_solve(const TOProblem& problem, const DensityField& density,
                               double penal, const SolveOptions& opts) {
  const auto& dom = *problem.domain;
  const int w = dom.width_elems, h = dom.height_elems;
  if (density.values.rows != h || density.values.cols != w)
    throw std::invalid_argument("assemble_and_solve: density dimension mismatch");
  if (problem.bc.fixed_dofs.empty())
    throw std::runtime_error("singular system: no fixed DOFs");
  if (total_volume(density) == 0.0)
    throw std::runtime_error("singular system: all-void density");

  const ElementMatrix ke = element_stiffness(problem.physics);
  const int dofs_per_node = problem.physics == Physics::elastic ? 2 : 1;
  const int node_cols = w + 1;
  const int ndof = dofs_per_node * node_cols * (h + 1);

  std::vector<char> fixed(ndof, 0);
  std::vector<double> prescribed(ndof, 0.0);
  for (const auto& f : problem.bc.fixed_dofs) {
    const int i = dof_index(f.node_row, f.node_col, f.dir, node_cols, dofs_per_node);
    fixed[i] = 1;
    prescribed[i] = f.value;
  }

  std::vector<int> free_index(ndof, -1);
  int nfree = 0;
  for (int i = 0; i < ndof; ++i)
    if (!fixed[i]) free_index[i] = nfree++;
  if (nfree == 0) throw std::runtime_error("singular system: no free DOFs");

  // Nodal load vector.
  std::vector<double> load(ndof, 0.0);
  if (problem.physics == Physics::elastic) {
    for (const auto& l : problem.loads.entries)
      load[dof_index(l.node_row, l.node_col, l.dir, node_cols, dofs_per_node)] += l.magnitude;
  } else {
    // Uniform-source element: a quarter of source * area to each corner node.
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const double q = problem.loads.thermal_source.at(r, c) * 0.25;
        if (q == 0.0) continue;
        load[r * node_cols + c] += q;
        load[r * node_cols + c + 1] += q;
        load[(r + 1) * node_cols + c + 1] += q;
        load[(r + 1) * node_cols + c] += q;
      }
  }

  // Element -> global DOF maps, local node order (r,c),(r,c+1),(r+1,c+1),(r+1,c).
  auto element_dofs = [&](int r, int c, int* edof) {
    const int nodes[4] = {r * node_cols + c, r * node_cols + c + 1,
                          (r + 1) * node_cols + c + 1, (r + 1) * node_cols + c};
    for (int a = 0; a < 4; ++a)
      for (int d = 0; d < dofs_per_node; ++d) edof[a * dofs_per_node + d] = dofs_per_node * nodes[a] + d;
  };

  // Reduced-system assembly: prescribed columns move to the right-hand side.
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(w) * h * ke.n * ke.n);
  Eigen::VectorXd rhs(nfree);
  for (int i = 0; i < ndof; ++i)
    if (!fixed[i]) rhs[free_index[i]] = load[i];

  int edof[8];
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double scale = stiffness_scale(density.values.at(r, c), penal);
      element_dofs(r, c, edof);
      for (int i = 0; i < ke.n; ++i) {
        const int gi = edof[i];
        if (fixed[gi]) continue;
        const int fi = free_index[gi];
        for (int j = 0; j < ke.n; ++j) {
          const double v = scale * ke.at(i, j);
          const int gj = edof[j];
          if (fixed[gj]) {
            if (prescribed[gj] != 0.0) rhs[fi] -= v * prescribed[gj];
          } else {
            trips.emplace_back(fi, free_index[gj], v);
          }
        }
      }
    }
  }

  Eigen::SparseMatrix<double> K(nfree, nfree);
  K.setFromTriplets(trips.begin(), trips.end());

  // Diagonally preconditioned conjugate gradients from x0 = 0.
  Eigen::VectorXd inv_diag(nfree);
  for (int i = 0; i < nfree; ++i) {
    const double d = K.coeff(i, i);
    if (!(d > 0.0)) throw std::runtime_error("singular system: nonpositive diagonal");
    inv_diag[i] = 1.0 / d;
  }

  Eigen::VectorXd x = Eigen::VectorXd::Zero(nfree);
  const double bnorm = rhs.norm();
  double rel_residual = 0.0;
  int iterations = 0;
  if (bnorm > 0.0) {
    const long max_iters = static_cast<long>(opts.max_iter_factor) * nfree;
    Eigen::VectorXd r = rhs;
    Eigen::VectorXd z = inv_diag.asDiagonal() * r;
    Eigen::VectorXd p = z;
    Eigen::VectorXd q(nfree);
    double rz = r.dot(z);
    bool converged = false;
    long it = 0;
    while (it < max_iters) {
      q.noalias() = K * p;
      const double pq = p.dot(q);
      if (!(pq > 0.0)) throw std::runtime_error("PCG breakdown: operator not positive definite");
      const double alpha = rz / pq;
      x += alpha * p;
      r -= alpha * q;
      ++it;
      if (r.norm() <= opts.tol * bnorm) {
        // Guard against recurrence drift: accept on the true residual.
        r.noalias() = rhs - K * x;
        if (r.norm() <= opts.tol * bnorm) {
          converged = true;
          break;
        }
      }
      z.noalias() = inv_diag.asDiagonal() * r;
      const double rz_new = r.dot(z);
      p = z + (rz_new / rz) * p;
      rz = rz_new;
    }
    if (!converged) throw std::runtime_error("PCG did not converge within the iteration cap");
    rel_residual = (rhs - K * x).norm() / bnorm;
    iterations = static_cast<int>(it);
  }

  FemSolution sol;
  sol.nodal.assign(ndof, 0.0);
  for (int i = 0; i < ndof; ++i)
    sol.nodal[i] = fixed[i] ? prescribed[i] : x[free_index[i]];
  sol.pcg_iterations = iterations;
  sol.residual = rel_residual;

  // Element energies with the interpolated stiffness; compliance is their sum.
  sol.element_energy = ScalarField(h, w, 0.0);
  const double half = problem.physics == Physics::elastic ? 0.5 : 1.0;
  double compliance = 0.0;
  double ue[8];
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      element_dofs(r, c, edof);
      for (int i = 0; i < ke.n; ++i) ue[i] = sol.nodal[edof[i]];
      double uku = 0.0;
      for (int i = 0; i < ke.n; ++i) {
        double row = 0.0;
        for (int j = 0; j < ke.n; ++j) row += ke.at(i, j) * ue[j];
        uku += ue[i] * row;
      }
      const double e = half * stiffness_scale(density.values.at(r, c), penal) * uku;
      sol.element_energy.at(r, c) = e;
      compliance += e;
    }
  }
  sol.compliance = compliance;
  return sol;
}

}  // namespace fragto
