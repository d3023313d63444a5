#include "fragto/grid.hpp"

#include <cmath>
#include <stdexcept>

namespace fragto {

int DomainSpec::active_count() const {
  if (passive_mask.empty()) return width_elems * height_elems;
  int n = 0;
  for (uint8_t m : passive_mask) n += (m == 0);
  return n;
}

namespace {

// Square node patch: rows r0..r0+side-1, cols c0..c0+side-1, equal nodal
// forces summing to `total` in direction `dir`.
void add_patch_load(TOProblem& p, int r0, int c0, int side, Dof dir, double total) {
  const double per_node = total / (static_cast<double>(side) * side);
  for (int r = r0; r < r0 + side; ++r)
    for (int c = c0; c < c0 + side; ++c)
      p.loads.entries.push_back({r, c, dir, per_node});
}

void fix_node(TOProblem& p, int r, int c, Physics physics, bool x_dir, bool y_dir) {
  const double v = p.bc.prescribed_value;
  if (physics == Physics::thermal) {
    p.bc.fixed_dofs.push_back({r, c, Dof::temp, v});
    return;
  }
  if (x_dir) p.bc.fixed_dofs.push_back({r, c, Dof::x, v});
  if (y_dir) p.bc.fixed_dofs.push_back({r, c, Dof::y, v});
}

int patch_side(int width) { return width / 16 > 0 ? width / 16 : 1; }

}  // namespace

const std::vector<std::string>& problem_catalog() {
  static const std::vector<std::string> names = {
      "cantilever_single", "cantilever_multi", "l_beam",
      "bridge",            "thermal_small_sink", "thermal_large_sink"};
  return names;
}

TOProblem make_problem(const std::string& name, int width, int height, int coarsen_ratio) {
  if (width < 2 || height < 2)
    throw std::invalid_argument("make_problem: dimensions must be at least 2x2");
  if (coarsen_ratio < 1)
    throw std::invalid_argument("make_problem: coarsening ratio must be >= 1");
  if (width % coarsen_ratio != 0 || height % coarsen_ratio != 0)
    throw std::invalid_argument("make_problem: dimensions not divisible by coarsening ratio");

  auto domain = std::make_shared<DomainSpec>();
  domain->width_elems = width;
  domain->height_elems = height;

  TOProblem p;
  p.name = name;
  p.volume_fraction = 0.4;
  p.physics = Physics::elastic;

  const int w = width, h = height;
  const int s = patch_side(w);

  if (name == "cantilever_single") {
    for (int r = 0; r <= h; ++r) fix_node(p, r, 0, p.physics, true, true);
    add_patch_load(p, 0, w + 1 - s, s, Dof::y, 1.0);  // upper right corner patch
  } else if (name == "cantilever_multi") {
    for (int r = 0; r <= h; ++r) fix_node(p, r, 0, p.physics, true, true);
    add_patch_load(p, 0, (w + 1 - s) / 2, s, Dof::y, 1.0);            // top edge center
    add_patch_load(p, (h + 1 - s) / 2, w + 1 - s, s, Dof::y, 1.0);    // right edge center
    add_patch_load(p, h + 1 - s, (w + 1 - s) / 2, s, Dof::y, 1.0);    // bottom edge center
  } else if (name == "l_beam") {
    domain->passive_mask.assign(static_cast<size_t>(w) * h, 0);
    for (int r = h / 2; r < h; ++r)
      for (int c = w / 2; c < w; ++c)
        domain->passive_mask[static_cast<size_t>(r) * w + c] = 1;  // lower-right quadrant void
    for (int c = 0; c <= w; ++c) fix_node(p, 0, c, p.physics, true, true);
    // Tip of the horizontal arm: right edge, bottom-aligned with the arm.
    add_patch_load(p, h / 2 - s + 1, w + 1 - s, s, Dof::y, 1.0);
  } else if (name == "bridge") {
    const int sp = w / 32 > 0 ? w / 32 : 1;
    for (int c = 0; c < sp; ++c) fix_node(p, h, c, p.physics, true, true);  // pinned corner
    for (int c = w + 1 - sp; c <= w; ++c) fix_node(p, h, c, p.physics, false, true);  // roller
    const double per_node = 1.0 / (w + 1);
    for (int c = 0; c <= w; ++c) p.loads.entries.push_back({0, c, Dof::y, per_node});
  } else if (name == "thermal_small_sink" || name == "thermal_large_sink") {
    p.physics = Physics::thermal;
    const bool large = (name == "thermal_large_sink");
    p.volume_fraction = large ? 0.6 : 0.4;
    const int sink = large ? w / 2 : (w / 16 > 0 ? w / 16 : 1);
    const int c0 = (w + 1 - sink) / 2;
    for (int c = c0; c < c0 + sink; ++c) fix_node(p, 0, c, p.physics, false, false);
    p.loads.thermal_source = Field2D(h, w, 1.0);  // unit source per unit element area
  } else {
    throw std::invalid_argument("make_problem: unknown problem name '" + name + "'");
  }

  p.domain = domain;
  validate_problem(p);
  return p;
}

DensityField uniform_density(const TOProblem& problem, bool solid_start) {
  const auto& d = *problem.domain;
  DensityField out;
  out.domain = problem.domain;
  out.values = Field2D(d.height_elems, d.width_elems, 0.0);
  const double fill = solid_start ? 1.0 : problem.volume_fraction;
  for (int r = 0; r < d.height_elems; ++r)
    for (int c = 0; c < d.width_elems; ++c)
      if (!d.passive(r, c)) out.values.at(r, c) = fill;
  return out;
}

void validate_problem(const TOProblem& problem) {
  if (!problem.domain) throw std::invalid_argument("problem: missing domain");
  const auto& d = *problem.domain;
  if (d.width_elems < 1 || d.height_elems < 1)
    throw std::invalid_argument("problem: empty domain");
  if (!d.passive_mask.empty() &&
      d.passive_mask.size() != static_cast<size_t>(d.width_elems) * d.height_elems)
    throw std::invalid_argument("problem: passive mask dimension mismatch");
  if (!(problem.volume_fraction > 0.0 && problem.volume_fraction <= 1.0))
    throw std::invalid_argument("problem: volume fraction outside (0,1]");
  if (problem.bc.fixed_dofs.empty())
    throw std::invalid_argument("problem: no fixed DOFs (singular system)");
  for (const auto& f : problem.bc.fixed_dofs) {
    if (f.node_row < 0 || f.node_row > d.height_elems || f.node_col < 0 ||
        f.node_col > d.width_elems)
      throw std::invalid_argument("problem: fixed DOF outside the node grid");
    if ((problem.physics == Physics::thermal) != (f.dir == Dof::temp))
      throw std::invalid_argument("problem: DOF direction inconsistent with physics");
  }
  if (problem.physics == Physics::elastic) {
    double total = 0.0;
    for (const auto& l : problem.loads.entries) {
      if (l.node_row < 0 || l.node_row > d.height_elems || l.node_col < 0 ||
          l.node_col > d.width_elems)
        throw std::invalid_argument("problem: load outside the node grid");
      if (!std::isfinite(l.magnitude)) throw std::invalid_argument("problem: non-finite load");
      total += std::fabs(l.magnitude);
    }
    if (total == 0.0) throw std::invalid_argument("problem: zero total load");
  } else {
    const auto& src = problem.loads.thermal_source;
    if (src.rows != d.height_elems || src.cols != d.width_elems)
      throw std::invalid_argument("problem: thermal source dimension mismatch");
    double total = 0.0;
    for (double v : src.data) {
      if (!(v >= 0.0)) throw std::invalid_argument("problem: negative thermal source");
      total += v;
    }
    if (total == 0.0) throw std::invalid_argument("problem: zero thermal source");
  }
}

}  // namespace fragto
