// Acceptance gate for the fragment-lifted topology-optimization toolkit.
//
// Each product requirement runs as one self-contained check that prints
// exactly one PASS/FAIL line; the exit code is the number of failures.
// Slow checks share lazily built artifacts (a desk-scale training dataset
// and a trained lifting model), so the first criterion that needs them pays
// for their construction inside its own time budget.
//
// Usage: acceptance <cli-binary> <fullscale-config-dir> [C01,C05,...]
// The optional third argument restricts the run to a comma-separated id list.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fragto/fem.hpp"
#include "fragto/fragmap.hpp"
#include "fragto/grid.hpp"
#include "fragto/gridfile.hpp"
#include "fragto/mapnet.hpp"
#include "fragto/pipeline.hpp"
#include "fragto/topopt.hpp"
#include "fragto/util.hpp"

namespace fs = std::filesystem;
using namespace fragto;

namespace {

std::string g_cli;      // path to the command-line binary under test
std::string g_cfg_dir;  // directory holding the full-scale run configurations

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// Collects the reasons a criterion failed; empty means PASS.
struct Gate {
  std::vector<std::string> fails;
  void require(bool ok, const std::string& what) {
    if (!ok) fails.push_back(what);
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

bool close_rel(double a, double b, double rel, double floor_abs) {
  return std::fabs(a - b) <= std::max(rel * std::max(std::fabs(a), std::fabs(b)), floor_abs);
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

double mean_range(const std::vector<double>& v, size_t begin, size_t end) {
  double s = 0.0;
  for (size_t i = begin; i < end; ++i) s += v[i];
  return s / static_cast<double>(end - begin);
}

// ---------------------------------------------------------------------------
// Shared desk-scale artifacts (built on first use, reused by later criteria).
// ---------------------------------------------------------------------------

const ScaleSpec& desk_scale() {
  static const ScaleSpec s = ScaleSpec::from_fine(128, 128, 16);
  return s;
}

const TOProblem& desk_problem() {
  static const TOProblem p = make_problem("cantilever_single", 128, 128, 16);
  return p;
}

OptimizerConfig beso_config(int w, int h) {
  OptimizerConfig cfg;
  cfg.method = Method::beso;
  cfg.filter_radius = default_filter_radius(w, h);
  return cfg;
}

OptimizerConfig simp_config(int w, int h) {
  OptimizerConfig cfg;
  cfg.method = Method::simp;
  cfg.filter_radius = default_filter_radius(w, h);
  return cfg;
}

// 100 harvested iterations: samples [0,60) train at most, [60,100) held out.
const Dataset& shared_dataset() {
  static const Dataset d = [] {
    OptimizerConfig cfg = beso_config(128, 128);
    cfg.max_iters = 100;
    return generate_dataset(desk_problem(), cfg, 100, desk_scale());
  }();
  return d;
}

const Dataset& train60() {
  static const Dataset d = shared_dataset().head(60);
  return d;
}

const Dataset& held40() {
  static const Dataset d = shared_dataset().slice(60, 100);
  return d;
}

const FragmentSpec& overlap_spec() {
  static const FragmentSpec f = FragmentSpec::from_patch(2, 16, true);
  return f;
}

const FragmentSpec& tiling_spec() {
  static const FragmentSpec f = FragmentSpec::from_patch(2, 16, false);
  return f;
}

// The reference trained model: 60 samples, overlap fragments, default ADAM
// schedule (1000 steps, batch 64, lr 1e-4, seed 1).
const TrainedMapNet& reference_model() {
  static const TrainedMapNet tm = [] {
    TrainConfig tc;
    return train_mapnet(train60(), overlap_spec(), tc);
  }();
  return tm;
}

// Held-out defragged error for a (fragmentation, train-size, seed) cell,
// cached across criteria so shared cells train only once.
double held_out_error(const FragmentSpec& fspec, const std::string& tag, size_t n_train,
                      uint64_t seed) {
  static std::map<std::string, double> cache;
  const std::string key = tag + "/" + std::to_string(n_train) + "/" + std::to_string(seed);
  const auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  double err = 0.0;
  if (tag == "ov" && n_train == 60 && seed == 1) {
    err = evaluate(reference_model().model, held40(), fspec).defrag_paper_mse;
  } else {
    TrainConfig tc;
    tc.seed = seed;
    const TrainedMapNet tm = train_mapnet(shared_dataset().head(n_train), fspec, tc);
    err = evaluate(tm.model, held40(), fspec).defrag_paper_mse;
  }
  cache.emplace(key, err);
  return err;
}

double verify_compliance(const TOProblem& p, const DensityField& d, const OptimizerConfig& cfg) {
  return assemble_and_solve(p, d, cfg.penal, cfg.solve).compliance;
}

// ---------------------------------------------------------------------------
// C01 — sparse iterative solves match a dense direct-solve oracle.
// ---------------------------------------------------------------------------

struct DenseSolve {
  std::vector<double> u;
  double compliance = 0.0;
};

// In-place Cholesky factorization and solve of a dense SPD system.
bool dense_spd_solve(std::vector<double>& A, std::vector<double>& b, int n) {
  for (int j = 0; j < n; ++j) {
    double d = A[static_cast<size_t>(j) * n + j];
    for (int k = 0; k < j; ++k) {
      const double l = A[static_cast<size_t>(j) * n + k];
      d -= l * l;
    }
    if (!(d > 0.0)) return false;
    d = std::sqrt(d);
    A[static_cast<size_t>(j) * n + j] = d;
    for (int i = j + 1; i < n; ++i) {
      double v = A[static_cast<size_t>(i) * n + j];
      for (int k = 0; k < j; ++k)
        v -= A[static_cast<size_t>(i) * n + k] * A[static_cast<size_t>(j) * n + k];
      A[static_cast<size_t>(i) * n + j] = v / d;
    }
  }
  for (int i = 0; i < n; ++i) {
    double v = b[i];
    for (int k = 0; k < i; ++k) v -= A[static_cast<size_t>(i) * n + k] * b[k];
    b[i] = v / A[static_cast<size_t>(i) * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {
    double v = b[i];
    for (int k = i + 1; k < n; ++k) v -= A[static_cast<size_t>(k) * n + i] * b[k];
    b[i] = v / A[static_cast<size_t>(i) * n + i];
  }
  return true;
}

// Full dense assembly and reduced direct solve, written independently of the
// production solver: same element matrices, everything else from scratch.
DenseSolve dense_oracle(const TOProblem& p, const DensityField& dens, double penal) {
  const DomainSpec& dom = *p.domain;
  const int w = dom.width_elems, h = dom.height_elems, nx = w + 1;
  const ElementMatrix ke = element_stiffness(p.physics);
  const int nd = p.physics == Physics::elastic ? 2 : 1;
  const int n = nd * nx * (h + 1);
  std::vector<double> K(static_cast<size_t>(n) * n, 0.0), f(static_cast<size_t>(n), 0.0);

  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int nodes[4] = {r * nx + c, r * nx + c + 1, (r + 1) * nx + c + 1, (r + 1) * nx + c};
      const double sc = stiffness_scale(dens.values.at(r, c), penal);
      for (int a = 0; a < ke.n; ++a) {
        const int ga = nd == 2 ? 2 * nodes[a / 2] + (a % 2) : nodes[a];
        for (int b = 0; b < ke.n; ++b) {
          const int gb = nd == 2 ? 2 * nodes[b / 2] + (b % 2) : nodes[b];
          K[static_cast<size_t>(ga) * n + gb] += sc * ke.at(a, b);
        }
      }
      if (p.physics == Physics::thermal && p.loads.thermal_source.size() > 0) {
        const double q = p.loads.thermal_source.at(r, c) * 0.25;
        for (int k = 0; k < 4; ++k) f[nodes[k]] += q;
      }
    }
  for (const auto& L : p.loads.entries) {
    const int node = L.node_row * nx + L.node_col;
    f[nd == 2 ? 2 * node + (L.dir == Dof::x ? 0 : 1) : node] += L.magnitude;
  }

  std::vector<char> fixed(static_cast<size_t>(n), 0);
  std::vector<double> u(static_cast<size_t>(n), 0.0);
  for (const auto& d : p.bc.fixed_dofs) {
    const int node = d.node_row * nx + d.node_col;
    const int dof = nd == 2 ? 2 * node + (d.dir == Dof::x ? 0 : 1) : node;
    fixed[dof] = 1;
    u[dof] = d.value;
  }
  std::vector<int> free_ix;
  for (int i = 0; i < n; ++i)
    if (!fixed[i]) free_ix.push_back(i);
  const int nf = static_cast<int>(free_ix.size());
  std::vector<double> A(static_cast<size_t>(nf) * nf), b(static_cast<size_t>(nf));
  for (int i = 0; i < nf; ++i) {
    double rhs = f[free_ix[i]];
    for (int j = 0; j < n; ++j)
      if (fixed[j]) rhs -= K[static_cast<size_t>(free_ix[i]) * n + j] * u[j];
    b[i] = rhs;
    for (int j = 0; j < nf; ++j)
      A[static_cast<size_t>(i) * nf + j] = K[static_cast<size_t>(free_ix[i]) * n + free_ix[j]];
  }
  if (!dense_spd_solve(A, b, nf)) throw std::runtime_error("dense oracle: not SPD");
  for (int i = 0; i < nf; ++i) u[free_ix[i]] = b[i];

  const double half = p.physics == Physics::elastic ? 0.5 : 1.0;
  double compliance = 0.0;
  std::vector<double> ue(static_cast<size_t>(ke.n));
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int nodes[4] = {r * nx + c, r * nx + c + 1, (r + 1) * nx + c + 1, (r + 1) * nx + c};
      for (int a = 0; a < ke.n; ++a)
        ue[a] = u[nd == 2 ? 2 * nodes[a / 2] + (a % 2) : nodes[a]];
      double e = 0.0;
      for (int a = 0; a < ke.n; ++a)
        for (int bix = 0; bix < ke.n; ++bix) e += ue[a] * ke.at(a, bix) * ue[bix];
      compliance += half * stiffness_scale(dens.values.at(r, c), penal) * e;
    }
  return {std::move(u), compliance};
}

void check_oracle_problem(Gate& g, const std::string& name, int w, int h, std::mt19937_64& gen) {
  const TOProblem p = make_problem(name, w, h, 4);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int rep = 0; rep < 3; ++rep) {
    DensityField d = uniform_density(p);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        if (!p.domain->passive(r, c)) d.values.at(r, c) = 0.3 + 0.7 * uni(gen);
    SolveOptions tight;
    tight.tol = 1e-12;
    const FemSolution pcg = assemble_and_solve(p, d, 3.0, tight);
    const DenseSolve ora = dense_oracle(p, d, 3.0);
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < ora.u.size(); ++i) {
      const double e = pcg.nodal[i] - ora.u[i];
      num += e * e;
      den += ora.u[i] * ora.u[i];
    }
    const double rel = std::sqrt(num / den);
    g.require(rel <= 1e-8, name + " " + std::to_string(w) + "x" + std::to_string(h) +
                               " nodal rel l2 " + fmt(rel) + " > 1e-8");
    g.require(close_rel(pcg.compliance, ora.compliance, 1e-8, 0.0),
              name + " compliance " + fmt(pcg.compliance) + " vs oracle " + fmt(ora.compliance));
  }
}

// Boundary nodes prescribed to a linear field must reproduce it exactly
// (bilinear elements carry constant-strain states without discretization
// error), so the solver output is compared against the closed form.
void check_patch_tests(Gate& g) {
  {  // elastic: u_x and u_y linear in (row, col)
    TOProblem p;
    p.physics = Physics::elastic;
    auto dom = std::make_shared<DomainSpec>();
    dom->width_elems = 5;
    dom->height_elems = 4;
    p.domain = dom;
    p.volume_fraction = 1.0;
    p.name = "patch_elastic";
    const auto ux = [](int r, int c) { return 1e-3 * (3.0 * c + 1.0 * r) + 2e-4; };
    const auto uy = [](int r, int c) { return 1e-3 * (4.0 * r - 2.0 * c) - 1e-4; };
    for (int r = 0; r <= 4; ++r)
      for (int c = 0; c <= 5; ++c) {
        if (r != 0 && r != 4 && c != 0 && c != 5) continue;
        p.bc.fixed_dofs.push_back({r, c, Dof::x, ux(r, c)});
        p.bc.fixed_dofs.push_back({r, c, Dof::y, uy(r, c)});
      }
    const DensityField d = uniform_density(p);
    const FemSolution sol = assemble_and_solve(p, d, 3.0);
    double worst = 0.0;
    for (int r = 0; r <= 4; ++r)
      for (int c = 0; c <= 5; ++c) {
        const int node = r * 6 + c;
        worst = std::max(worst, std::fabs(sol.nodal[2 * node] - ux(r, c)));
        worst = std::max(worst, std::fabs(sol.nodal[2 * node + 1] - uy(r, c)));
      }
    g.require(worst <= 1e-10, "elastic linear-field reproduction off by " + fmt(worst));
  }
  {  // thermal: source-free interior with linear boundary temperatures
    TOProblem p;
    p.physics = Physics::thermal;
    auto dom = std::make_shared<DomainSpec>();
    dom->width_elems = 6;
    dom->height_elems = 5;
    p.domain = dom;
    p.volume_fraction = 1.0;
    p.name = "patch_thermal";
    p.loads.thermal_source = Field2D(5, 6, 0.0);
    const auto tf = [](int r, int c) { return 0.75 + 0.125 * c - 0.5 * r; };
    for (int r = 0; r <= 5; ++r)
      for (int c = 0; c <= 6; ++c) {
        if (r != 0 && r != 5 && c != 0 && c != 6) continue;
        p.bc.fixed_dofs.push_back({r, c, Dof::temp, tf(r, c)});
      }
    const DensityField d = uniform_density(p);
    const FemSolution sol = assemble_and_solve(p, d, 3.0);
    double worst = 0.0;
    for (int r = 0; r <= 5; ++r)
      for (int c = 0; c <= 6; ++c)
        worst = std::max(worst, std::fabs(sol.nodal[r * 7 + c] - tf(r, c)));
    g.require(worst <= 1e-10, "thermal linear-field reproduction off by " + fmt(worst));
  }
}

void c01_fem_oracle(Gate& g) {
  std::mt19937_64 gen(7);
  for (const std::string& name : problem_catalog()) check_oracle_problem(g, name, 16, 16, gen);
  check_oracle_problem(g, "cantilever_single", 12, 16, gen);
  check_oracle_problem(g, "thermal_small_sink", 16, 8, gen);
  check_patch_tests(g);
}

// ---------------------------------------------------------------------------
// C02 — optimizer sanity at 64x64: target volume, compliance drop, symmetry.
// ---------------------------------------------------------------------------

double mirror_asymmetry(const Field2D& x) {
  double m = 0.0;
  for (int r = 0; r < x.rows; ++r)
    for (int c = 0; c < x.cols; ++c)
      m = std::max(m, std::fabs(x.at(r, c) - x.at(x.rows - 1 - r, c)));
  return m;
}

// Left edge clamped, unit transverse load at the exact mid-height node of the
// right edge: the layout is invariant under a top-bottom flip, so the
// optimized design must be too.
TOProblem mirror_problem(int n) {
  TOProblem p;
  p.physics = Physics::elastic;
  auto dom = std::make_shared<DomainSpec>();
  dom->width_elems = n;
  dom->height_elems = n;
  p.domain = dom;
  p.volume_fraction = 0.4;
  p.name = "cantilever_mirror";
  for (int r = 0; r <= n; ++r) {
    p.bc.fixed_dofs.push_back({r, 0, Dof::x, 0.0});
    p.bc.fixed_dofs.push_back({r, 0, Dof::y, 0.0});
  }
  p.loads.entries.push_back({n / 2, n, Dof::y, 1.0});
  validate_problem(p);
  return p;
}

void c02_optimizer_sanity(Gate& g) {
  const TOProblem p = make_problem("cantilever_single", 64, 64, 16);
  {
    OptimizerConfig cfg;
    cfg.method = Method::simp;
    cfg.filter_radius = default_filter_radius(64, 64);
    const TOTrace tr = run_to(p, cfg, fem_energy_provider(p, cfg));
    g.require(tr.converged, "simp run did not converge within " +
                                std::to_string(cfg.max_iters) + " iterations");
    const double vf = tr.records.back().volume_fraction;
    g.require(std::fabs(vf - 0.4) <= 1e-3, "simp final volume fraction " + fmt(vf));
    const double c1 = tr.records.front().compliance;
    const double cn = tr.records.back().compliance;
    g.require(cn < 0.5 * c1,
              "simp compliance " + fmt(cn) + " not below half of first-iteration " + fmt(c1));
  }
  {
    OptimizerConfig cfg = beso_config(64, 64);
    const TOTrace tr = run_to(p, cfg, fem_energy_provider(p, cfg));
    g.require(tr.converged, "beso run did not converge within " +
                                std::to_string(cfg.max_iters) + " iterations");
    const double vf = tr.records.back().volume_fraction;
    g.require(std::fabs(vf - 0.4) <= 1e-3, "beso final volume fraction " + fmt(vf));
    // The two-valued scheme starts from a fully solid design whose compliance
    // is already low, so only the volume target applies to it here.
  }
  {
    const TOProblem mp = mirror_problem(64);
    OptimizerConfig cfg;
    cfg.method = Method::simp;
    cfg.filter_radius = default_filter_radius(64, 64);
    const TOTrace tr = run_to(mp, cfg, fem_energy_provider(mp, cfg));
    g.require(tr.converged, "mirror-layout run did not converge");
    const double asym = mirror_asymmetry(tr.final_density.values);
    g.require(asym <= 1e-6, "design asymmetry " + fmt(asym) + " > 1e-6");
  }
}

// ---------------------------------------------------------------------------
// C03 — fragment counts and the reassembly identity.
// ---------------------------------------------------------------------------

Field2D coded_field(int h, int w) {
  Field2D f(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) f.at(r, c) = std::fmod(0.37 * r + 0.61 * c + 0.129, 1.0);
  return f;
}

DensityField coded_density(int w, int h) {
  DensityField d;
  auto dom = std::make_shared<DomainSpec>();
  dom->width_elems = w;
  dom->height_elems = h;
  d.domain = dom;
  d.values = coded_field(h, w);
  return d;
}

void c03_fragmentation(Gate& g) {
  {  // full-scale geometry: 512x512 fine, coarse 32x32
    const ScaleSpec sc = ScaleSpec::from_fine(512, 512, 16);
    const Field2D coarse = coded_field(32, 32);
    const DensityField dens = coded_density(512, 512);
    const Field2D fine = coded_field(512, 512);

    const FragmentSpec tiles = FragmentSpec::make(sc, 16, false);
    g.require(tiles.count_along(32) == 16, "non-overlap windows per side != 16");
    const FragmentBatch tb = fragment(coarse, dens, &fine, tiles);
    g.require(tb.size() == 256, "non-overlap fragment count " + std::to_string(tb.size()));

    const FragmentSpec slide = FragmentSpec::make(sc, 16, true);
    g.require(slide.count_along(32) == 31,
              "overlap windows per side " + std::to_string(slide.count_along(32)));
    const FragmentBatch sb = fragment(coarse, dens, &fine, slide);
    g.require(sb.size() == 961, "overlap fragment count " + std::to_string(sb.size()));
  }
  {  // wide-span rectangular geometry: 768x384 fine, coarse 48x24
    const ScaleSpec sc = ScaleSpec::from_fine(768, 384, 16);
    const FragmentSpec slide = FragmentSpec::make(sc, 24, true);
    g.require(slide.coarse_patch == 2, "rectangular coarse patch != 2");
    g.require(slide.count_along(48) == 47 && slide.count_along(24) == 23,
              "rectangular window grid " + std::to_string(slide.count_along(48)) + "x" +
                  std::to_string(slide.count_along(24)));
    const Field2D coarse = coded_field(24, 48);
    const DensityField dens = coded_density(768, 384);
    const FragmentBatch b = fragment(coarse, dens, nullptr, slide);
    g.require(b.size() == 1081, "rectangular fragment count " + std::to_string(b.size()));
  }
  {  // reassembly identity on a small grid
    const ScaleSpec sc = ScaleSpec::from_fine(64, 32, 8);
    const Field2D coarse = coded_field(4, 8);
    const DensityField dens = coded_density(64, 32);
    const Field2D fine = coded_field(32, 64);

    const FragmentSpec tiles = FragmentSpec::make(sc, 4, false);
    const FragmentBatch tb = fragment(coarse, dens, &fine, tiles);
    const ScalarField trec = defragment(tb.fine_patches, tb.origins, tiles, 64, 32);
    g.require(max_abs_diff(trec, fine) == 0.0, "non-overlap reassembly is not bit-exact");

    const FragmentSpec slide = FragmentSpec::make(sc, 4, true);
    const FragmentBatch sb = fragment(coarse, dens, &fine, slide);
    const ScalarField srec = defragment(sb.fine_patches, sb.origins, slide, 64, 32);
    const double diff = max_abs_diff(srec, fine);
    g.require(diff <= 1e-12, "overlap reassembly off by " + fmt(diff));
  }
}

// ---------------------------------------------------------------------------
// C04 — analytic gradients against central finite differences.
// ---------------------------------------------------------------------------

FragmentBatch random_batch(int cp, int fp, size_t n, uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> uc(0.05, 2.0), ud(0.0, 1.0), uf(0.0, 2.0);
  FragmentBatch b;
  b.coarse_patch = cp;
  b.fine_patch = fp;
  for (size_t i = 0; i < n; ++i) {
    Field2D c(cp, cp), d(fp, fp), f(fp, fp);
    for (double& v : c.data) v = uc(gen);
    for (double& v : d.data) v = ud(gen);
    for (double& v : f.data) v = uf(gen);
    b.coarse_patches.push_back(std::move(c));
    b.density_patches.push_back(std::move(d));
    b.fine_patches.push_back(std::move(f));
    b.origins.emplace_back(0, 0);
  }
  return b;
}

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::tconv: return "tconv";
    case LayerKind::concat_skip: return "concat_skip";
    case LayerKind::concat_dens: return "concat_dens";
  }
  return "?";
}

void c04_gradients(Gate& g) {
  MapNetModel m = build_model(2, 8, false, 8, 101);
  const FragmentBatch batch = random_batch(2, 8, 4, 202);
  const std::vector<size_t> idx = {0, 1, 2, 3};

  bool has[4] = {false, false, false, false};
  bool has_relu = false;
  for (const auto& L : m.layers) {
    has[static_cast<int>(L.kind)] = true;
    has_relu = has_relu || L.act == Activation::relu;
  }
  g.require(has[0] && has[1] && has[2] && has[3] && has_relu,
            "graph does not exercise all layer kinds");

  // Parameter spans per layer; the loss is evaluated through the whole graph,
  // so every sampled parameter is an end-to-end check through the downstream
  // concatenations and rectifications as well.
  struct Span {
    size_t begin, end;
    LayerKind kind;
    size_t layer;
  };
  std::vector<Span> spans;
  size_t off = 0;
  for (size_t li = 0; li < m.layers.size(); ++li) {
    const auto& L = m.layers[li];
    const size_t nw = L.weight_count() + L.bias_count();
    if (nw > 0) spans.push_back({off, off + nw, L.kind, li});
    off += nw;
  }
  g.require(off == m.params.size(), "parameter layout does not cover the parameter vector");

  std::vector<double> grad;
  loss_and_gradient(m, batch, idx, &grad);
  g.require(grad.size() == m.params.size(), "gradient size mismatch");

  auto fd_at = [&](size_t ix, double h) {
    const double keep = m.params[ix];
    m.params[ix] = keep + h;
    const double fp = loss_and_gradient(m, batch, idx, nullptr);
    m.params[ix] = keep - h;
    const double fm = loss_and_gradient(m, batch, idx, nullptr);
    m.params[ix] = keep;
    return (fp - fm) / (2.0 * h);
  };

  std::mt19937_64 gen(303);
  int checked_by_kind[4] = {0, 0, 0, 0};
  for (const auto& sp : spans) {
    int checked = 0, attempts = 0;
    while (checked < 25 && attempts < 200) {
      ++attempts;
      const size_t ix = sp.begin + gen() % (sp.end - sp.begin);
      const double fd1 = fd_at(ix, 1e-5);
      const double fd2 = fd_at(ix, 1e-6);
      // A rectifier kink between the two evaluation points makes the central
      // difference itself unstable; resample instead of judging the analytic
      // value against a broken estimate.
      if (!close_rel(fd1, fd2, 1e-3, 1e-9)) continue;
      if (!close_rel(grad[ix], fd1, 1e-4, 1e-9)) {
        g.require(false, std::string(kind_name(sp.kind)) + " layer " +
                             std::to_string(sp.layer) + " param " + std::to_string(ix) +
                             ": analytic " + fmt(grad[ix]) + " vs fd " + fmt(fd1));
        ++checked;  // counted as a completed (failing) check
        continue;
      }
      ++checked;
    }
    g.require(checked >= 25, std::string(kind_name(sp.kind)) + " layer " +
                                 std::to_string(sp.layer) + ": only " + std::to_string(checked) +
                                 " smooth checks in " + std::to_string(attempts) + " attempts");
    checked_by_kind[static_cast<int>(sp.kind)] += checked;
  }
  g.require(checked_by_kind[0] >= 25, "fewer than 25 conv parameter checks");
  g.require(checked_by_kind[1] >= 25, "fewer than 25 tconv parameter checks");
}

// ---------------------------------------------------------------------------
// C05 — the desk-scale training protocol halves the loss and beats an
// untrained network on held-out data by 5x.
// ---------------------------------------------------------------------------

void c05_training_effectiveness(Gate& g) {
  const TrainedMapNet& tm = reference_model();
  const std::vector<double>& hist = tm.loss_history;
  g.require(hist.size() == 1000, "training produced " + std::to_string(hist.size()) + " steps");
  if (hist.size() < 100) return;
  const double first = mean_range(hist, 0, 50);
  const double last = mean_range(hist, hist.size() - 50, hist.size());
  g.require(last < 0.5 * first,
            "smoothed loss " + fmt(last) + " not below half of initial " + fmt(first));

  const EvalReport trained = evaluate(tm.model, held40(), overlap_spec());
  g.require(std::isfinite(trained.defrag_paper_mse) && trained.defrag_paper_mse > 0.0,
            "held-out error not finite/positive: " + fmt(trained.defrag_paper_mse));

  MapNetModel fresh = build_model(2, 32, true, kDefaultChannelsBase, 1);
  fresh.norm = tm.model.norm;  // same scaling, untrained weights
  const EvalReport blank = evaluate(fresh, held40(), overlap_spec());
  g.require(blank.defrag_paper_mse >= 5.0 * trained.defrag_paper_mse,
            "untrained/trained error ratio " +
                fmt(blank.defrag_paper_mse / trained.defrag_paper_mse) + " < 5");
}

// ---------------------------------------------------------------------------
// C06 — held-out error falls monotonically with training-set size.
// ---------------------------------------------------------------------------

void c06_training_size_ordering(Gate& g) {
  double med[3];
  const size_t ns[3] = {20, 40, 60};
  for (int i = 0; i < 3; ++i) {
    std::vector<double> errs;
    for (uint64_t seed = 1; seed <= 3; ++seed)
      errs.push_back(held_out_error(overlap_spec(), "ov", ns[i], seed));
    med[i] = median_of(errs);
  }
  g.require(med[0] > med[1] && med[1] > med[2],
            "medians not strictly decreasing: n20 " + fmt(med[0]) + ", n40 " + fmt(med[1]) +
                ", n60 " + fmt(med[2]));
}

// ---------------------------------------------------------------------------
// C07 — overlapping fragmentation does not trail the plain tiling.
// ---------------------------------------------------------------------------

void c07_overlap_benefit(Gate& g) {
  std::vector<double> ov, nov;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    ov.push_back(held_out_error(overlap_spec(), "ov", 60, seed));
    nov.push_back(held_out_error(tiling_spec(), "nov", 60, seed));
  }
  const double mo = median_of(ov), mn = median_of(nov);
  g.require(mo <= mn, "overlap median " + fmt(mo) + " above tiling median " + fmt(mn));
}

// ---------------------------------------------------------------------------
// C08 — crop-scale study: the middle patch size wins, 1x1 patches collide.
// ---------------------------------------------------------------------------

void c08_crop_scale_shape(Gate& g) {
  // coarse 8x8 tiled into patches of 4, 2, 1 -> crops 2, 4, 8
  const FragmentSpec cp4 = FragmentSpec::make(desk_scale(), 2, false);
  const FragmentSpec cp2 = FragmentSpec::make(desk_scale(), 4, false);
  const FragmentSpec cp1 = FragmentSpec::make(desk_scale(), 8, false);

  auto med_err = [&](const FragmentSpec& fs, const std::string& tag) {
    std::vector<double> errs;
    for (uint64_t seed = 1; seed <= 3; ++seed)
      errs.push_back(held_out_error(fs, tag, 60, seed));
    return median_of(errs);
  };
  const double e4 = med_err(cp4, "cp4");
  const double emid = med_err(cp2, "cp2");
  const double e1 = med_err(cp1, "cp1");
  g.require(emid <= e4 && emid <= e1, "middle patch error " + fmt(emid) +
                                          " worse than an extreme (patch4 " + fmt(e4) +
                                          ", patch1 " + fmt(e1) + ")");

  const size_t coll1 =
      detect_nonuniqueness(fragment_dataset(train60(), cp1, shared_dataset().norm), 1e-12).size();
  const size_t coll2 =
      detect_nonuniqueness(fragment_dataset(train60(), cp2, shared_dataset().norm), 1e-12).size();
  g.require(coll1 > coll2, "input collisions: patch1 " + std::to_string(coll1) +
                               " not above patch2 " + std::to_string(coll2));
}

// ---------------------------------------------------------------------------
// C09 — the lifted engine matches the reference compliance and runs faster.
// ---------------------------------------------------------------------------

void c09_lifted_engine(Gate& g) {
  const TOProblem& p = desk_problem();
  const OptimizerConfig cfg = beso_config(128, 128);

  const TOTrace fem_tr = run_to(p, cfg, fem_energy_provider(p, cfg));
  g.require(fem_tr.converged, "reference engine did not converge");
  const double c_fem = verify_compliance(p, fem_tr.final_density, cfg);

  const TrainedMapNet& tm = reference_model();
  const TOTrace map_tr =
      run_to(p, cfg, lifted_energy_provider(tm.model, p, desk_scale(), overlap_spec(), cfg));
  g.require(map_tr.converged, "lifted engine did not converge");
  const double c_map = verify_compliance(p, map_tr.final_density, cfg);
  g.require(std::fabs(c_map - c_fem) <= 0.15 * c_fem,
            "lifted compliance " + fmt(c_map) + " vs reference " + fmt(c_fem) + " (" +
                fmt(100.0 * (c_map - c_fem) / c_fem) + "%)");

  const auto rows = bench_engines(p, &tm.model, desk_scale(), cfg, 3);
  auto bench_value = [&](const char* eng, const char* phase) {
    for (const auto& r : rows)
      if (r.engine == eng && r.phase == phase) return r.median_s;
    throw std::runtime_error(std::string("bench row missing: ") + eng + "/" + phase);
  };
  const double t_fem = bench_value("fem", "iteration");
  const double t_map = bench_value("mapnet", "iteration");
  g.require(t_map < t_fem, "lifted iteration " + fmt(t_map) + "s not below reference " +
                               fmt(t_fem) + "s");
}

// ---------------------------------------------------------------------------
// C10 — the trained model transfers to unseen layouts without retraining.
// ---------------------------------------------------------------------------

void c10_layout_transfer(Gate& g) {
  for (const char* name : {"l_beam", "cantilever_multi"}) {
    const TOProblem p = make_problem(name, 128, 128, 16);
    const OptimizerConfig cfg = beso_config(128, 128);

    const TOTrace fem_tr = run_to(p, cfg, fem_energy_provider(p, cfg));
    g.require(fem_tr.converged, std::string(name) + ": reference engine did not converge");
    const double c_fem = verify_compliance(p, fem_tr.final_density, cfg);

    // Transfer protocol: reuse the weights, refresh only the scaling factors
    // from a handful of probe iterations on the new layout.
    MapNetModel m = reference_model().model;
    m.norm = estimate_problem_norm(p, cfg, desk_scale(), 5);
    const TOTrace map_tr =
        run_to(p, cfg, lifted_energy_provider(m, p, desk_scale(), overlap_spec(), cfg));
    g.require(map_tr.converged, std::string(name) + ": lifted engine did not converge");
    const double c_map = verify_compliance(p, map_tr.final_density, cfg);
    g.require(std::fabs(c_map - c_fem) <= 0.20 * c_fem,
              std::string(name) + ": lifted compliance " + fmt(c_map) + " vs reference " +
                  fmt(c_fem) + " (" + fmt(100.0 * (c_map - c_fem) / c_fem) + "%)");
  }
}

// ---------------------------------------------------------------------------
// C11 — a model trained on the small heat sink drives the large one.
// ---------------------------------------------------------------------------

void c11_thermal_transfer(Gate& g) {
  // The thermal protocol is density-method (SIMP) throughout: hard voids under
  // a distributed volumetric source would leave heated islands with no
  // conduction path to the sink.
  const TOProblem small = make_problem("thermal_small_sink", 128, 128, 16);
  OptimizerConfig gen_cfg = simp_config(128, 128);
  gen_cfg.max_iters = 40;
  const Dataset data = generate_dataset(small, gen_cfg, 40, desk_scale());

  TrainConfig tc;
  const TrainedMapNet tm = train_mapnet(data, overlap_spec(), tc);

  const TOProblem large = make_problem("thermal_large_sink", 128, 128, 16);
  g.require(std::fabs(large.volume_fraction - 0.6) < 1e-12,
            "large-sink volume fraction is " + fmt(large.volume_fraction));
  const OptimizerConfig cfg = simp_config(128, 128);

  const TOTrace fem_tr = run_to(large, cfg, fem_energy_provider(large, cfg));
  g.require(fem_tr.converged, "reference engine did not converge");
  const double c_fem = verify_compliance(large, fem_tr.final_density, cfg);

  MapNetModel m = tm.model;
  m.norm = estimate_problem_norm(large, cfg, desk_scale(), 5);
  const TOTrace map_tr =
      run_to(large, cfg, lifted_energy_provider(m, large, desk_scale(), overlap_spec(), cfg));
  g.require(map_tr.converged, "lifted engine did not converge");
  const double c_map = verify_compliance(large, map_tr.final_density, cfg);
  g.require(std::fabs(c_map - c_fem) <= 0.20 * c_fem,
            "lifted thermal compliance " + fmt(c_map) + " vs reference " + fmt(c_fem) + " (" +
                fmt(100.0 * (c_map - c_fem) / c_fem) + "%)");
}

// ---------------------------------------------------------------------------
// C12 — bitwise determinism and file-format roundtrips, via the CLI.
// ---------------------------------------------------------------------------

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

int run_cli(const std::string& args) {
  const std::string cmd = q(g_cli) + " " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::vector<std::string> payload_names(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.txt")
      names.push_back(fs::relative(e.path(), dir).string());
  std::sort(names.begin(), names.end());
  return names;
}

// Byte-compare every regular file except the manifests (whose `out=` line
// names the differing destination directories by construction).
bool same_payload(const fs::path& a, const fs::path& b, std::string* why) {
  const auto na = payload_names(a), nb = payload_names(b);
  if (na != nb) {
    *why = "file sets differ between " + a.string() + " and " + b.string();
    return false;
  }
  for (const auto& n : na)
    if (read_file_bytes((a / n).string()) != read_file_bytes((b / n).string())) {
      *why = n + " differs between " + a.string() + " and " + b.string();
      return false;
    }
  return true;
}

void c12_determinism_and_formats(Gate& g) {
  const fs::path wd = fs::absolute("acceptance_work");
  fs::remove_all(wd);
  fs::create_directories(wd);
  std::string why;

  // dataset generation, twice with the same options
  const fs::path ds1 = wd / "ds1", ds1b = wd / "ds1b";
  const std::string gen_args =
      "gen-data --problem cantilever_single --size 32x32 --iters 6 --ratio 16 --out ";
  g.require(run_cli(gen_args + q(ds1)) == 0, "gen-data failed");
  g.require(run_cli(gen_args + q(ds1b)) == 0, "gen-data rerun failed");
  g.require(same_payload(ds1, ds1b, &why), "dataset regeneration: " + why);

  // training, twice with the same seed
  const fs::path m1 = wd / "m1", m1b = wd / "m1b";
  const std::string train_args = "train --data " + q(ds1) +
                                 " --crop-scale 2 --steps 20 --batch 8 --seed 3 --channels 8"
                                 " --out ";
  g.require(run_cli(train_args + q(m1 / "model.mnet")) == 0, "train failed");
  g.require(run_cli(train_args + q(m1b / "model.mnet")) == 0, "train rerun failed");
  g.require(read_file_bytes((m1 / "model.mnet").string()) ==
                read_file_bytes((m1b / "model.mnet").string()),
            "same-seed model files differ");
  g.require(read_file_bytes((m1 / "model.mnet.loss.csv").string()) ==
                read_file_bytes((m1b / "model.mnet.loss.csv").string()),
            "same-seed loss traces differ");

  // optimization traces, both engines, twice each
  const fs::path o1 = wd / "o1", o1b = wd / "o1b", o2 = wd / "o2", o2b = wd / "o2b";
  const std::string fem_args =
      "optimize --engine fem --problem cantilever_single --size 32x32 --ratio 16"
      " --max-iters 8 --conv-tol 0 --out ";
  g.require(run_cli(fem_args + q(o1)) == 0, "fem optimize failed");
  g.require(run_cli(fem_args + q(o1b)) == 0, "fem optimize rerun failed");
  g.require(same_payload(o1, o1b, &why), "fem optimize outputs: " + why);

  const std::string map_args = "optimize --engine mapnet --model " + q(m1 / "model.mnet") +
                               " --problem cantilever_single --size 32x32"
                               " --max-iters 8 --conv-tol 0 --out ";
  g.require(run_cli(map_args + q(o2)) == 0, "lifted optimize failed");
  g.require(run_cli(map_args + q(o2b)) == 0, "lifted optimize rerun failed");
  g.require(same_payload(o2, o2b, &why), "lifted optimize outputs: " + why);

  // manifest replay: a recorded manifest fed back as --config reproduces the
  // outputs bit for bit (with only the destination overridden)
  const fs::path ds2 = wd / "ds2";
  g.require(run_cli("gen-data --config " + q(ds1 / "manifest.txt") + " --out " + q(ds2)) == 0,
            "gen-data replay failed");
  g.require(same_payload(ds1, ds2, &why), "gen-data replay: " + why);

  const fs::path m5 = wd / "m5";
  g.require(run_cli("train --config " + q(m1 / "manifest.txt") + " --out " +
                    q(m5 / "model.mnet")) == 0,
            "train replay failed");
  g.require(read_file_bytes((m1 / "model.mnet").string()) ==
                read_file_bytes((m5 / "model.mnet").string()),
            "train replay model differs");

  // grid-file roundtrip on awkward values
  Field2D exotic(3, 5);
  const double vals[] = {0.0, -0.0, 1.0 / 3.0, 1e-300, 5e-324, 12345.678901234567, -2.5e17};
  for (size_t i = 0; i < exotic.data.size(); ++i) exotic.data[i] = vals[i % 7];
  const fs::path gpath = wd / "exotic.mfld";
  write_grid(gpath.string(), exotic);
  const Field2D back = read_grid(gpath.string());
  g.require(back.rows == 3 && back.cols == 5 &&
                std::memcmp(back.data.data(), exotic.data.data(),
                            exotic.data.size() * sizeof(double)) == 0,
            "grid roundtrip not bit-exact");
  write_grid((wd / "exotic2.mfld").string(), back);
  g.require(read_file_bytes(gpath.string()) == read_file_bytes((wd / "exotic2.mfld").string()),
            "grid rewrite bytes differ");

  // model-file roundtrip through the library
  const MapNetModel lm = load_model((m1 / "model.mnet").string());
  save_model(lm, (wd / "model_copy.mnet").string());
  g.require(read_file_bytes((m1 / "model.mnet").string()) ==
                read_file_bytes((wd / "model_copy.mnet").string()),
            "model load/save roundtrip bytes differ");
}

// ---------------------------------------------------------------------------
// C13 — full-scale reproduction configurations are present and documented.
// ---------------------------------------------------------------------------

void c13_fullscale_configs(Gate& g) {
  const fs::path dir = g_cfg_dir;
  g.require(fs::is_directory(dir), "config directory missing: " + dir.string());
  if (!fs::is_directory(dir)) return;
  size_t n_files = 0, n_fullscale = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    ++n_files;
    const std::string text = read_file_bytes(e.path().string());
    if (text.find("size=512x512") != std::string::npos) ++n_fullscale;
  }
  g.require(n_files >= 3, "only " + std::to_string(n_files) + " config files");
  g.require(n_fullscale >= 2,
            "only " + std::to_string(n_fullscale) + " configs target the full-scale mesh");
  const fs::path readme = dir.parent_path() / "README.md";
  g.require(fs::exists(readme), "README.md not found next to the config directory");
  if (fs::exists(readme)) {
    const std::string text = read_file_bytes(readme.string());
    g.require(text.find("512") != std::string::npos,
              "README does not document the full-scale runs");
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::fprintf(stderr, "usage: acceptance <cli-binary> <config-dir> [C01,C02,...]\n");
    return 64;
  }
  g_cli = argv[1];
  g_cfg_dir = argv[2];

  struct Entry {
    const char* id;
    const char* name;
    double budget_s;
    void (*fn)(Gate&);
  };
  const Entry entries[] = {
      {"C01", "iterative solver matches dense direct oracle", 5, c01_fem_oracle},
      {"C02", "optimizer volume, compliance drop, symmetry", 120, c02_optimizer_sanity},
      {"C03", "fragment counts and reassembly identity", 1, c03_fragmentation},
      {"C04", "analytic gradients match finite differences", 30, c04_gradients},
      {"C05", "training halves loss and beats untrained 5x", 900, c05_training_effectiveness},
      {"C06", "held-out error falls with training size", 2700, c06_training_size_ordering},
      {"C07", "overlapping fragments at least as accurate", 1800, c07_overlap_benefit},
      {"C08", "middle crop scale best; 1x1 collides more", 2700, c08_crop_scale_shape},
      {"C09", "lifted engine: matching compliance, faster", 1200, c09_lifted_engine},
      {"C10", "transfer to unseen layouts without retraining", 1800, c10_layout_transfer},
      {"C11", "thermal transfer within tolerance", 1800, c11_thermal_transfer},
      {"C12", "bitwise determinism and format roundtrips", 60, c12_determinism_and_formats},
      {"C13", "full-scale configs present and documented", 60, c13_fullscale_configs},
  };

  std::vector<std::string> only;
  if (argc > 3) {
    std::string list = argv[3];
    size_t pos = 0;
    while (pos < list.size()) {
      const size_t comma = list.find(',', pos);
      only.push_back(list.substr(pos, comma == std::string::npos ? comma : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }

  int failures = 0, ran = 0;
  for (const auto& e : entries) {
    if (!only.empty() && std::find(only.begin(), only.end(), e.id) == only.end()) continue;
    ++ran;
    Gate gate;
    const double t0 = now_s();
    try {
      e.fn(gate);
    } catch (const std::exception& ex) {
      gate.require(false, std::string("exception: ") + ex.what());
    } catch (...) {
      gate.require(false, "unknown exception");
    }
    const double dt = now_s() - t0;
    if (dt > e.budget_s)
      gate.require(false, "runtime " + fmt(dt) + "s exceeds the " + fmt(e.budget_s) +
                              "s budget");
    const bool ok = gate.fails.empty();
    std::printf("[%s] %s: %s (%.1fs)\n", e.id, e.name, ok ? "PASS" : "FAIL", dt);
    for (const auto& f : gate.fails) std::printf("       - %s\n", f.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
  }
  std::printf("%d of %d criteria passed\n", ran - failures, ran);
  return failures;
}
