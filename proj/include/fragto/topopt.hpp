#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "fragto/fem.hpp"

namespace fragto {

enum class Method : uint8_t { simp = 0, beso = 1 };

Method method_from_string(const std::string& s);
const char* method_name(Method m);

struct OptimizerConfig {
  Method method = Method::simp;
  double penal = 3.0;
  double filter_radius = 1.0;       // element units, >= 1
  double move_limit = 0.2;          // SIMP move limit
  double beso_evolution_rate = 0.02;
  int max_iters = 200;
  double convergence_tol = 1e-3;    // <= 0 disables the window check
  SolveOptions solve;
};

inline constexpr double kSimpDesignFloor = 1e-3;  // SIMP lower bound on active elements
inline constexpr double kBesoSoftKill = 1e-6;     // BESO void density (soft kill)

// fine_elems_per_side / 32 convention: 16 at 512, 4 at 128, floor 1.
double default_filter_radius(int width_elems, int height_elems);

// Density-weighted, distance-weighted disc average with weights
// max(0, radius - dist); preserves constants under any density. Elements
// whose whole disc has zero density keep their raw value.
ScalarField sensitivity_filter(const ScalarField& raw, double radius,
                               const DensityField& density);

// One optimality-criteria update: sensitivities from element energies,
// filtered, then the multiplicative exponent-1/2 move-limited update with
// bisection on the Lagrange multiplier to |volume - target| <= 1e-6 target.
DensityField simp_step(const DensityField& density, const ScalarField& energy,
                       double target_volume, const OptimizerConfig& cfg);

// One evolutionary update: history-averaged filtered sensitivities ranked,
// top target_volume_this_iter elements solid, the rest soft-killed.
DensityField beso_step(const DensityField& density,
                       const std::vector<ScalarField>& sensitivity_history,
                       double target_volume_this_iter, const OptimizerConfig& cfg);

// What an energy engine returns for one design: the fine-scale per-element
// energy field and the compliance of the system it actually solved (fine for
// the FEM engine, coarse for the lifted engine, which also exposes the coarse
// field it mapped from).
struct EnergyEval {
  ScalarField fine_energy;
  double compliance = 0.0;
  std::shared_ptr<const ScalarField> coarse_energy;
};

using EnergyProvider = std::function<EnergyEval(const DensityField&)>;

EnergyProvider fem_energy_provider(const TOProblem& problem, const OptimizerConfig& cfg);

struct TraceRecord {
  int iteration = 0;  // 1-based
  double compliance = 0.0;
  double volume_fraction = 0.0;
  std::shared_ptr<const Field2D> density;        // populated when keep_fields
  std::shared_ptr<const Field2D> fine_energy;    // populated when keep_fields
  std::shared_ptr<const Field2D> coarse_energy;  // lifted engine only
};

struct TOTrace {
  std::vector<TraceRecord> records;
  bool converged = false;
  DensityField final_density;

  static const char* csv_header();  // "iteration,compliance,volume_fraction"
  std::string to_csv() const;
};

struct RunOptions {
  bool keep_fields = false;
  std::function<void(const TraceRecord&)> on_iteration;
};

// The optimizer loop shared verbatim by both engines: evaluate, record,
// check the two-window convergence criterion, update. Record k holds the
// design evaluated at iteration k (pre-update).
TOTrace run_to(const TOProblem& problem, const OptimizerConfig& cfg,
               const EnergyProvider& engine, const RunOptions& opts = {});

}  // namespace fragto
