#include "fragto/topopt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fragto/util.hpp"

namespace fragto {

Method method_from_string(const std::string& s) {
  if (s == "simp") return Method::simp;
  if (s == "beso") return Method::beso;
  throw std::invalid_argument("unknown method '" + s + "' (expected simp or beso)");
}

const char* method_name(Method m) { return m == Method::simp ? "simp" : "beso"; }

double default_filter_radius(int width_elems, int height_elems) {
  const double side = static_cast<double>(std::min(width_elems, height_elems));
  return std::max(1.0, side / 32.0);
}

ScalarField sensitivity_filter(const ScalarField& raw, double radius,
                               const DensityField& density) {
  if (!(radius >= 1.0)) throw std::invalid_argument("filter radius must be >= 1");
  if (!raw.same_shape(density.values))
    throw std::invalid_argument("sensitivity_filter: shape mismatch");
  const int h = raw.rows, w = raw.cols;
  const int reach = static_cast<int>(std::ceil(radius)) - 1;
  ScalarField out(h, w, 0.0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double num = 0.0, den = 0.0;
      const int r0 = std::max(0, r - reach), r1 = std::min(h - 1, r + reach);
      const int c0 = std::max(0, c - reach), c1 = std::min(w - 1, c + reach);
      for (int rr = r0; rr <= r1; ++rr) {
        for (int cc = c0; cc <= c1; ++cc) {
          const double dist = std::sqrt(static_cast<double>((rr - r) * (rr - r) + (cc - c) * (cc - c)));
          const double wgt = radius - dist;
          if (wgt <= 0.0) continue;
          const double wx = wgt * density.values.at(rr, cc);
          num += wx * raw.at(rr, cc);
          den += wx;
        }
      }
      out.at(r, c) = den > 0.0 ? num / den : raw.at(r, c);
    }
  }
  return out;
}

namespace {

// dC/dx_e from the element energy; the constant factor is irrelevant under
// the OC multiplier but the sign (negative for positive energy) is load-bearing.
ScalarField compliance_sensitivity(const DensityField& density, const ScalarField& energy,
                                   double penal) {
  const auto& dom = *density.domain;
  ScalarField dc(energy.rows, energy.cols, 0.0);
  for (int r = 0; r < energy.rows; ++r)
    for (int c = 0; c < energy.cols; ++c) {
      if (dom.passive(r, c)) continue;
      const double x = std::max(density.values.at(r, c), kSimpDesignFloor);
      dc.at(r, c) = -penal * 2.0 * energy.at(r, c) / x;
    }
  return dc;
}

}  // namespace

DensityField simp_step(const DensityField& density, const ScalarField& energy,
                       double target_volume, const OptimizerConfig& cfg) {
  const auto& dom = *density.domain;
  const int h = dom.height_elems, w = dom.width_elems;
  if (energy.rows != h || energy.cols != w)
    throw std::invalid_argument("simp_step: energy shape mismatch");

  const ScalarField dc =
      sensitivity_filter(compliance_sensitivity(density, energy, cfg.penal),
                         cfg.filter_radius, density);

  // Per-element move-limited bounds and OC drive term.
  std::vector<double> lo, hi, drive, base;
  lo.reserve(static_cast<size_t>(h) * w);
  std::vector<std::pair<int, int>> active;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (dom.passive(r, c)) continue;
      const double x = density.values.at(r, c);
      active.emplace_back(r, c);
      lo.push_back(std::max(kSimpDesignFloor, x - cfg.move_limit));
      hi.push_back(std::min(1.0, x + cfg.move_limit));
      drive.push_back(std::max(0.0, -dc.at(r, c)));
      base.push_back(x);
    }

  auto volume_at = [&](double lambda, std::vector<double>* out) {
    double v = 0.0;
    for (size_t i = 0; i < base.size(); ++i) {
      const double xn =
          std::clamp(base[i] * std::sqrt(drive[i] / lambda), lo[i], hi[i]);
      if (out) (*out)[i] = xn;
      v += xn;
    }
    return v;
  };

  double vmax = 0.0, vmin = 0.0;
  for (size_t i = 0; i < base.size(); ++i) {
    vmax += hi[i];
    vmin += lo[i];
  }
  const double vol_tol = 1e-6 * target_volume;
  if (target_volume > vmax + vol_tol || target_volume < vmin - vol_tol)
    throw std::runtime_error("OC bisection cannot bracket the volume target");

  // Bracket: volume_at is nonincreasing in lambda.
  double lambda_hi = 1.0;
  while (volume_at(lambda_hi, nullptr) > target_volume && lambda_hi < 1e60) lambda_hi *= 2.0;
  double lambda_lo = 0.0;  // limit lambda -> 0 gives the upper clamp everywhere
  if (lambda_hi >= 1e60) throw std::runtime_error("OC bisection cannot bracket the volume target");

  for (int it = 0; it < 500 && (lambda_hi - lambda_lo) > 1e-12 * lambda_hi; ++it) {
    const double mid = 0.5 * (lambda_lo + lambda_hi);
    if (volume_at(mid, nullptr) > target_volume)
      lambda_lo = mid;
    else
      lambda_hi = mid;
  }

  std::vector<double> xnew(base.size());
  const double vol = volume_at(0.5 * (lambda_lo + lambda_hi), &xnew);
  if (std::fabs(vol - target_volume) > vol_tol)
    throw std::runtime_error("OC bisection failed to meet the volume target");

  DensityField out;
  out.domain = density.domain;
  out.values = Field2D(h, w, 0.0);
  for (size_t i = 0; i < active.size(); ++i)
    out.values.at(active[i].first, active[i].second) = xnew[i];
  return out;
}

DensityField beso_step(const DensityField& density,
                       const std::vector<ScalarField>& sensitivity_history,
                       double target_volume_this_iter, const OptimizerConfig& cfg) {
  (void)cfg;
  const auto& dom = *density.domain;
  const int h = dom.height_elems, w = dom.width_elems;
  if (sensitivity_history.empty())
    throw std::invalid_argument("beso_step: empty sensitivity history");
  for (const auto& s : sensitivity_history)
    if (s.rows != h || s.cols != w)
      throw std::invalid_argument("beso_step: sensitivity shape mismatch");

  struct Ranked {
    double sens;
    double current;
    int index;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(static_cast<size_t>(h) * w);
  const double inv_n = 1.0 / static_cast<double>(sensitivity_history.size());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (dom.passive(r, c)) continue;
      double s = 0.0;
      for (const auto& f : sensitivity_history) s += f.at(r, c);
      ranked.push_back({s * inv_n, density.values.at(r, c), r * w + c});
    }

  long solid = std::lround(target_volume_this_iter);
  solid = std::clamp<long>(solid, 0, static_cast<long>(ranked.size()));

  // Ties keep the current solid set (no ranking pressure -> no change).
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.sens != b.sens) return a.sens > b.sens;
    if (a.current != b.current) return a.current > b.current;
    return a.index < b.index;
  });

  DensityField out;
  out.domain = density.domain;
  out.values = Field2D(h, w, 0.0);
  for (size_t i = 0; i < ranked.size(); ++i) {
    const int r = ranked[i].index / w, c = ranked[i].index % w;
    out.values.at(r, c) = static_cast<long>(i) < solid ? 1.0 : kBesoSoftKill;
  }
  return out;
}

EnergyProvider fem_energy_provider(const TOProblem& problem, const OptimizerConfig& cfg) {
  const double penal = cfg.penal;
  const SolveOptions solve = cfg.solve;
  return [problem, penal, solve](const DensityField& density) {
    FemSolution sol = assemble_and_solve(problem, density, penal, solve);
    EnergyEval eval;
    eval.fine_energy = std::move(sol.element_energy);
    eval.compliance = sol.compliance;
    return eval;
  };
}

const char* TOTrace::csv_header() { return "iteration,compliance,volume_fraction"; }

std::string TOTrace::to_csv() const {
  std::string out = csv_header();
  out.push_back('\n');
  for (const auto& rec : records) {
    out += std::to_string(rec.iteration);
    out.push_back(',');
    out += format_double(rec.compliance);
    out.push_back(',');
    out += format_double(rec.volume_fraction);
    out.push_back('\n');
  }
  return out;
}

namespace {

bool window_converged(const std::vector<TraceRecord>& records, double tol) {
  if (tol <= 0.0 || records.size() < 10) return false;
  const size_t n = records.size();
  double recent = 0.0, previous = 0.0;
  for (size_t i = 0; i < 5; ++i) {
    recent += records[n - 1 - i].compliance;
    previous += records[n - 6 - i].compliance;
  }
  recent /= 5.0;
  previous /= 5.0;
  if (previous == 0.0) return false;
  return std::fabs(recent - previous) / std::fabs(previous) < tol;
}

}  // namespace

TOTrace run_to(const TOProblem& problem, const OptimizerConfig& cfg,
               const EnergyProvider& engine, const RunOptions& opts) {
  validate_problem(problem);
  if (cfg.max_iters < 1) throw std::invalid_argument("run_to: max_iters must be >= 1");

  const double active = static_cast<double>(problem.domain->active_count());
  const double target_volume = problem.volume_fraction * active;

  DensityField density = uniform_density(problem, cfg.method == Method::beso);
  double beso_target = total_volume(density);  // geometric schedule starts at the current volume
  std::optional<ScalarField> prev_filtered;

  TOTrace trace;
  trace.records.reserve(cfg.max_iters);
  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    EnergyEval eval = engine(density);
    if (eval.fine_energy.rows != density.values.rows ||
        eval.fine_energy.cols != density.values.cols)
      throw std::runtime_error("engine returned an energy field of the wrong shape");

    TraceRecord rec;
    rec.iteration = iter;
    rec.compliance = eval.compliance;
    rec.volume_fraction = total_volume(density) / active;
    rec.coarse_energy = eval.coarse_energy;
    if (opts.keep_fields) {
      rec.density = std::make_shared<Field2D>(density.values);
      rec.fine_energy = std::make_shared<Field2D>(eval.fine_energy);
    }
    trace.records.push_back(rec);
    if (opts.on_iteration) opts.on_iteration(trace.records.back());

    // The windowed criterion only makes sense once the design sits at the
    // target volume (BESO spends its first phase shrinking toward it).
    if (std::fabs(rec.volume_fraction - problem.volume_fraction) <= 1e-3 &&
        window_converged(trace.records, cfg.convergence_tol)) {
      trace.converged = true;
      break;
    }
    if (iter == cfg.max_iters) break;

    if (cfg.method == Method::simp) {
      density = simp_step(density, eval.fine_energy, target_volume, cfg);
    } else {
      ScalarField filtered =
          sensitivity_filter(eval.fine_energy, cfg.filter_radius, density);
      std::vector<ScalarField> history;
      history.push_back(std::move(filtered));
      if (prev_filtered) history.push_back(std::move(*prev_filtered));
      beso_target = std::max(target_volume, beso_target * (1.0 - cfg.beso_evolution_rate));
      density = beso_step(density, history, beso_target, cfg);
      // Carry the stabilized (averaged) field, not the raw one: each broken
      // or noisy frame then decays geometrically instead of vanishing from
      // the window after one step, which is what keeps rank-marginal
      // elements from cycling in and out of the design.
      if (history.size() == 2) {
        ScalarField avg = history[0];
        for (size_t i = 0; i < avg.data.size(); ++i)
          avg.data[i] = 0.5 * (avg.data[i] + history[1].data[i]);
        prev_filtered = std::move(avg);
      } else {
        prev_filtered = std::move(history[0]);
      }
    }
  }

  trace.final_density = std::move(density);
  return trace;
}

}  // namespace fragto
