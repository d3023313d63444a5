#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fragto/fragmap.hpp"
#include "fragto/grid.hpp"
#include "fragto/mapnet.hpp"
#include "fragto/topopt.hpp"

namespace fragto {

// Per-iteration training triples harvested from a fine-scale optimization run.
struct Dataset {
  std::string problem_name;
  Physics physics = Physics::elastic;
  Method method = Method::beso;
  int fine_w = 0, fine_h = 0;
  int coarse_w = 0, coarse_h = 0;
  int ratio = 16;
  std::vector<ScalarField> coarse_energy;    // one per harvested iteration, in order
  std::vector<DensityField> fine_density;
  std::vector<ScalarField> fine_energy;
  std::vector<double> compliance;            // fine compliance per iteration
  NormalizationFactors norm;                 // estimated at generation time

  size_t size() const { return fine_density.size(); }
  // Samples [begin, end), 0-based; keeps problem metadata and factors.
  Dataset slice(size_t begin, size_t end) const;
  Dataset head(size_t n) const { return slice(0, n); }
};

// Builds the coarse-resolution twin of a catalog problem (thermal sources are
// scaled by ratio^2 so one coarse element carries its block's total heating).
TOProblem coarsen_problem(const TOProblem& fine, const ScaleSpec& scale);

// Runs fine-scale FEM-TO for exactly n_iters iterations (no early stop) and
// stores, per iteration: fine density, fine energy (from the solve the
// optimizer already did), and the coarse energy obtained by coarsening the
// density and solving coarse FEM on it.
Dataset generate_dataset(const TOProblem& problem, OptimizerConfig cfg, int n_iters,
                         const ScaleSpec& scale);

// Power-of-ten factors from the first min(5, N) samples' pooled fields.
NormalizationFactors estimate_dataset_norm(const Dataset& data);

struct TrainedMapNet {
  MapNetModel model;
  std::vector<double> loss_history;
};

// Normalizes (estimating factors unless an override is given), fragments every
// sample per fspec, and trains a fresh He-initialized model on the pooled batch.
TrainedMapNet train_mapnet(const Dataset& data, const FragmentSpec& fspec,
                           const TrainConfig& tcfg, int channels_base = kDefaultChannelsBase,
                           const NormalizationFactors* norm_override = nullptr);

// Pools every sample of the dataset into one normalized fragment batch
// (with targets). Factors must be strictly positive.
FragmentBatch fragment_dataset(const Dataset& data, const FragmentSpec& fspec,
                               const NormalizationFactors& norm);

// Accumulated wall-clock seconds per phase of the lifted engine (optional).
struct PhaseSamples {
  std::vector<double> coarse_fem, fine_fem, fragment, forward, defragment;
};

// The engine of the accelerated loop: coarsen density -> coarse FEM ->
// fragment -> per-fragment network forward -> defragment -> denormalize.
// Reports the coarse compliance in the trace. Never calls fine FEM.
EnergyProvider lifted_energy_provider(const MapNetModel& model, const TOProblem& problem,
                                      const ScaleSpec& scale, const FragmentSpec& fspec,
                                      const OptimizerConfig& cfg,
                                      PhaseSamples* timers = nullptr);

struct EvalReport {
  double frag_paper_mse = 0.0;     // (1/N_frag) * sqrt(sum of squared pixel errors)
  double frag_plain_mse = 0.0;     // mean squared pixel error over fragments
  double defrag_paper_mse = 0.0;   // same metric over reassembled full fields
  double defrag_plain_mse = 0.0;
  std::vector<double> per_sample_error;  // defragged paper_mse per held-out sample
  size_t fragment_count = 0;
  size_t sample_count = 0;
  bool normalized_metrics = true;  // errors are computed on normalized values
  double t_fragment_s = 0.0, t_forward_s = 0.0, t_defragment_s = 0.0, t_metrics_s = 0.0;
  double t_total_s = 0.0;
};

// Fragment-level and defragged-level errors of the model on a held-out slice.
EvalReport evaluate(const MapNetModel& model, const Dataset& held_out,
                    const FragmentSpec& fspec);

// Pairs (i, j), i < j, whose coarse and density patches agree elementwise
// within tol while the fine targets differ beyond tol somewhere.
std::vector<std::pair<size_t, size_t>> detect_nonuniqueness(const FragmentBatch& frags,
                                                            double tol = 1e-12);

struct AblationRow {
  int ratio = 0, crop_scale = 0;
  size_t n_train = 0;
  uint64_t seed = 0;
  bool overlap = false;
  size_t fragments_per_sample = 0;
  double frag_paper_mse = 0.0, defrag_paper_mse = 0.0;
  double train_s = 0.0, eval_s = 0.0;
};

// Cross-product study: for each ratio, one dataset of max(ns)+n_test harvested
// iterations; then train/evaluate per (crop_scale, n, seed). Train slice is
// samples [1, n], held-out is the (max ns, max ns + n_test] tail.
std::vector<AblationRow> ablation_suite(const TOProblem& problem, const OptimizerConfig& cfg,
                                        const std::vector<int>& ratios,
                                        const std::vector<int>& crop_scales,
                                        const std::vector<size_t>& ns,
                                        const std::vector<uint64_t>& seeds, bool overlap,
                                        const TrainConfig& tcfg, size_t n_test,
                                        int channels_base = kDefaultChannelsBase);
std::string ablation_csv_header();
std::string ablation_csv(const std::vector<AblationRow>& rows);

// Dataset directory: manifest.txt + dataset.csv + per-sample grid files.
// The manifest's plain keys (problem, size, method, iters, ratio) mirror the
// generation options; derived values travel as '#' comments. extra_config
// lines (already formatted) are appended verbatim. Normalization factors are
// re-derived from the samples on load.
void save_dataset(const std::string& dir, const Dataset& data,
                  const std::string& extra_config = "");
Dataset load_dataset(const std::string& dir);

// 5-iteration fine-FEM probe for normalization factors on a new problem
// (the explicit exception to "no fine FEM in transfer mode").
NormalizationFactors estimate_problem_norm(const TOProblem& problem, OptimizerConfig cfg,
                                           const ScaleSpec& scale, int probe_iters = 5);

struct BenchRow {
  std::string engine;  // "fem" | "mapnet"
  std::string phase;   // "fine_fem", "coarse_fem", "fragment_defragment", "net_forward",
                       // "optimizer_update", "iteration"
  double median_s = 0.0;
  int samples = 0;
};

// Times `repeats` real optimizer iterations under each engine (model == nullptr
// benches the FEM engine only) and reports per-phase medians.
std::vector<BenchRow> bench_engines(const TOProblem& problem, const MapNetModel* model,
                                    const ScaleSpec& scale, const OptimizerConfig& cfg,
                                    int repeats);

}  // namespace fragto
