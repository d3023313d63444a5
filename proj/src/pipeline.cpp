#include "fragto/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "fragto/gridfile.hpp"
#include "fragto/util.hpp"

namespace fragto {

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void check_scale(const TOProblem& problem, const ScaleSpec& scale) {
  if (scale.fine_w != problem.domain->width_elems ||
      scale.fine_h != problem.domain->height_elems)
    throw std::invalid_argument("scale does not match the problem mesh");
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Dataset Dataset::slice(size_t begin, size_t end) const {
  if (begin > end || end > size()) throw std::invalid_argument("Dataset::slice: bad range");
  Dataset out = *this;
  out.coarse_energy.assign(coarse_energy.begin() + begin, coarse_energy.begin() + end);
  out.fine_density.assign(fine_density.begin() + begin, fine_density.begin() + end);
  out.fine_energy.assign(fine_energy.begin() + begin, fine_energy.begin() + end);
  out.compliance.assign(compliance.begin() + begin, compliance.begin() + end);
  return out;
}

TOProblem coarsen_problem(const TOProblem& fine, const ScaleSpec& scale) {
  check_scale(fine, scale);
  const auto& names = problem_catalog();
  if (std::find(names.begin(), names.end(), fine.name) == names.end())
    throw std::invalid_argument("coarsen_problem: '" + fine.name +
                                "' is not a catalog problem");
  TOProblem coarse = make_problem(fine.name, scale.coarse_w, scale.coarse_h, 1);
  if (coarse.physics == Physics::thermal) {
    // One coarse element stands for ratio^2 fine elements' worth of heating.
    const double area = static_cast<double>(scale.ratio) * scale.ratio;
    for (auto& v : coarse.loads.thermal_source.data) v *= area;
  }
  return coarse;
}

Dataset generate_dataset(const TOProblem& problem, OptimizerConfig cfg, int n_iters,
                         const ScaleSpec& scale) {
  if (n_iters < 1) throw std::invalid_argument("generate_dataset: n_iters must be >= 1");
  if (n_iters > cfg.max_iters)
    throw std::invalid_argument("generate_dataset: n_iters exceeds cfg.max_iters");
  check_scale(problem, scale);
  const TOProblem coarse_problem = coarsen_problem(problem, scale);

  cfg.max_iters = n_iters;       // harvest exactly n_iters iterations
  cfg.convergence_tol = 0.0;     // no early stop while harvesting
  RunOptions opts;
  opts.keep_fields = true;
  const TOTrace trace = run_to(problem, cfg, fem_energy_provider(problem, cfg), opts);

  Dataset data;
  data.problem_name = problem.name;
  data.physics = problem.physics;
  data.method = cfg.method;
  data.fine_w = scale.fine_w;
  data.fine_h = scale.fine_h;
  data.coarse_w = scale.coarse_w;
  data.coarse_h = scale.coarse_h;
  data.ratio = scale.ratio;
  data.coarse_energy.reserve(trace.records.size());
  data.fine_density.reserve(trace.records.size());
  data.fine_energy.reserve(trace.records.size());
  for (const auto& rec : trace.records) {
    DensityField dens{*rec.density, problem.domain};
    DensityField cd = coarsen_density(dens, scale);
    FemSolution csol = assemble_and_solve(coarse_problem, cd, cfg.penal, cfg.solve);
    data.coarse_energy.push_back(std::move(csol.element_energy));
    data.fine_density.push_back(std::move(dens));
    data.fine_energy.push_back(*rec.fine_energy);
    data.compliance.push_back(rec.compliance);
  }
  data.norm = estimate_dataset_norm(data);
  return data;
}

NormalizationFactors estimate_dataset_norm(const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("estimate_dataset_norm: empty dataset");
  const size_t k = std::min<size_t>(5, data.size());
  std::vector<ScalarField> coarse(data.coarse_energy.begin(), data.coarse_energy.begin() + k);
  std::vector<ScalarField> fine(data.fine_energy.begin(), data.fine_energy.begin() + k);
  NormalizationFactors norm;
  norm.coarse_factor = estimate_normalization(coarse);
  norm.fine_factor = estimate_normalization(fine);
  return norm;
}

FragmentBatch fragment_dataset(const Dataset& data, const FragmentSpec& fspec,
                               const NormalizationFactors& norm) {
  if (data.size() == 0) throw std::invalid_argument("fragment_dataset: empty dataset");
  FragmentBatch pooled;
  pooled.coarse_patch = fspec.coarse_patch;
  pooled.fine_patch = fspec.fine_patch;
  for (size_t i = 0; i < data.size(); ++i) {
    const ScalarField cn = normalize(data.coarse_energy[i], norm.coarse_factor);
    const ScalarField fn = normalize(data.fine_energy[i], norm.fine_factor);
    FragmentBatch b = fragment(cn, data.fine_density[i], &fn, fspec);
    std::move(b.coarse_patches.begin(), b.coarse_patches.end(),
              std::back_inserter(pooled.coarse_patches));
    std::move(b.density_patches.begin(), b.density_patches.end(),
              std::back_inserter(pooled.density_patches));
    std::move(b.fine_patches.begin(), b.fine_patches.end(),
              std::back_inserter(pooled.fine_patches));
    pooled.origins.insert(pooled.origins.end(), b.origins.begin(), b.origins.end());
  }
  return pooled;
}

TrainedMapNet train_mapnet(const Dataset& data, const FragmentSpec& fspec,
                           const TrainConfig& tcfg, int channels_base,
                           const NormalizationFactors* norm_override) {
  const NormalizationFactors norm = norm_override ? *norm_override : estimate_dataset_norm(data);
  if (!(norm.coarse_factor > 0.0) || !(norm.fine_factor > 0.0))
    throw std::invalid_argument("train_mapnet: normalization factors must be positive");
  const FragmentBatch batch = fragment_dataset(data, fspec, norm);
  TrainedMapNet out;
  out.model =
      build_model(fspec.coarse_patch, fspec.fine_patch, fspec.overlap, channels_base, tcfg.seed);
  out.model.norm = norm;
  out.loss_history = train(out.model, batch, tcfg);
  return out;
}

EnergyProvider lifted_energy_provider(const MapNetModel& model, const TOProblem& problem,
                                      const ScaleSpec& scale, const FragmentSpec& fspec,
                                      const OptimizerConfig& cfg, PhaseSamples* timers) {
  if (!model.compatible(fspec))
    throw std::invalid_argument("lifted_energy_provider: model fingerprint does not match fspec");
  if (fspec.ratio() != scale.ratio)
    throw std::invalid_argument("lifted_energy_provider: fspec ratio does not match scale");
  check_scale(problem, scale);
  const TOProblem coarse_problem = coarsen_problem(problem, scale);
  const double penal = cfg.penal;
  const SolveOptions solve = cfg.solve;
  const int out_w = scale.fine_w, out_h = scale.fine_h;

  return [model, coarse_problem, scale, fspec, penal, solve, out_w, out_h,
          timers](const DensityField& density) -> EnergyEval {
    double t0 = now_s();
    const DensityField coarse_density = coarsen_density(density, scale);
    FemSolution csol = assemble_and_solve(coarse_problem, coarse_density, penal, solve);
    const double t1 = now_s();
    const ScalarField coarse_norm = normalize(csol.element_energy, model.norm.coarse_factor);
    FragmentBatch batch = fragment(coarse_norm, density, nullptr, fspec);
    const double t2 = now_s();
    const std::vector<ScalarField> preds = predict_batch(model, batch);
    const double t3 = now_s();
    EnergyEval eval;
    eval.fine_energy = denormalize(
        defragment(preds, batch.origins, fspec, out_w, out_h), model.norm.fine_factor);
    eval.compliance = csol.compliance;
    eval.coarse_energy = std::make_shared<const ScalarField>(std::move(csol.element_energy));
    const double t4 = now_s();
    if (timers) {
      timers->coarse_fem.push_back(t1 - t0);
      timers->fragment.push_back(t2 - t1);
      timers->forward.push_back(t3 - t2);
      timers->defragment.push_back(t4 - t3);
    }
    return eval;
  };
}

EvalReport evaluate(const MapNetModel& model, const Dataset& held_out,
                    const FragmentSpec& fspec) {
  if (held_out.size() == 0) throw std::invalid_argument("evaluate: empty held-out dataset");
  if (!model.compatible(fspec))
    throw std::invalid_argument("evaluate: model fingerprint does not match fspec");

  EvalReport rep;
  rep.sample_count = held_out.size();
  const double t_start = now_s();
  double frag_sq = 0.0, defrag_sq = 0.0;
  size_t frag_pixels = 0, defrag_pixels = 0;

  for (size_t i = 0; i < held_out.size(); ++i) {
    double t0 = now_s();
    const ScalarField cn = normalize(held_out.coarse_energy[i], model.norm.coarse_factor);
    const ScalarField fn = normalize(held_out.fine_energy[i], model.norm.fine_factor);
    FragmentBatch batch = fragment(cn, held_out.fine_density[i], &fn, fspec);
    const double t1 = now_s();
    const std::vector<ScalarField> preds = predict_batch(model, batch);
    const double t2 = now_s();
    const ScalarField defragged =
        defragment(preds, batch.origins, fspec, held_out.fine_w, held_out.fine_h);
    const double t3 = now_s();

    for (size_t f = 0; f < preds.size(); ++f)
      for (size_t px = 0; px < preds[f].data.size(); ++px) {
        const double d = preds[f].data[px] - batch.fine_patches[f].data[px];
        frag_sq += d * d;
      }
    rep.fragment_count += preds.size();
    if (!preds.empty()) frag_pixels += preds.size() * preds[0].data.size();

    double sample_sq = 0.0;
    for (size_t px = 0; px < defragged.data.size(); ++px) {
      const double d = defragged.data[px] - fn.data[px];
      sample_sq += d * d;
    }
    defrag_sq += sample_sq;
    defrag_pixels += defragged.data.size();
    rep.per_sample_error.push_back(std::sqrt(sample_sq));
    const double t4 = now_s();
    rep.t_fragment_s += t1 - t0;
    rep.t_forward_s += t2 - t1;
    rep.t_defragment_s += t3 - t2;
    rep.t_metrics_s += t4 - t3;
  }

  rep.frag_paper_mse =
      rep.fragment_count ? std::sqrt(frag_sq) / static_cast<double>(rep.fragment_count) : 0.0;
  rep.frag_plain_mse = frag_pixels ? frag_sq / static_cast<double>(frag_pixels) : 0.0;
  rep.defrag_paper_mse = std::sqrt(defrag_sq) / static_cast<double>(rep.sample_count);
  rep.defrag_plain_mse = defrag_pixels ? defrag_sq / static_cast<double>(defrag_pixels) : 0.0;
  rep.t_total_s = now_s() - t_start;
  return rep;
}

namespace {

// max|a-b| <= tol, with early exit.
bool fields_within(const Field2D& a, const Field2D& b, double tol) {
  for (size_t i = 0; i < a.data.size(); ++i)
    if (std::fabs(a.data[i] - b.data[i]) > tol) return false;
  return true;
}

}  // namespace

std::vector<std::pair<size_t, size_t>> detect_nonuniqueness(const FragmentBatch& frags,
                                                            double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("detect_nonuniqueness: tol must be positive");
  if (!frags.has_targets())
    throw std::invalid_argument("detect_nonuniqueness: batch has no targets");
  std::vector<std::pair<size_t, size_t>> pairs;
  const size_t n = frags.size();
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      if (!fields_within(frags.coarse_patches[i], frags.coarse_patches[j], tol)) continue;
      if (!fields_within(frags.density_patches[i], frags.density_patches[j], tol)) continue;
      if (fields_within(frags.fine_patches[i], frags.fine_patches[j], tol)) continue;
      pairs.emplace_back(i, j);
    }
  return pairs;
}

std::vector<AblationRow> ablation_suite(const TOProblem& problem, const OptimizerConfig& cfg,
                                        const std::vector<int>& ratios,
                                        const std::vector<int>& crop_scales,
                                        const std::vector<size_t>& ns,
                                        const std::vector<uint64_t>& seeds, bool overlap,
                                        const TrainConfig& tcfg, size_t n_test,
                                        int channels_base) {
  std::vector<AblationRow> rows;
  if (ratios.empty() || crop_scales.empty() || ns.empty() || seeds.empty()) return rows;
  const size_t max_n = *std::max_element(ns.begin(), ns.end());
  if (max_n == 0 || n_test == 0)
    throw std::invalid_argument("ablation_suite: ns and n_test must be positive");

  for (int ratio : ratios) {
    const ScaleSpec scale =
        ScaleSpec::from_fine(problem.domain->width_elems, problem.domain->height_elems, ratio);
    OptimizerConfig gcfg = cfg;
    gcfg.max_iters = std::max<int>(gcfg.max_iters, static_cast<int>(max_n + n_test));
    const Dataset data =
        generate_dataset(problem, gcfg, static_cast<int>(max_n + n_test), scale);
    const Dataset held_out = data.slice(max_n, max_n + n_test);
    for (int crop : crop_scales) {
      const FragmentSpec fspec = FragmentSpec::make(scale, crop, overlap);
      for (size_t n : ns) {
        const Dataset train_slice = data.head(n);
        for (uint64_t seed : seeds) {
          TrainConfig t = tcfg;
          t.seed = seed;
          AblationRow row;
          row.ratio = ratio;
          row.crop_scale = crop;
          row.n_train = n;
          row.seed = seed;
          row.overlap = overlap;
          row.fragments_per_sample = static_cast<size_t>(fspec.count_along(scale.coarse_w)) *
                                     fspec.count_along(scale.coarse_h);
          double t0 = now_s();
          TrainedMapNet trained = train_mapnet(train_slice, fspec, t, channels_base);
          row.train_s = now_s() - t0;
          t0 = now_s();
          const EvalReport rep = evaluate(trained.model, held_out, fspec);
          row.eval_s = now_s() - t0;
          row.frag_paper_mse = rep.frag_paper_mse;
          row.defrag_paper_mse = rep.defrag_paper_mse;
          rows.push_back(row);
        }
      }
    }
  }
  return rows;
}

std::string ablation_csv_header() {
  return "ratio,crop_scale,n_train,seed,overlap,fragments_per_sample,frag_paper_mse,"
         "defrag_paper_mse,train_s,eval_s";
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = ablation_csv_header() + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.ratio) + "," + std::to_string(r.crop_scale) + "," +
           std::to_string(r.n_train) + "," + std::to_string(r.seed) + "," +
           (r.overlap ? "1" : "0") + "," + std::to_string(r.fragments_per_sample) + "," +
           format_double(r.frag_paper_mse) + "," + format_double(r.defrag_paper_mse) + "," +
           format_double(r.train_s) + "," + format_double(r.eval_s) + "\n";
  }
  return out;
}

namespace {

std::string sample_path(const std::string& dir, size_t index1, const char* kind) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "sample_%04zu.%s.mfld", index1, kind);
  return dir + "/" + buf;
}

int manifest_int(const KeyValues& kv, const std::string& key) {
  const std::string* v = find_key(kv, key);
  if (!v) throw std::runtime_error("dataset manifest: missing key '" + key + "'");
  try {
    return std::stoi(*v);
  } catch (const std::exception&) {
    throw std::runtime_error("dataset manifest: bad integer for '" + key + "'");
  }
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& data,
                  const std::string& extra_config) {
  if (data.size() == 0) throw std::invalid_argument("save_dataset: empty dataset");
  std::filesystem::create_directories(dir);
  std::string manifest;
  manifest += "# kind=dataset\n";
  manifest += std::string("# toolkit_version=") + kToolkitVersion + "\n";
  manifest += std::string("# physics=") +
              (data.physics == Physics::thermal ? "thermal" : "elastic") + "\n";
  manifest += "# samples=" + std::to_string(data.size()) + "\n";
  manifest += "# norm_coarse=" + format_double(data.norm.coarse_factor) + "\n";
  manifest += "# norm_fine=" + format_double(data.norm.fine_factor) + "\n";
  manifest += "problem=" + data.problem_name + "\n";
  manifest +=
      "size=" + std::to_string(data.fine_w) + "x" + std::to_string(data.fine_h) + "\n";
  manifest += std::string("method=") + method_name(data.method) + "\n";
  manifest += "iters=" + std::to_string(data.size()) + "\n";
  manifest += "ratio=" + std::to_string(data.ratio) + "\n";
  manifest += extra_config;
  write_file_bytes(dir + "/manifest.txt", manifest);

  std::string csv = "sample,compliance\n";
  for (size_t i = 0; i < data.size(); ++i)
    csv += std::to_string(i + 1) + "," + format_double(data.compliance[i]) + "\n";
  write_file_bytes(dir + "/dataset.csv", csv);

  for (size_t i = 0; i < data.size(); ++i) {
    write_grid(sample_path(dir, i + 1, "coarse"), data.coarse_energy[i]);
    write_grid(sample_path(dir, i + 1, "density"), data.fine_density[i].values);
    write_grid(sample_path(dir, i + 1, "fine"), data.fine_energy[i]);
  }
}

Dataset load_dataset(const std::string& dir) {
  const KeyValues kv = read_key_values(dir + "/manifest.txt");
  Dataset data;
  const std::string* problem = find_key(kv, "problem");
  const std::string* size = find_key(kv, "size");
  const std::string* method = find_key(kv, "method");
  if (!problem || !size || !method)
    throw std::runtime_error("dataset manifest: missing problem/size/method");
  data.problem_name = *problem;
  data.method = method_from_string(*method);
  const size_t x = size->find('x');
  if (x == std::string::npos)
    throw std::runtime_error("dataset manifest: size must be WxH");
  try {
    data.fine_w = std::stoi(size->substr(0, x));
    data.fine_h = std::stoi(size->substr(x + 1));
  } catch (const std::exception&) {
    throw std::runtime_error("dataset manifest: size must be WxH");
  }
  data.ratio = manifest_int(kv, "ratio");
  const int samples = manifest_int(kv, "iters");
  if (samples < 1) throw std::runtime_error("dataset manifest: no samples");
  if (data.ratio < 1 || data.fine_w % data.ratio != 0 || data.fine_h % data.ratio != 0)
    throw std::runtime_error("dataset manifest: size not divisible by ratio");
  data.coarse_w = data.fine_w / data.ratio;
  data.coarse_h = data.fine_h / data.ratio;

  const TOProblem prob = make_problem(data.problem_name, data.fine_w, data.fine_h, data.ratio);
  data.physics = prob.physics;
  for (int i = 1; i <= samples; ++i) {
    Field2D coarse = read_grid(sample_path(dir, i, "coarse"));
    Field2D density = read_grid(sample_path(dir, i, "density"));
    Field2D fine = read_grid(sample_path(dir, i, "fine"));
    if (coarse.rows != data.coarse_h || coarse.cols != data.coarse_w ||
        density.rows != data.fine_h || density.cols != data.fine_w ||
        fine.rows != data.fine_h || fine.cols != data.fine_w)
      throw std::runtime_error("dataset: sample grids do not match the manifest dimensions");
    data.coarse_energy.push_back(std::move(coarse));
    data.fine_density.push_back(DensityField{std::move(density), prob.domain});
    data.fine_energy.push_back(std::move(fine));
  }

  data.compliance.assign(samples, 0.0);
  std::istringstream csv(read_file_bytes(dir + "/dataset.csv"));
  std::string line;
  std::getline(csv, line);  // header
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const size_t comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("dataset.csv: malformed line");
    const int idx = std::stoi(line.substr(0, comma));
    if (idx < 1 || idx > samples) throw std::runtime_error("dataset.csv: sample out of range");
    data.compliance[idx - 1] = std::stod(line.substr(comma + 1));
  }
  data.norm = estimate_dataset_norm(data);
  return data;
}

NormalizationFactors estimate_problem_norm(const TOProblem& problem, OptimizerConfig cfg,
                                           const ScaleSpec& scale, int probe_iters) {
  cfg.max_iters = std::max(cfg.max_iters, probe_iters);
  const Dataset probe = generate_dataset(problem, cfg, probe_iters, scale);
  return estimate_dataset_norm(probe);
}

std::vector<BenchRow> bench_engines(const TOProblem& problem, const MapNetModel* model,
                                    const ScaleSpec& scale, const OptimizerConfig& cfg,
                                    int repeats) {
  if (repeats < 1) throw std::invalid_argument("bench_engines: repeats must be >= 1");
  std::vector<BenchRow> rows;

  auto run_engine = [&](const std::string& engine, const EnergyProvider& provider,
                        const PhaseSamples& samples, const std::vector<double>& provider_total) {
    OptimizerConfig bcfg = cfg;
    bcfg.max_iters = repeats;
    bcfg.convergence_tol = 0.0;
    std::vector<double> iter_s;
    double t_prev = now_s();
    RunOptions opts;
    opts.on_iteration = [&](const TraceRecord&) {
      const double t = now_s();
      iter_s.push_back(t - t_prev);
      t_prev = t;
    };
    run_to(problem, bcfg, provider, opts);

    auto add = [&](const std::string& phase, const std::vector<double>& v) {
      if (!v.empty())
        rows.push_back({engine, phase, median_of(v), static_cast<int>(v.size())});
    };
    add("coarse_fem", samples.coarse_fem);
    add("fine_fem", samples.fine_fem);
    if (!samples.fragment.empty()) {
      std::vector<double> fd(samples.fragment.size());
      for (size_t i = 0; i < fd.size(); ++i) fd[i] = samples.fragment[i] + samples.defragment[i];
      add("fragment_defragment", fd);
    }
    add("net_forward", samples.forward);
    // The optimizer update is everything in an iteration besides the engine call.
    const double update = std::max(0.0, median_of(iter_s) - median_of(provider_total));
    rows.push_back({engine, "optimizer_update", update, static_cast<int>(iter_s.size())});
    add("iteration", iter_s);
  };

  {
    PhaseSamples fem_samples;
    std::vector<double> provider_total;
    const EnergyProvider base = fem_energy_provider(problem, cfg);
    EnergyProvider timed = [&](const DensityField& d) {
      const double t0 = now_s();
      EnergyEval e = base(d);
      const double dt = now_s() - t0;
      fem_samples.fine_fem.push_back(dt);
      provider_total.push_back(dt);
      return e;
    };
    run_engine("fem", timed, fem_samples, provider_total);
  }

  if (model) {
    PhaseSamples lift_samples;
    const FragmentSpec fspec =
        FragmentSpec::from_patch(model->coarse_patch, model->ratio(), model->overlap);
    const EnergyProvider base =
        lifted_energy_provider(*model, problem, scale, fspec, cfg, &lift_samples);
    std::vector<double> provider_total;
    EnergyProvider timed = [&](const DensityField& d) {
      const double t0 = now_s();
      EnergyEval e = base(d);
      provider_total.push_back(now_s() - t0);
      return e;
    };
    run_engine("mapnet", timed, lift_samples, provider_total);
  }
  return rows;
}

}  // namespace fragto
