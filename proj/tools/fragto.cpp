// fragto — command-line surface for the fragment-lifted topology-optimization toolkit.
//
// Subcommands: gen-data, train, optimize, eval, ablate, detect-nonunique, render, bench.
// Exit codes: 0 success, 2 configuration/usage error, 3 numerical/runtime failure.
// Every command writes a manifest.txt echoing its full effective configuration;
// re-running with `--config manifest.txt` (same seed) reproduces the outputs.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
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

std::pair<int, int> parse_size(const std::string& s) {
  const size_t x = s.find('x');
  if (x == std::string::npos || x == 0 || x + 1 >= s.size())
    throw std::invalid_argument("--size must look like 128x128 (width x height)");
  int w = 0, h = 0;
  try {
    size_t used = 0;
    w = std::stoi(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("");
    const std::string hs = s.substr(x + 1);
    h = std::stoi(hs, &used);
    if (used != hs.size()) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw std::invalid_argument("--size must look like 128x128 (width x height)");
  }
  if (w < 2 || h < 2) throw std::invalid_argument("--size dimensions must be >= 2");
  return {w, h};
}

// --config is expanded before CLI11 ever parses: the file's key=value pairs
// become --key=value tokens inserted right after the subcommand name, except
// keys the command line already provides (explicit flags always win).
void add_config_option(CLI::App* cmd) {
  cmd->add_option("--config")
      ->description("Key=value file applied before other flags (explicit flags win)")
      ->type_name("FILE");
}

std::vector<std::string> expand_args(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  size_t cfg_pos = args.size();
  std::string cfg_file;
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw std::invalid_argument("--config needs a file argument");
      cfg_file = args[i + 1];
      cfg_pos = i;
      args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      cfg_file = args[i].substr(9);
      cfg_pos = i;
      args.erase(args.begin() + static_cast<long>(i));
      break;
    }
  }
  if (cfg_file.empty()) return args;
  for (const auto& a : args)
    if (a == "--config" || a.rfind("--config=", 0) == 0)
      throw std::invalid_argument("--config may be given only once");

  size_t sub = args.size();
  for (size_t i = 0; i < cfg_pos && i < args.size(); ++i)
    if (!args[i].empty() && args[i][0] != '-') {
      sub = i;
      break;
    }
  if (sub == args.size())
    throw std::invalid_argument("--config must follow a subcommand name");

  KeyValues kv;
  try {
    kv = read_key_values(cfg_file);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("--config: ") + e.what());
  }
  std::vector<std::string> expanded;
  for (const auto& [k, v] : kv) {
    if (k == "config") throw std::invalid_argument("--config files may not nest config=");
    bool overridden = false;
    for (const auto& a : args)
      if (a == "--" + k || a.rfind("--" + k + "=", 0) == 0) {
        overridden = true;
        break;
      }
    if (!overridden) expanded.push_back("--" + k + "=" + v);
  }
  args.insert(args.begin() + static_cast<long>(sub) + 1, expanded.begin(), expanded.end());
  return args;
}

// Manifest writer: '#' comment lines carry derived/informational values, plain
// key=value lines are exactly the command's options so the file doubles as a
// --config input.
struct Manifest {
  std::string text;
  void comment(const std::string& k, const std::string& v) { text += "# " + k + "=" + v + "\n"; }
  void kv(const std::string& k, const std::string& v) { text += k + "=" + v + "\n"; }
  void kv(const std::string& k, int v) { kv(k, std::to_string(v)); }
  void kv(const std::string& k, uint64_t v) { kv(k, std::to_string(v)); }
  void kv(const std::string& k, double v) { kv(k, format_double(v)); }
  void kv(const std::string& k, bool v) { kv(k, std::string(v ? "true" : "false")); }
  void write(const std::string& path) const { write_file_bytes(path, text); }
};

Manifest manifest_head(const std::string& command) {
  Manifest m;
  m.comment("command", command);
  m.comment("toolkit_version", kToolkitVersion);
  return m;
}

struct OptKnobs {
  std::string method = "beso";
  double penal = 3.0;
  double filter_radius = 0.0;  // 0 = size-proportional default
  double move_limit = 0.2;
  double evolution_rate = 0.02;
  int max_iters = 200;
  double conv_tol = 1e-3;
  double solve_tol = 1e-10;
};

void add_opt_knobs(CLI::App* cmd, OptKnobs& k) {
  cmd->add_option("--method", k.method, "Optimizer: simp | beso")
      ->check(CLI::IsMember({"simp", "beso"}));
  cmd->add_option("--penal", k.penal, "Stiffness penalization exponent");
  cmd->add_option("--filter-radius", k.filter_radius,
                  "Sensitivity filter radius in elements (0 = side/32 default)");
  cmd->add_option("--move", k.move_limit, "Density move limit per update");
  cmd->add_option("--er", k.evolution_rate, "Volume evolution rate per iteration");
  cmd->add_option("--max-iters", k.max_iters, "Iteration cap");
  cmd->add_option("--conv-tol", k.conv_tol, "Windowed relative convergence tolerance");
  cmd->add_option("--solve-tol", k.solve_tol, "Linear-solver relative residual target");
}

OptimizerConfig knobs_to_config(const OptKnobs& k, int width, int height) {
  OptimizerConfig cfg;
  cfg.method = method_from_string(k.method);
  cfg.penal = k.penal;
  cfg.filter_radius =
      k.filter_radius > 0.0 ? k.filter_radius : default_filter_radius(width, height);
  cfg.move_limit = k.move_limit;
  cfg.beso_evolution_rate = k.evolution_rate;
  cfg.max_iters = k.max_iters;
  cfg.convergence_tol = k.conv_tol;
  cfg.solve.tol = k.solve_tol;
  return cfg;
}

void echo_opt_knobs(Manifest& m, const OptKnobs& k) {
  m.kv("method", k.method);
  m.kv("penal", k.penal);
  m.kv("filter-radius", k.filter_radius);
  m.kv("move", k.move_limit);
  m.kv("er", k.evolution_rate);
  m.kv("max-iters", k.max_iters);
  m.kv("conv-tol", k.conv_tol);
  m.kv("solve-tol", k.solve_tol);
}

struct TrainKnobs {
  double lr = 1e-4;
  int steps = 1000;
  int batch = 64;
  uint64_t seed = 1;
  int channels = kDefaultChannelsBase;
};

void add_train_knobs(CLI::App* cmd, TrainKnobs& k) {
  cmd->add_option("--lr", k.lr, "ADAM learning rate");
  cmd->add_option("--steps", k.steps, "Training steps");
  cmd->add_option("--batch", k.batch, "Minibatch size");
  cmd->add_option("--seed", k.seed, "Seed for init and minibatch sampling");
  cmd->add_option("--channels", k.channels, "Base channel width of the network");
}

TrainConfig knobs_to_tcfg(const TrainKnobs& k) {
  TrainConfig t;
  t.learning_rate = k.lr;
  t.steps = k.steps;
  t.batch_size = k.batch;
  t.seed = k.seed;
  return t;
}

void echo_train_knobs(Manifest& m, const TrainKnobs& k) {
  m.kv("lr", k.lr);
  m.kv("steps", k.steps);
  m.kv("batch", k.batch);
  m.kv("seed", k.seed);
  m.kv("channels", k.channels);
}

void setup_gen_data(CLI::App& app) {
  auto* cmd = app.add_subcommand("gen-data", "Harvest a training dataset from a fine FEM-TO run");
  add_config_option(cmd);
  struct Opts {
    std::string problem, size, out;
    int iters = 0, ratio = 16;
    OptKnobs knobs;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--problem", o->problem, "Catalog problem name")->required();
  cmd->add_option("--size", o->size, "Fine mesh as WxH, e.g. 128x128")->required();
  cmd->add_option("--iters", o->iters, "Number of iterations to harvest")->required();
  cmd->add_option("--ratio", o->ratio, "Coarsening ratio (fine elements per coarse, per axis)");
  cmd->add_option("--out", o->out, "Output dataset directory")->required();
  add_opt_knobs(cmd, o->knobs);
  cmd->callback([o]() {
    if (o->iters < 1) throw std::invalid_argument("--iters must be >= 1");
    const auto [w, h] = parse_size(o->size);
    const TOProblem problem = make_problem(o->problem, w, h, o->ratio);
    OptimizerConfig cfg = knobs_to_config(o->knobs, w, h);
    cfg.max_iters = std::max(cfg.max_iters, o->iters);
    const ScaleSpec scale = ScaleSpec::from_fine(w, h, o->ratio);
    const Dataset data = generate_dataset(problem, cfg, o->iters, scale);
    // The dataset manifest doubles as this command's manifest: save_dataset
    // writes problem/size/method/iters/ratio, we append the remaining options.
    Manifest extra;
    extra.comment("command", "gen-data");
    extra.kv("penal", o->knobs.penal);
    extra.kv("filter-radius", o->knobs.filter_radius);
    extra.kv("move", o->knobs.move_limit);
    extra.kv("er", o->knobs.evolution_rate);
    extra.kv("max-iters", o->knobs.max_iters);
    extra.kv("conv-tol", o->knobs.conv_tol);
    extra.kv("solve-tol", o->knobs.solve_tol);
    extra.kv("out", o->out);
    save_dataset(o->out, data, extra.text);
    std::cout << "gen-data: " << data.size() << " samples -> " << o->out << "\n";
  });
}

void setup_train(CLI::App& app) {
  auto* cmd = app.add_subcommand("train", "Train a field-lifting model on a dataset");
  add_config_option(cmd);
  struct Opts {
    std::string data, out;
    int crop_scale = 0;
    bool overlap = false;
    double norm_coarse = 0.0, norm_fine = 0.0;  // 0 = estimate from data
    TrainKnobs knobs;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--data", o->data, "Dataset directory from gen-data")->required();
  cmd->add_option("--crop-scale", o->crop_scale, "Fragments per axis (non-overlapping tiling)")
      ->required();
  cmd->add_flag("--overlap", o->overlap, "Stride-1 overlapping fragmentation");
  cmd->add_option("--norm-coarse", o->norm_coarse, "Coarse normalization factor (0 = estimate)");
  cmd->add_option("--norm-fine", o->norm_fine, "Fine normalization factor (0 = estimate)");
  cmd->add_option("--out", o->out, "Output model file")->required();
  add_train_knobs(cmd, o->knobs);
  cmd->callback([o]() {
    const Dataset data = load_dataset(o->data);
    const ScaleSpec scale = ScaleSpec::from_fine(data.fine_w, data.fine_h, data.ratio);
    const FragmentSpec fspec = FragmentSpec::make(scale, o->crop_scale, o->overlap);
    NormalizationFactors norm = estimate_dataset_norm(data);
    if (o->norm_coarse > 0.0) norm.coarse_factor = o->norm_coarse;
    if (o->norm_fine > 0.0) norm.fine_factor = o->norm_fine;
    const TrainedMapNet trained =
        train_mapnet(data, fspec, knobs_to_tcfg(o->knobs), o->knobs.channels, &norm);
    const fs::path out_path(o->out);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    save_model(trained.model, o->out);

    std::string loss_csv = "step,loss\n";
    for (size_t i = 0; i < trained.loss_history.size(); ++i)
      loss_csv += std::to_string(i + 1) + "," + format_double(trained.loss_history[i]) + "\n";
    write_file_bytes(o->out + ".loss.csv", loss_csv);

    Manifest m = manifest_head("train");
    m.comment("norm_coarse_used", format_double(trained.model.norm.coarse_factor));
    m.comment("norm_fine_used", format_double(trained.model.norm.fine_factor));
    m.comment("parameters", std::to_string(trained.model.params.size()));
    m.kv("data", o->data);
    m.kv("crop-scale", o->crop_scale);
    m.kv("overlap", o->overlap);
    m.kv("norm-coarse", o->norm_coarse);
    m.kv("norm-fine", o->norm_fine);
    echo_train_knobs(m, o->knobs);
    m.kv("out", o->out);
    const fs::path mdir = out_path.has_parent_path() ? out_path.parent_path() : fs::path(".");
    m.write((mdir / "manifest.txt").string());
    const double first = trained.loss_history.empty() ? 0.0 : trained.loss_history.front();
    const double last = trained.loss_history.empty() ? 0.0 : trained.loss_history.back();
    std::cout << "train: " << trained.model.params.size() << " parameters, loss "
              << format_double(first) << " -> " << format_double(last) << ", model " << o->out
              << "\n";
  });
}

void setup_optimize(CLI::App& app) {
  auto* cmd = app.add_subcommand("optimize", "Run topology optimization (FEM or lifted engine)");
  add_config_option(cmd);
  struct Opts {
    std::string engine, model, problem, size, out;
    int ratio = 16;
    bool auto_norm = false;
    double norm_coarse = 0.0, norm_fine = 0.0;
    OptKnobs knobs;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--engine", o->engine, "Energy engine: fem | mapnet")
      ->required()
      ->check(CLI::IsMember({"fem", "mapnet"}));
  cmd->add_option("--model", o->model, "Model file (required for --engine mapnet)");
  cmd->add_option("--problem", o->problem, "Catalog problem name")->required();
  cmd->add_option("--size", o->size, "Fine mesh as WxH")->required();
  cmd->add_option("--ratio", o->ratio, "Coarsening ratio (fem engine bookkeeping only)");
  cmd->add_flag("--auto-norm", o->auto_norm,
                "Probe normalization factors with 5 fine-FEM iterations (logged exception)");
  cmd->add_option("--norm-coarse", o->norm_coarse, "Coarse factor override (0 = model value)");
  cmd->add_option("--norm-fine", o->norm_fine, "Fine factor override (0 = model value)");
  cmd->add_option("--out", o->out, "Output run directory")->required();
  add_opt_knobs(cmd, o->knobs);
  cmd->callback([o]() {
    const auto [w, h] = parse_size(o->size);
    int ratio = o->ratio;
    MapNetModel model;
    if (o->engine == "mapnet") {
      if (o->model.empty())
        throw std::invalid_argument("--engine mapnet requires --model");
      model = load_model(o->model);
      ratio = model.ratio();
    }
    const TOProblem problem = make_problem(o->problem, w, h, ratio);
    const OptimizerConfig cfg = knobs_to_config(o->knobs, w, h);

    EnergyProvider provider;
    if (o->engine == "fem") {
      provider = fem_energy_provider(problem, cfg);
    } else {
      const ScaleSpec scale = ScaleSpec::from_fine(w, h, ratio);
      if (o->auto_norm) {
        std::cerr << "[auto-norm] probing normalization with 5 fine-FEM iterations "
                     "(the only fine solves in this run)\n";
        model.norm = estimate_problem_norm(problem, cfg, scale, 5);
        std::cerr << "[auto-norm] coarse_factor=" << format_double(model.norm.coarse_factor)
                  << " fine_factor=" << format_double(model.norm.fine_factor) << "\n";
      }
      if (o->norm_coarse > 0.0) model.norm.coarse_factor = o->norm_coarse;
      if (o->norm_fine > 0.0) model.norm.fine_factor = o->norm_fine;
      const FragmentSpec fspec =
          FragmentSpec::from_patch(model.coarse_patch, model.ratio(), model.overlap);
      provider = lifted_energy_provider(model, problem, scale, fspec, cfg);
    }

    const TOTrace trace = run_to(problem, cfg, provider);
    fs::create_directories(o->out);
    write_file_bytes(o->out + "/trace.csv", trace.to_csv());
    write_grid(o->out + "/final_density.mfld", trace.final_density.values);
    render_density_pgm(o->out + "/final_density.pgm", trace.final_density.values);

    // One fine verification solve so both engines report a comparable compliance.
    const FemSolution verify = assemble_and_solve(problem, trace.final_density, cfg.penal,
                                                  cfg.solve);
    write_grid(o->out + "/final_energy.mfld", verify.element_energy);
    render_energy_pgm(o->out + "/final_energy.pgm", verify.element_energy);
    const double vf =
        total_volume(trace.final_density) / problem.domain->active_count();
    write_key_values(o->out + "/verify.txt",
                     {{"iterations", std::to_string(trace.records.size())},
                      {"converged", trace.converged ? "true" : "false"},
                      {"engine_compliance", format_double(trace.records.back().compliance)},
                      {"fine_compliance", format_double(verify.compliance)},
                      {"volume_fraction", format_double(vf)}});

    Manifest m = manifest_head("optimize");
    m.kv("engine", o->engine);
    if (!o->model.empty()) m.kv("model", o->model);
    m.kv("problem", o->problem);
    m.kv("size", o->size);
    m.kv("ratio", o->ratio);
    m.kv("auto-norm", o->auto_norm);
    m.kv("norm-coarse", o->norm_coarse);
    m.kv("norm-fine", o->norm_fine);
    echo_opt_knobs(m, o->knobs);
    m.kv("out", o->out);
    m.write(o->out + "/manifest.txt");
    std::cout << "optimize[" << o->engine << "]: " << trace.records.size() << " iterations, "
              << (trace.converged ? "converged" : "hit max-iters")
              << ", fine compliance " << format_double(verify.compliance) << ", volume fraction "
              << format_double(vf) << "\n";
  });
}

void setup_eval(CLI::App& app) {
  auto* cmd = app.add_subcommand("eval", "Evaluate a model on (a slice of) a dataset");
  add_config_option(cmd);
  struct Opts {
    std::string data, model, out;
    int from = 1, to = 0;  // 1-based inclusive; to = 0 means last sample
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--data", o->data, "Dataset directory")->required();
  cmd->add_option("--model", o->model, "Model file")->required();
  cmd->add_option("--from", o->from, "First sample of the evaluation slice (1-based)");
  cmd->add_option("--to", o->to, "Last sample of the slice (0 = end)");
  cmd->add_option("--out", o->out, "Output directory")->required();
  cmd->callback([o]() {
    const Dataset data = load_dataset(o->data);
    const int last = o->to > 0 ? o->to : static_cast<int>(data.size());
    if (o->from < 1 || last < o->from || last > static_cast<int>(data.size()))
      throw std::invalid_argument("eval: bad --from/--to slice");
    const Dataset held = data.slice(o->from - 1, last);
    const MapNetModel model = load_model(o->model);
    const FragmentSpec fspec =
        FragmentSpec::from_patch(model.coarse_patch, model.ratio(), model.overlap);
    const EvalReport rep = evaluate(model, held, fspec);

    fs::create_directories(o->out);
    std::string csv = "metric,value\n";
    csv += "frag_paper_mse," + format_double(rep.frag_paper_mse) + "\n";
    csv += "frag_plain_mse," + format_double(rep.frag_plain_mse) + "\n";
    csv += "defrag_paper_mse," + format_double(rep.defrag_paper_mse) + "\n";
    csv += "defrag_plain_mse," + format_double(rep.defrag_plain_mse) + "\n";
    csv += "fragment_count," + std::to_string(rep.fragment_count) + "\n";
    csv += "sample_count," + std::to_string(rep.sample_count) + "\n";
    csv += "normalized_metrics," + std::string(rep.normalized_metrics ? "1" : "0") + "\n";
    csv += "t_fragment_s," + format_double(rep.t_fragment_s) + "\n";
    csv += "t_forward_s," + format_double(rep.t_forward_s) + "\n";
    csv += "t_defragment_s," + format_double(rep.t_defragment_s) + "\n";
    csv += "t_metrics_s," + format_double(rep.t_metrics_s) + "\n";
    csv += "t_total_s," + format_double(rep.t_total_s) + "\n";
    write_file_bytes(o->out + "/eval.csv", csv);
    std::string per = "sample,defrag_paper_mse\n";
    for (size_t i = 0; i < rep.per_sample_error.size(); ++i)
      per += std::to_string(o->from + static_cast<int>(i)) + "," +
             format_double(rep.per_sample_error[i]) + "\n";
    write_file_bytes(o->out + "/per_sample.csv", per);

    Manifest m = manifest_head("eval");
    m.kv("data", o->data);
    m.kv("model", o->model);
    m.kv("from", o->from);
    m.kv("to", o->to);
    m.kv("out", o->out);
    m.write(o->out + "/manifest.txt");
    std::cout << "eval: " << rep.sample_count << " samples, " << rep.fragment_count
              << " fragments, frag paper_mse " << format_double(rep.frag_paper_mse)
              << ", defrag paper_mse " << format_double(rep.defrag_paper_mse) << "\n";
  });
}

void setup_ablate(CLI::App& app) {
  auto* cmd = app.add_subcommand("ablate", "Cross-product train/evaluate study");
  add_config_option(cmd);
  struct Opts {
    std::string problem, size, out;
    std::vector<int> ratios{16};
    std::vector<int> crops{4};
    std::vector<size_t> ns{60};
    std::vector<uint64_t> seeds{1};
    bool overlap = false;
    int iters_test = 40;
    OptKnobs knobs;
    TrainKnobs tknobs;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--problem", o->problem, "Catalog problem name")->required();
  cmd->add_option("--size", o->size, "Fine mesh as WxH")->required();
  cmd->add_option("--ratios", o->ratios, "Coarsening ratios")->delimiter(',');
  cmd->add_option("--crops", o->crops, "Cropping scales (fragments per axis)")->delimiter(',');
  cmd->add_option("--ns", o->ns, "Training sample counts")->delimiter(',');
  cmd->add_option("--seeds", o->seeds, "Training seeds")->delimiter(',');
  cmd->add_flag("--overlap", o->overlap, "Overlapping fragmentation");
  cmd->add_option("--iters-test", o->iters_test, "Held-out samples harvested after max(ns)");
  cmd->add_option("--out", o->out, "Output directory")->required();
  add_opt_knobs(cmd, o->knobs);
  add_train_knobs(cmd, o->tknobs);
  cmd->callback([o]() {
    const auto [w, h] = parse_size(o->size);
    const int max_ratio = *std::max_element(o->ratios.begin(), o->ratios.end());
    const TOProblem problem = make_problem(o->problem, w, h, max_ratio);
    const OptimizerConfig cfg = knobs_to_config(o->knobs, w, h);
    const std::vector<AblationRow> rows =
        ablation_suite(problem, cfg, o->ratios, o->crops, o->ns, o->seeds, o->overlap,
                       knobs_to_tcfg(o->tknobs), o->iters_test, o->tknobs.channels);
    fs::create_directories(o->out);
    write_file_bytes(o->out + "/ablation.csv", ablation_csv(rows));

    auto join_ints = [](const auto& v) {
      std::string s;
      for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
      return s;
    };
    Manifest m = manifest_head("ablate");
    m.kv("problem", o->problem);
    m.kv("size", o->size);
    m.kv("ratios", join_ints(o->ratios));
    m.kv("crops", join_ints(o->crops));
    m.kv("ns", join_ints(o->ns));
    m.kv("seeds", join_ints(o->seeds));
    m.kv("overlap", o->overlap);
    m.kv("iters-test", o->iters_test);
    echo_opt_knobs(m, o->knobs);
    echo_train_knobs(m, o->tknobs);
    m.kv("out", o->out);
    m.write(o->out + "/manifest.txt");
    std::cout << "ablate: " << rows.size() << " configurations -> " << o->out
              << "/ablation.csv\n";
  });
}

void setup_detect_nonunique(CLI::App& app) {
  auto* cmd =
      app.add_subcommand("detect-nonunique", "Find one-to-many input collisions in fragments");
  add_config_option(cmd);
  struct Opts {
    std::string data, out;
    int crop_scale = 0;
    bool overlap = false;
    double tol = 1e-12;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--data", o->data, "Dataset directory")->required();
  cmd->add_option("--crop-scale", o->crop_scale, "Fragments per axis")->required();
  cmd->add_flag("--overlap", o->overlap, "Overlapping fragmentation");
  cmd->add_option("--tol", o->tol, "Elementwise identity tolerance (normalized values)");
  cmd->add_option("--out", o->out, "Output directory")->required();
  cmd->callback([o]() {
    const Dataset data = load_dataset(o->data);
    const ScaleSpec scale = ScaleSpec::from_fine(data.fine_w, data.fine_h, data.ratio);
    const FragmentSpec fspec = FragmentSpec::make(scale, o->crop_scale, o->overlap);
    const FragmentBatch frags = fragment_dataset(data, fspec, estimate_dataset_norm(data));
    const auto pairs = detect_nonuniqueness(frags, o->tol);
    fs::create_directories(o->out);
    std::string csv = "fragment_i,fragment_j\n";
    for (const auto& [i, j] : pairs)
      csv += std::to_string(i) + "," + std::to_string(j) + "\n";
    write_file_bytes(o->out + "/collisions.csv", csv);

    Manifest m = manifest_head("detect-nonunique");
    m.comment("fragments", std::to_string(frags.size()));
    m.comment("collisions", std::to_string(pairs.size()));
    m.kv("data", o->data);
    m.kv("crop-scale", o->crop_scale);
    m.kv("overlap", o->overlap);
    m.kv("tol", o->tol);
    m.kv("out", o->out);
    m.write(o->out + "/manifest.txt");
    std::cout << "detect-nonunique: " << pairs.size() << " colliding pairs among "
              << frags.size() << " fragments\n";
  });
}

void setup_render(CLI::App& app) {
  auto* cmd = app.add_subcommand("render", "Render a grid file to a PGM image");
  add_config_option(cmd);
  struct Opts {
    std::string in, out, kind = "density";
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--in", o->in, "Input grid file")->required();
  cmd->add_option("--out", o->out, "Output .pgm path")->required();
  cmd->add_option("--kind", o->kind, "density (linear, 0=white) | energy (log rescale)")
      ->check(CLI::IsMember({"density", "energy"}));
  cmd->callback([o]() {
    const Field2D field = read_grid(o->in);
    const fs::path out_path(o->out);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    if (o->kind == "density")
      render_density_pgm(o->out, field);
    else
      render_energy_pgm(o->out, field);
    Manifest m = manifest_head("render");
    m.kv("in", o->in);
    m.kv("out", o->out);
    m.kv("kind", o->kind);
    const fs::path mdir = out_path.has_parent_path() ? out_path.parent_path() : fs::path(".");
    m.write((mdir / "manifest.txt").string());
    std::cout << "render: " << o->in << " -> " << o->out << " (" << o->kind << ")\n";
  });
}

void setup_bench(CLI::App& app) {
  auto* cmd = app.add_subcommand("bench", "Per-phase iteration timings for both engines");
  add_config_option(cmd);
  struct Opts {
    std::string problem, size, model, out;
    int repeats = 5;
    OptKnobs knobs;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--problem", o->problem, "Catalog problem name")->required();
  cmd->add_option("--size", o->size, "Fine mesh as WxH")->required();
  cmd->add_option("--model", o->model, "Model file (omit to bench the FEM engine only)");
  cmd->add_option("--repeats", o->repeats, "Iterations timed per engine");
  cmd->add_option("--out", o->out, "Output directory")->required();
  add_opt_knobs(cmd, o->knobs);
  cmd->callback([o]() {
    const auto [w, h] = parse_size(o->size);
    MapNetModel model;
    const MapNetModel* model_ptr = nullptr;
    int ratio = 16;
    if (!o->model.empty()) {
      model = load_model(o->model);
      model_ptr = &model;
      ratio = model.ratio();
    }
    const TOProblem problem = make_problem(o->problem, w, h, ratio);
    const ScaleSpec scale = ScaleSpec::from_fine(w, h, ratio);
    const OptimizerConfig cfg = knobs_to_config(o->knobs, w, h);
    const auto rows = bench_engines(problem, model_ptr, scale, cfg, o->repeats);
    fs::create_directories(o->out);
    std::string csv = "engine,phase,median_s,samples\n";
    for (const auto& r : rows)
      csv += r.engine + "," + r.phase + "," + format_double(r.median_s) + "," +
             std::to_string(r.samples) + "\n";
    write_file_bytes(o->out + "/bench.csv", csv);

    Manifest m = manifest_head("bench");
    m.kv("problem", o->problem);
    m.kv("size", o->size);
    if (!o->model.empty()) m.kv("model", o->model);
    m.kv("repeats", o->repeats);
    echo_opt_knobs(m, o->knobs);
    m.kv("out", o->out);
    m.write(o->out + "/manifest.txt");
    for (const auto& r : rows)
      std::cout << "bench: " << r.engine << " " << r.phase << " median "
                << format_double(r.median_s) << " s\n";
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fragto: fragment-lifted topology optimization toolkit"};
  app.set_version_flag("--version", std::string(kToolkitVersion));
  app.require_subcommand(1);
  setup_gen_data(app);
  setup_train(app);
  setup_optimize(app);
  setup_eval(app);
  setup_ablate(app);
  setup_detect_nonunique(app);
  setup_render(app);
  setup_bench(app);

  try {
    std::vector<std::string> args = expand_args(argc, argv);
    std::reverse(args.begin(), args.end());  // CLI11's vector parse pops from the back
    app.parse(std::move(args));
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the parse error
    return code == 0 ? 0 : 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
