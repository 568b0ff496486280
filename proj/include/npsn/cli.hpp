#pragma once

// Command-line front end. Every subcommand echoes its resolved
// configuration, writes outputs atomically (".partial" then rename), and
// leaves a "<out>.json" sidecar holding the exact argument list so
// `npsn rerun --sidecar <out>.json` regenerates the file.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "npsn/biaslab.hpp"
#include "npsn/experiments.hpp"
#include "npsn/lds.hpp"
#include "npsn/metrics.hpp"
#include "npsn/npsn.hpp"
#include "npsn/predictor.hpp"
#include "npsn/scene.hpp"
#include "npsn/train.hpp"
#include "npsn/transform.hpp"

namespace npsn::cli {

using json = nlohmann::json;

inline constexpr int kSidecarVersion = 1;

namespace detail {

template <class T>
std::vector<T> parse_list(const std::string& text, const std::string& what) {
  std::vector<T> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw InvalidArgument("bad " + what + " entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InvalidArgument("empty " + what + " list");
  return out;
}

inline std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

/// Writes via a ".partial" file renamed on success; removes it on failure.
template <class Fn>
void write_atomically(const std::string& path, Fn&& fn, bool binary = false) {
  const std::string tmp = path + ".partial";
  try {
    {
      std::ofstream out(tmp, binary ? std::ios::binary : std::ios::out);
      if (!out) throw Error("cannot write " + path);
      fn(out);
      out.flush();
      if (!out) throw Error("failed writing " + path);
    }
    std::filesystem::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
}

inline std::shared_ptr<const metrics::LatentSampler> make_sampler(const std::string& spec) {
  if (spec == "mc") return std::make_shared<metrics::McSampler>();
  if (spec == "qmc") return std::make_shared<metrics::QmcSampler>();
  if (spec == "sobol") return std::make_shared<metrics::SobolSampler>();
  if (spec.rfind("npsn:", 0) == 0) {
    auto model = std::make_shared<const net::NpsnModel>(net::NpsnModel::load(spec.substr(5)));
    return std::make_shared<metrics::NpsnSampler>(model);
  }
  throw InvalidArgument("unknown sampler '" + spec + "' (expected mc|qmc|sobol|npsn:<ckpt>)");
}

struct Context {
  std::vector<std::string> args;
  std::ostream& out;
  std::ostream& err;
  bool quiet = false;

  void echo(const std::string& command, const json& resolved) const {
    if (!quiet) err << "# npsn " << command << ' ' << resolved.dump() << '\n';
  }

  void sidecar(const std::string& output, const std::string& command, const json& resolved,
               const json& results = json::object()) const {
    json j;
    j["version"] = kSidecarVersion;
    j["command"] = command;
    j["args"] = args;
    j["resolved"] = resolved;
    j["output"] = output;
    if (!results.empty()) j["results"] = results;
    write_atomically(output + ".json", [&](std::ostream& o) { o << j.dump(2) << '\n'; });
  }
};

}  // namespace detail

/// Runs one command line (without the program name). Returns the exit status.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  detail::Context ctx{args, out, err};
  CLI::App app{"Low-discrepancy and learned purposive sampling for stochastic trajectory prediction", "npsn"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_flag("--quiet", ctx.quiet, "Do not echo the resolved configuration");

  // ---- lds ----
  auto* lds_cmd = app.add_subcommand("lds", "Point-set generation and discrepancy audit");
  lds_cmd->require_subcommand(1);
  struct {
    std::string sampler = "ssobol", transform = "uniform", out;
    std::size_t n = 0, dim = 2;
    std::uint64_t seed = 0;
    bool skip_first = false;
  } gen;
  auto* gen_cmd = lds_cmd->add_subcommand("gen", "Generate a point set as CSV");
  gen_cmd->add_option("--sampler", gen.sampler, "mc|sobol|ssobol|halton")->capture_default_str();
  gen_cmd->add_option("--n", gen.n, "Number of points")->required();
  gen_cmd->add_option("--dim", gen.dim, "Dimension")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Seed for mc/ssobol")->capture_default_str();
  gen_cmd->add_flag("--skip-first", gen.skip_first, "Drop the index-0 point of Sobol sequences");
  gen_cmd->add_option("--transform", gen.transform, "uniform|normal (Box-Muller)")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output CSV")->required();

  std::string disc_in;
  auto* disc_cmd = lds_cmd->add_subcommand("disc", "Print star discrepancy and separation of a CSV point set");
  disc_cmd->add_option("--in", disc_in, "Input CSV")->required();

  // ---- data ----
  auto* data_cmd = app.add_subcommand("data", "Dataset ingestion and synthesis");
  data_cmd->require_subcommand(1);
  struct {
    std::vector<std::string> paths;
    std::string out, source;
    std::size_t stride = 1;
  } load;
  auto* load_cmd = data_cmd->add_subcommand("load", "Window an ETH/UCY text file into scenes");
  load_cmd->add_option("--path", load.paths, "frame ped x y text file; repeat to merge datasets")->required();
  load_cmd->add_option("--stride", load.stride, "Window stride in frames")->capture_default_str();
  load_cmd->add_option("--source", load.source, "Dataset tag stored with each scene (default: file stem)");
  load_cmd->add_option("--out", load.out, "Output scene file")->required();

  struct {
    std::size_t scenes = 2000, max_peds = 3;
    std::string branches = "0.34,0.33,0.33", out;
    double noise = 0.05, speed = 0.4;
    bool interaction = false;
    std::uint64_t seed = 0;
  } synth;
  auto* synth_cmd = data_cmd->add_subcommand("synth", "Generate synthetic branching scenes");
  synth_cmd->add_option("--scenes", synth.scenes, "Number of scenes")->capture_default_str();
  synth_cmd->add_option("--branches", synth.branches, "straight,left,right probabilities")->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise, "Jitter sigma in meters")->capture_default_str();
  synth_cmd->add_option("--speed", synth.speed, "Meters per frame")->capture_default_str();
  synth_cmd->add_option("--max-peds", synth.max_peds, "Pedestrians per scene upper bound")->capture_default_str();
  synth_cmd->add_flag("--interaction", synth.interaction, "Crossing pairs");
  synth_cmd->add_option("--seed", synth.seed, "Seed")->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "Output scene file")->required();

  struct {
    std::string scenes, csv;
  } exp;
  auto* export_cmd = data_cmd->add_subcommand("export", "Flatten a scene file to CSV");
  export_cmd->add_option("--scenes", exp.scenes, "Scene file")->required();
  export_cmd->add_option("--csv", exp.csv, "Output CSV")->required();

  // ---- fit-head ----
  struct {
    std::string scenes, out;
  } fit;
  auto* fit_cmd = app.add_subcommand("fit-head", "Fit the per-horizon covariance schedule");
  fit_cmd->add_option("--scenes", fit.scenes, "Training scene file")->required();
  fit_cmd->add_option("--out", fit.out, "Output head file")->required();

  // ---- train ----
  struct {
    std::string scenes, head, out, log;
    train::TrainConfig cfg;
    std::size_t samples = 20, hidden = 32;
    std::uint64_t init_seed = 0;
  } tr;
  auto* train_cmd = app.add_subcommand("train", "Train NPSN against a frozen head");
  train_cmd->add_option("--scenes", tr.scenes, "Training scene file")->required();
  train_cmd->add_option("--head", tr.head, "Head file")->required();
  train_cmd->add_option("--epochs", tr.cfg.epochs, "Epochs")->capture_default_str();
  train_cmd->add_option("--batch", tr.cfg.batch_scenes, "Scenes per batch")->capture_default_str();
  train_cmd->add_option("--lr", tr.cfg.lr, "Learning rate")->capture_default_str();
  train_cmd->add_option("--lr-step", tr.cfg.lr_step_epochs, "Epochs per learning-rate halving")->capture_default_str();
  train_cmd->add_option("--lambda", tr.cfg.lambda, "Discrepancy loss weight")->capture_default_str();
  train_cmd->add_option("--weight-decay", tr.cfg.weight_decay, "AdamW weight decay")->capture_default_str();
  train_cmd->add_option("--samples", tr.samples, "Samples per pedestrian (N)")->capture_default_str();
  train_cmd->add_option("--hidden", tr.hidden, "Hidden width d_h")->capture_default_str();
  train_cmd->add_option("--seed", tr.cfg.seed, "Seed (initialization and shuffling)")->capture_default_str();
  train_cmd->add_option("--out", tr.out, "Output checkpoint")->required();
  train_cmd->add_option("--log", tr.log, "Epoch log CSV (default <out>.log.csv)");

  // ---- eval ----
  struct {
    std::string scenes, head, sampler = "qmc", out;
    std::size_t n = 20, repeats = 100;
    std::uint64_t seed = 0;
  } ev;
  auto* eval_cmd = app.add_subcommand("eval", "Best-of-N evaluation of one sampler");
  eval_cmd->add_option("--scenes", ev.scenes, "Scene file")->required();
  eval_cmd->add_option("--head", ev.head, "Head file")->required();
  eval_cmd->add_option("--sampler", ev.sampler, "mc|qmc|sobol|npsn:<ckpt>")->capture_default_str();
  eval_cmd->add_option("--n", ev.n, "Samples per pedestrian")->capture_default_str();
  eval_cmd->add_option("--repeats", ev.repeats, "Repeats for stochastic samplers")->capture_default_str();
  eval_cmd->add_option("--seed", ev.seed, "Seed")->capture_default_str();
  eval_cmd->add_option("--out", ev.out, "Report CSV")->required();

  // ---- compare ----
  struct {
    std::string scenes, head, npsn, out;
    std::size_t n = 20, repeats = 100;
    std::uint64_t seed = 0;
  } cmp;
  auto* compare_cmd = app.add_subcommand("compare", "MC vs QMC vs NPSN table with FDE gain over MC");
  compare_cmd->add_option("--scenes", cmp.scenes, "Scene file")->required();
  compare_cmd->add_option("--head", cmp.head, "Head file")->required();
  compare_cmd->add_option("--npsn", cmp.npsn, "NPSN checkpoint (optional)");
  compare_cmd->add_option("--n", cmp.n, "Samples per pedestrian")->capture_default_str();
  compare_cmd->add_option("--repeats", cmp.repeats, "Repeats")->capture_default_str();
  compare_cmd->add_option("--seed", cmp.seed, "Seed")->capture_default_str();
  compare_cmd->add_option("--out", cmp.out, "Comparison CSV")->required();

  // ---- sweep-n ----
  struct {
    std::string scenes, head, samplers = "mc,qmc", grid = "1,2,4,8,16,32,64,128,256,512,1024", out;
    std::vector<std::string> npsn;
    std::size_t repeats = 100;
    std::uint64_t seed = 0;
  } sw;
  auto* sweep_cmd = app.add_subcommand("sweep-n", "Metrics as a function of the sample count");
  sweep_cmd->add_option("--scenes", sw.scenes, "Scene file")->required();
  sweep_cmd->add_option("--head", sw.head, "Head file")->required();
  sweep_cmd->add_option("--samplers", sw.samplers, "Comma list of mc|qmc|sobol")->capture_default_str();
  sweep_cmd->add_option("--npsn", sw.npsn, "NPSN checkpoint(s), each evaluated at its own N");
  sweep_cmd->add_option("--grid", sw.grid, "Comma list of sample counts")->capture_default_str();
  sweep_cmd->add_option("--repeats", sw.repeats, "Repeats")->capture_default_str();
  sweep_cmd->add_option("--seed", sw.seed, "Seed")->capture_default_str();
  sweep_cmd->add_option("--out", sw.out, "Sweep CSV")->required();

  // ---- bias ----
  auto* bias_cmd = app.add_subcommand("bias", "Sampling-bias experiments");
  bias_cmd->require_subcommand(1);
  struct {
    std::string experiment = "taylor", samplers, integrand, functional = "square", grid, scenes, head, out;
    std::size_t dim = 0, n = 20, trials = 0, max_peds = 200, disc_trials = 0;
    std::uint64_t seed = 0;
  } bias;
  auto* bias_run = bias_cmd->add_subcommand("run", "Run a bias experiment");
  bias_run->add_option("--experiment", bias.experiment, "taylor|convergence|bestofn")->capture_default_str();
  bias_run->add_option("--sampler", bias.samplers, "Comma list of mc|sobol|ssobol|halton");
  bias_run->add_option("--integrand", bias.integrand, "x1|product|gaussian_bump|constant");
  bias_run->add_option("--functional", bias.functional, "square|linear|exp (taylor)")->capture_default_str();
  bias_run->add_option("--dim", bias.dim, "Integrand dimension");
  bias_run->add_option("--n", bias.n, "Sample count (taylor)")->capture_default_str();
  bias_run->add_option("--grid", bias.grid, "Comma list of n (convergence, bestofn)");
  bias_run->add_option("--trials", bias.trials, "Trials");
  bias_run->add_option("--disc-trials", bias.disc_trials, "Point sets per cell with measured D* (convergence)");
  bias_run->add_option("--scenes", bias.scenes, "Scene file (bestofn; synthetic if omitted)");
  bias_run->add_option("--head", bias.head, "Head file (bestofn; fitted if omitted)");
  bias_run->add_option("--max-peds", bias.max_peds, "Pedestrians used (bestofn)")->capture_default_str();
  bias_run->add_option("--seed", bias.seed, "Seed")->capture_default_str();
  bias_run->add_option("--out", bias.out, "Output CSV")->required();

  // ---- rerun ----
  struct {
    std::string sidecar, out;
  } rr;
  auto* rerun_cmd = app.add_subcommand("rerun", "Re-execute the command recorded in a sidecar");
  rerun_cmd->add_option("--sidecar", rr.sidecar, "Sidecar JSON")->required();
  rerun_cmd->add_option("--out", rr.out, "Override the output path");

  std::vector<const char*> argv{"npsn"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen_cmd) {
      const json cfg = {{"sampler", gen.sampler}, {"n", gen.n},       {"dim", gen.dim},        {"seed", gen.seed},
                        {"skip_first", gen.skip_first}, {"transform", gen.transform}, {"out", gen.out}};
      ctx.echo("lds gen", cfg);
      const auto sampler = lds::parse_sampler(gen.sampler);
      const auto ps = lds::generate(sampler, gen.n, gen.dim, gen.seed, gen.skip_first);
      if (gen.transform != "uniform" && gen.transform != "normal")
        throw InvalidArgument("--transform must be uniform or normal");
      detail::write_atomically(gen.out, [&](std::ostream& o) {
        char buf[40];
        if (gen.transform == "normal") {
          const auto z = transform::box_muller(ps);
          for (std::size_t i = 0; i < z.size(); ++i) {
            for (std::size_t d = 0; d < z.dim(); ++d) {
              std::snprintf(buf, sizeof buf, "%.17g", z(i, d));
              o << (d ? "," : "") << buf;
            }
            o << '\n';
          }
        } else {
          for (std::size_t i = 0; i < ps.size(); ++i) {
            for (std::size_t d = 0; d < ps.dim(); ++d) {
              std::snprintf(buf, sizeof buf, "%.17g", ps(i, d));
              o << (d ? "," : "") << buf;
            }
            o << '\n';
          }
        }
      });
      ctx.sidecar(gen.out, "lds gen", cfg);
    } else if (*disc_cmd) {
      ctx.echo("lds disc", {{"in", disc_in}});
      std::ifstream in(disc_in);
      if (!in) throw Error("cannot open " + disc_in);
      std::vector<std::vector<double>> rows;
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) {
          try {
            row.push_back(std::stod(cell));
          } catch (const std::exception&) {
            throw ParseError(disc_in + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
          }
        }
        rows.push_back(std::move(row));
      }
      const auto ps = lds::PointSet::from_rows(rows);
      const auto rep = lds::discrepancy_report(ps);
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", rep.star_discrepancy);
      out << "star_discrepancy=" << buf << '\n';
      out << "star_discrepancy_exact=" << (rep.exact ? "true" : "false") << '\n';
      std::snprintf(buf, sizeof buf, "%.17g", rep.min_pairwise_distance);
      out << "min_pairwise_distance=" << buf << '\n';
      out << "n_points=" << rep.n_points << '\n';
      out << "dimension=" << rep.dimension << '\n';
    } else if (*load_cmd) {
      const json cfg = {{"path", load.paths}, {"stride", load.stride}, {"source", load.source}, {"out", load.out}};
      ctx.echo("data load", cfg);
      std::vector<scene::Scene> scenes;
      for (const auto& path : load.paths) {
        const std::string tag = load.source.empty() ? std::filesystem::path(path).stem().string() : load.source;
        auto part = scene::extract_scenes(scene::load_ethucy(path), load.stride, tag);
        scenes.insert(scenes.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
      }
      detail::write_atomically(load.out, [&](std::ostream& o) { scene::save_scenes(scenes, o); });
      ctx.sidecar(load.out, "data load", cfg, {{"scenes", scenes.size()}});
      out << "scenes=" << scenes.size() << '\n';
    } else if (*synth_cmd) {
      scene::SynthSpec spec;
      spec.n_scenes = synth.scenes;
      spec.branch_probabilities = detail::parse_list<double>(synth.branches, "branch probability");
      spec.noise_sigma = synth.noise;
      spec.speed = synth.speed;
      spec.interaction = synth.interaction;
      spec.max_pedestrians = synth.max_peds;
      spec.seed = synth.seed;
      const json cfg = {{"scenes", spec.n_scenes},      {"branches", spec.branch_probabilities},
                        {"noise", spec.noise_sigma},    {"speed", spec.speed},
                        {"interaction", spec.interaction}, {"max_peds", spec.max_pedestrians},
                        {"seed", spec.seed},            {"out", synth.out}};
      ctx.echo("data synth", cfg);
      const auto scenes = scene::synth_generate(spec);
      detail::write_atomically(synth.out, [&](std::ostream& o) { scene::save_scenes(scenes, o); });
      ctx.sidecar(synth.out, "data synth", cfg);
    } else if (*export_cmd) {
      const json cfg = {{"scenes", exp.scenes}, {"csv", exp.csv}};
      ctx.echo("data export", cfg);
      const auto scenes = scene::load_scenes(exp.scenes);
      detail::write_atomically(exp.csv, [&](std::ostream& o) { scene::export_csv(scenes, o); });
      ctx.sidecar(exp.csv, "data export", cfg);
    } else if (*fit_cmd) {
      const json cfg = {{"scenes", fit.scenes}, {"out", fit.out}};
      ctx.echo("fit-head", cfg);
      const auto hyper = predictor::fit_head(scene::load_scenes(fit.scenes));
      detail::write_atomically(fit.out, [&](std::ostream& o) { predictor::save_head(hyper, o); });
      ctx.sidecar(fit.out, "fit-head", cfg);
    } else if (*train_cmd) {
      if (tr.log.empty()) tr.log = tr.out + ".log.csv";
      const auto& c = tr.cfg;
      const json cfg = {{"scenes", tr.scenes}, {"head", tr.head},       {"epochs", c.epochs},
                        {"batch", c.batch_scenes}, {"lr", c.lr},         {"lr_step", c.lr_step_epochs},
                        {"lr_gamma", c.lr_gamma}, {"lambda", c.lambda},  {"weight_decay", c.weight_decay},
                        {"samples", tr.samples}, {"hidden", tr.hidden},  {"seed", c.seed},
                        {"out", tr.out},         {"log", tr.log}};
      ctx.echo("train", cfg);
      const auto scenes = scene::load_scenes(tr.scenes);
      const auto hyper = predictor::load_head(tr.head);
      net::NpsnConfig ncfg;
      ncfg.samples = tr.samples;
      ncfg.hidden = tr.hidden;
      net::NpsnModel model(ncfg, derive_seed(c.seed, 0x1417));
      if (!ctx.quiet) err << "# parameters: " << model.parameter_count() << '\n';
      const auto result = train::train(model, hyper, scenes, c, [&](const train::EpochLog& e) {
        if (!ctx.quiet)
          err << "epoch " << e.epoch << " l_dist=" << e.l_dist << " l_disc=" << e.l_disc << " total=" << e.total
              << " lr=" << e.lr << '\n';
      });
      detail::write_atomically(tr.out, [&](std::ostream& o) { result.model.save(o); }, true);
      detail::write_atomically(tr.log, [&](std::ostream& o) {
        o << "epoch,l_dist,l_disc,total,lr\n";
        for (const auto& e : result.log)
          o << e.epoch << ',' << experiments::csv::num(e.l_dist) << ',' << experiments::csv::num(e.l_disc) << ','
            << experiments::csv::num(e.total) << ',' << experiments::csv::num(e.lr) << '\n';
      });
      ctx.sidecar(tr.log, "train", cfg, {{"parameters", model.parameter_count()}});
    } else if (*eval_cmd) {
      const json cfg = {{"scenes", ev.scenes}, {"head", ev.head}, {"sampler", ev.sampler}, {"n", ev.n},
                        {"repeats", ev.repeats}, {"seed", ev.seed}, {"out", ev.out}};
      ctx.echo("eval", cfg);
      const auto scenes = scene::load_scenes(ev.scenes);
      const auto hyper = predictor::load_head(ev.head);
      const auto sampler = detail::make_sampler(ev.sampler);
      const auto rep = metrics::evaluate(scenes, hyper, *sampler, ev.n, ev.repeats, ev.seed);
      detail::write_atomically(ev.out, [&](std::ostream& o) { experiments::csv::write_eval(o, {rep}); });
      ctx.sidecar(ev.out, "eval", cfg);
    } else if (*compare_cmd) {
      const json cfg = {{"scenes", cmp.scenes}, {"head", cmp.head}, {"npsn", cmp.npsn}, {"n", cmp.n},
                        {"repeats", cmp.repeats}, {"seed", cmp.seed}, {"out", cmp.out}};
      ctx.echo("compare", cfg);
      const auto scenes = scene::load_scenes(cmp.scenes);
      const auto hyper = predictor::load_head(cmp.head);
      std::shared_ptr<const net::NpsnModel> model;
      if (!cmp.npsn.empty()) model = std::make_shared<const net::NpsnModel>(net::NpsnModel::load(cmp.npsn));
      const auto rows = experiments::compare_samplers(scenes, hyper, model, cmp.n, cmp.repeats, cmp.seed);
      detail::write_atomically(cmp.out, [&](std::ostream& o) { experiments::csv::write_comparison(o, rows); });
      ctx.sidecar(cmp.out, "compare", cfg);
    } else if (*sweep_cmd) {
      const json cfg = {{"scenes", sw.scenes}, {"head", sw.head}, {"samplers", sw.samplers}, {"npsn", sw.npsn},
                        {"grid", sw.grid},     {"repeats", sw.repeats}, {"seed", sw.seed}, {"out", sw.out}};
      ctx.echo("sweep-n", cfg);
      const auto scenes = scene::load_scenes(sw.scenes);
      const auto hyper = predictor::load_head(sw.head);
      std::vector<std::shared_ptr<const metrics::LatentSampler>> samplers;
      for (const auto& name : detail::split_names(sw.samplers)) samplers.push_back(detail::make_sampler(name));
      std::vector<std::shared_ptr<const metrics::NpsnSampler>> models;
      for (const auto& path : sw.npsn) {
        auto model = std::make_shared<const net::NpsnModel>(net::NpsnModel::load(path));
        models.push_back(std::make_shared<metrics::NpsnSampler>(model));
      }
      const auto grid = detail::parse_list<std::size_t>(sw.grid, "grid");
      const auto rows = experiments::n_sweep(scenes, hyper, samplers, models, grid, sw.repeats, sw.seed);
      detail::write_atomically(sw.out, [&](std::ostream& o) { experiments::csv::write_eval(o, rows); });
      ctx.sidecar(sw.out, "sweep-n", cfg);
    } else if (*bias_run) {
      json cfg = {{"experiment", bias.experiment}, {"seed", bias.seed}, {"out", bias.out}};
      if (bias.experiment == "taylor") {
        const std::string samplers = bias.samplers.empty() ? "mc" : bias.samplers;
        const std::string integrand = bias.integrand.empty() ? "x1" : bias.integrand;
        const std::size_t dim = bias.dim == 0 ? 1 : bias.dim;
        const std::size_t trials = bias.trials == 0 ? 10000 : bias.trials;
        cfg.update({{"samplers", samplers}, {"integrand", integrand}, {"functional", bias.functional},
                    {"dim", dim}, {"n", bias.n}, {"trials", trials}});
        ctx.echo("bias run", cfg);
        const auto tau = biaslab::integrands::by_name(integrand, dim);
        const auto F = biaslab::functionals::by_name(bias.functional);
        std::vector<std::pair<std::string, biaslab::BiasResult>> rows;
        for (const auto& name : detail::split_names(samplers))
          rows.emplace_back(name, biaslab::bias_experiment(tau, F, bias.n, trials, lds::parse_sampler(name), bias.seed));
        detail::write_atomically(bias.out, [&](std::ostream& o) {
          bool header = true;
          for (const auto& [name, r] : rows) {
            std::ostringstream block;
            experiments::csv::write_bias(block, name, integrand, bias.functional, {r});
            std::string text = block.str();
            if (!header) text = text.substr(text.find('\n') + 1);
            header = false;
            o << text;
          }
        });
        ctx.sidecar(bias.out, "bias run", cfg);
      } else if (bias.experiment == "convergence") {
        const std::string samplers = bias.samplers.empty() ? "mc,ssobol,sobol,halton" : bias.samplers;
        const std::string integrand = bias.integrand.empty() ? "product" : bias.integrand;
        const std::size_t dim = bias.dim == 0 ? 2 : bias.dim;
        const std::size_t trials = bias.trials == 0 ? 200 : bias.trials;
        const std::string grid = bias.grid.empty() ? "16,32,64,128,256,512,1024,2048,4096" : bias.grid;
        cfg.update({{"samplers", samplers}, {"integrand", integrand}, {"dim", dim}, {"trials", trials},
                    {"grid", grid}, {"disc_trials", bias.disc_trials}});
        ctx.echo("bias run", cfg);
        std::vector<lds::Sampler> list;
        for (const auto& name : detail::split_names(samplers)) list.push_back(lds::parse_sampler(name));
        const auto table = biaslab::convergence_study(biaslab::integrands::by_name(integrand, dim), list,
                                                      detail::parse_list<std::size_t>(grid, "grid"), trials,
                                                      bias.seed, bias.disc_trials);
        detail::write_atomically(bias.out, [&](std::ostream& o) { experiments::csv::write_convergence(o, table); });
        json slopes = json::object();
        for (const auto& [name, slope] : table.slopes) {
          slopes[name] = slope;
          out << "slope[" << name << "]=" << slope << '\n';
        }
        ctx.sidecar(bias.out, "bias run", cfg, {{"slopes", slopes}});
      } else if (bias.experiment == "bestofn") {
        const std::string samplers = bias.samplers.empty() ? "mc,ssobol" : bias.samplers;
        const std::size_t trials = bias.trials == 0 ? 100 : bias.trials;
        const std::string grid = bias.grid.empty() ? "1,2,4,8,16,20,32,64,128,256,512,1024" : bias.grid;
        cfg.update({{"samplers", samplers}, {"trials", trials}, {"grid", grid}, {"scenes", bias.scenes},
                    {"head", bias.head}, {"max_peds", bias.max_peds}});
        ctx.echo("bias run", cfg);
        std::vector<scene::Scene> scenes;
        if (bias.scenes.empty()) {
          scene::SynthSpec spec;
          spec.n_scenes = 500;
          spec.seed = bias.seed;
          scenes = scene::synth_generate(spec);
        } else {
          scenes = scene::load_scenes(bias.scenes);
        }
        const auto hyper = bias.head.empty() ? predictor::fit_head(scenes) : predictor::load_head(bias.head);
        std::vector<lds::Sampler> list;
        for (const auto& name : detail::split_names(samplers)) list.push_back(lds::parse_sampler(name));
        const auto rows = biaslab::best_of_n_study(scenes, hyper, list, detail::parse_list<std::size_t>(grid, "grid"),
                                                   trials, bias.seed, bias.max_peds);
        detail::write_atomically(bias.out, [&](std::ostream& o) { experiments::csv::write_best_of_n(o, rows); });
        ctx.sidecar(bias.out, "bias run", cfg);
      } else {
        throw InvalidArgument("unknown experiment '" + bias.experiment + "' (expected taylor|convergence|bestofn)");
      }
    } else if (*rerun_cmd) {
      std::ifstream in(rr.sidecar);
      if (!in) throw Error("cannot open " + rr.sidecar);
      json side;
      try {
        side = json::parse(in);
      } catch (const json::exception& e) {
        throw ParseError(rr.sidecar + ": " + e.what());
      }
      if (side.value("version", 0) != kSidecarVersion) throw ParseError(rr.sidecar + ": unsupported sidecar version");
      auto replay = side.at("args").get<std::vector<std::string>>();
      if (!rr.out.empty()) {
        // The recorded output path follows --out (or --csv/--log for the commands that use those).
        const std::string recorded = side.at("output").get<std::string>();
        bool replaced = false;
        for (auto& a : replay)
          if (a == recorded) {
            a = rr.out;
            replaced = true;
          }
        if (!replaced) throw Error(rr.sidecar + ": recorded output path not found in arguments");
      }
      if (ctx.quiet) replay.insert(replay.begin(), "--quiet");
      return run(replay, out, err);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace npsn::cli
