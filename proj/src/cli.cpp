#include "choiceset/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>

#include <CLI11.hpp>

#include "choiceset/demand.hpp"
#include "choiceset/errors.hpp"
#include "choiceset/estimator.hpp"
#include "choiceset/ingest.hpp"
#include "choiceset/io.hpp"
#include "choiceset/model.hpp"
#include "choiceset/montecarlo.hpp"
#include "choiceset/spectral.hpp"

#ifndef CHOICESET_GIT_DESCRIBE
#define CHOICESET_GIT_DESCRIBE "unknown"
#endif

namespace choiceset {

namespace fs = std::filesystem;

std::string build_version() { return CHOICESET_GIT_DESCRIBE; }

namespace {

/// Bad flags, config fields or input files; maps to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class F>
auto as_usage(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

/// Ties a config key to a flag. Config values apply only where the flag was
/// not given, so flags win.
class Binder {
 public:
  explicit Binder(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* option(const std::string& flag, const std::string& key, T& var, const std::string& desc) {
    CLI::Option* opt = app_->add_option(flag, var, desc);
    add(key, opt, [&var](const Json& j) { var = j.get<T>(); }, [&var]() { return Json(var); });
    return opt;
  }

  CLI::Option* flag(const std::string& flag, const std::string& key, bool& var, const std::string& desc) {
    CLI::Option* opt = app_->add_flag(flag, var, desc);
    add(key, opt,
        [&var, key](const Json& j) {
          if (!j.is_boolean()) throw UsageError("config field '" + key + "': expected true or false");
          var = j.get<bool>();
        },
        [&var]() { return Json(var); });
    return opt;
  }

  /// Key handled by a custom setter (inline objects, nested blocks).
  void custom(const std::string& key, CLI::Option* opt, std::function<void(const Json&)> set,
              std::function<Json()> get) {
    add(key, opt, std::move(set), std::move(get));
  }

  void apply(const Json& cfg) const {
    if (cfg.is_null()) return;
    if (!cfg.is_object()) throw UsageError("config: expected a JSON object");
    for (const auto& item : cfg.items()) {
      const Entry* e = find(item.key());
      if (!e) throw UsageError("config: unknown field '" + item.key() + "'");
      if (e->opt && e->opt->count() > 0) continue;
      try {
        e->set(item.value());
      } catch (const UsageError&) {
        throw;
      } catch (const std::exception& ex) {
        throw UsageError("config field '" + item.key() + "': " + ex.what());
      }
    }
  }

  Json effective() const {
    Json out = Json::object();
    for (const auto& e : entries_) out[e.key] = e.get();
    return out;
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* opt;
    std::function<void(const Json&)> set;
    std::function<Json()> get;
  };

  void add(const std::string& key, CLI::Option* opt, std::function<void(const Json&)> set,
           std::function<Json()> get) {
    entries_.push_back({key, opt, std::move(set), std::move(get)});
  }

  const Entry* find(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.key == key) return &e;
    return nullptr;
  }

  CLI::App* app_;
  std::vector<Entry> entries_;
};

/// Destination of a command's results. Empty: stdout. A path ending in .json
/// or .csv: that single file. Anything else: a directory with report.json,
/// tables/*.csv and log.txt.
class Output {
 public:
  Output(std::string path, std::ostream& out) : path_(std::move(path)), out_(out) {}

  bool to_stdout() const { return path_.empty(); }
  bool single_file() const {
    const auto ext = fs::path(path_).extension().string();
    return !path_.empty() && (ext == ".json" || ext == ".csv");
  }
  bool directory() const { return !to_stdout() && !single_file(); }

  void prepare() const {
    if (directory()) {
      fs::create_directories(fs::path(path_) / "tables");
    } else if (single_file()) {
      const auto parent = fs::path(path_).parent_path();
      if (!parent.empty()) fs::create_directories(parent);
    }
  }

  /// The primary artifact: JSON report or CSV text.
  void primary(const std::string& content, const std::string& dir_name) const {
    if (to_stdout()) {
      out_ << content;
      return;
    }
    write(single_file() ? fs::path(path_) : fs::path(path_) / dir_name, content);
  }

  void table(const std::string& name, const std::string& csv) const {
    if (directory()) write(fs::path(path_) / "tables" / (name + ".csv"), csv);
  }

  void log(const std::string& text) const {
    if (directory()) write(fs::path(path_) / "log.txt", text);
  }

 private:
  static void write(const fs::path& p, const std::string& content) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw UsageError("cannot write " + p.string());
    f << content;
  }

  std::string path_;
  std::ostream& out_;
};

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

std::string log_text(int argc, const char* const* argv, const Json& effective, const std::string& extra = {}) {
  std::ostringstream ss;
  ss << "version: " << build_version() << '\n' << "command:";
  for (int i = 0; i < argc; ++i) ss << ' ' << argv[i];
  ss << "\nconfig:\n" << effective.dump(2) << '\n' << extra;
  return ss.str();
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

DGPSpec load_dgp(const std::string& source, const Json& inline_spec) {
  return as_usage([&] {
    if (!inline_spec.is_null()) return dgp_from_json(inline_spec);
    if (source == "dgp1") return dgp1();
    if (source == "dgp2") return dgp2();
    if (source.empty()) throw UsageError("--dgp is required");
    return dgp_from_json(read_json_file(source));
  });
}

MixtureModel load_model(const std::string& source, const Json& inline_spec, int num_periods) {
  return as_usage([&] {
    if (!inline_spec.is_null()) return model_from_json(inline_spec, num_periods);
    if (source == "dgp1") return MixtureModel::from_dgp(dgp1(), num_periods);
    if (source == "dgp2") return MixtureModel::from_dgp(dgp2(), num_periods);
    if (source.empty()) throw UsageError("--model is required");
    return model_from_json(read_json_file(source), num_periods);
  });
}

PanelDataset load_panel(const std::string& path) {
  return as_usage([&] {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open " + path);
    return parse_panel_csv(in);
  });
}

std::string menu_csv_label(const ChoiceSetMask& menu) {
  std::string s;
  for (int a : menu.alternatives()) s += (s.empty() ? "" : " ") + std::to_string(a);
  return s;
}

// Fit flags shared by estimate and mc. Each overrides the "fit" block.
struct FitFlags {
  double eps = 0.0;
  int starts = 0;
  int max_iter = 0;
  double tol = 0.0;
  std::string objective;
  bool tie = false;
  std::string mio;
  std::string trim;
  Json fit_block;
  CLI::Option* o_eps = nullptr;
  CLI::Option* o_starts = nullptr;
  CLI::Option* o_max_iter = nullptr;
  CLI::Option* o_tol = nullptr;
  CLI::Option* o_objective = nullptr;
  CLI::Option* o_tie = nullptr;
  CLI::Option* o_mio = nullptr;
  CLI::Option* o_trim = nullptr;

  void bind(CLI::App* app, Binder& b) {
    o_eps = app->add_option("--eps", eps, "Trimming threshold eps in (0, 1/Y)");
    o_starts = app->add_option("--starts", starts, "Random starts of the Step-1 fit")->check(CLI::PositiveNumber);
    o_max_iter = app->add_option("--max-iter", max_iter, "Iteration cap of each fit")->check(CLI::PositiveNumber);
    o_tol = app->add_option("--tol", tol, "Relative improvement that stops a fit");
    o_objective = app->add_option("--objective", objective, "Fit objective")->check(CLI::IsMember({"euclidean", "kl"}));
    o_tie = app->add_flag("--tie", tie, "Share F across periods when the grouping allows it");
    o_mio = app->add_option("--mio", mio, "Best-subset method")->check(CLI::IsMember({"auto", "exhaustive", "branch_and_bound"}));
    o_trim = app->add_option("--trim", trim, "Trimming rule")->check(CLI::IsMember({"fixed", "vanishing"}));
    b.custom("fit", nullptr, [this](const Json& j) { fit_block = j; }, [this]() { return fit_block; });
  }

  FitConfig resolve() const {
    FitConfig cfg = fit_block.is_null() ? FitConfig{} : as_usage([&] { return fit_config_from_json(fit_block); });
    if (o_eps->count()) cfg.eps = eps;
    if (o_starts->count()) cfg.starts = starts;
    if (o_max_iter->count()) cfg.max_iter = max_iter;
    if (o_tol->count()) cfg.tol = tol;
    if (o_objective->count()) cfg.objective = objective == "kl" ? Objective::kullback_leibler : Objective::euclidean;
    if (o_tie->count()) cfg.tie_F_across_t = tie;
    if (o_mio->count())
      cfg.mio.method = mio == "exhaustive"         ? MioMethod::exhaustive
                       : mio == "branch_and_bound" ? MioMethod::branch_and_bound
                                                   : MioMethod::automatic;
    if (o_trim->count()) cfg.trim_mode = trim == "vanishing" ? TrimMode::vanishing : TrimMode::fixed;
    return cfg;
  }
};

Json read_config(const std::string& path) {
  if (path.empty()) return Json();
  return as_usage([&] { return read_json_file(path); });
}

// ---------------------------------------------------------------- simulate

struct SimulateCmd {
  std::string config, dgp, cell = "0", out;
  Json dgp_inline;
  int n = 0;
  int T = 3;
  std::uint64_t seed = 1;
  CLI::App* app = nullptr;
  Binder* binder = nullptr;

  void setup(CLI::App& root, std::vector<std::unique_ptr<Binder>>& binders) {
    app = root.add_subcommand("simulate", "Sample a panel CSV from a design");
    binders.push_back(std::make_unique<Binder>(app));
    Binder& b = *binders.back();
    binder = &b;
    app->add_option("--config", config, "JSON config; flags override its fields");
    auto* o = app->add_option("--dgp", dgp, "Design JSON path, or dgp1 / dgp2");
    b.custom("dgp", o,
             [this](const Json& j) {
               if (j.is_string()) dgp = j.get<std::string>();
               else dgp_inline = j;
             },
             [this]() { return dgp_inline.is_null() ? Json(dgp) : dgp_inline; });
    b.option("--n", "n", n, "Number of units")->check(CLI::PositiveNumber);
    b.option("--T", "T", T, "Number of periods")->check(CLI::PositiveNumber);
    b.option("--seed", "seed", seed, "Sampling seed");
    b.option("--cell", "cell", cell, "Cell id written to every record");
    b.option("--out", "out", out, "Output CSV file or directory (stdout when omitted)");
  }

  int run(int argc, const char* const* argv, std::ostream& os) {
    binder->apply(read_config(config));
    if (n < 1) throw UsageError("--n is required and must be positive");
    const MixtureModel model = load_model(dgp, dgp_inline, T);
    const Output output(out, os);
    as_usage([&] { output.prepare(); });
    const PanelDataset data = sample_panel(model, n, seed, cell);
    std::ostringstream csv;
    write_panel_csv(csv, data);
    output.primary(csv.str(), "panel.csv");
    output.log(log_text(argc, argv, binder->effective()));
    return kExitOk;
  }
};

// ---------------------------------------------------------------- identify

struct IdentifyCmd {
  std::string config, panel, model, out;
  Json model_inline;
  std::vector<std::string> cells;
  int T = 3;
  int d = 0;
  double tau = kDefaultRankTau;
  std::uint64_t seed = 0x5eed;
  CLI::App* app = nullptr;
  Binder* binder = nullptr;

  void setup(CLI::App& root, std::vector<std::unique_ptr<Binder>>& binders) {
    app = root.add_subcommand("identify", "Spectral identification on a sample or population tensor");
    binders.push_back(std::make_unique<Binder>(app));
    Binder& b = *binders.back();
    binder = &b;
    app->add_option("--config", config, "JSON config; flags override its fields");
    b.option("--panel", "panel", panel, "Panel CSV (unit_id,cell_id,t,choice)");
    auto* o = app->add_option("--model", model, "Model or design JSON for the population tensor, or dgp1 / dgp2");
    b.custom("model", o,
             [this](const Json& j) {
               if (j.is_string()) model = j.get<std::string>();
               else model_inline = j;
             },
             [this]() { return model_inline.is_null() ? Json(model) : model_inline; });
    b.option("--cell", "cells", cells, "Cells to analyse (all when omitted)");
    b.option("--T", "T", T, "Periods of the population tensor")->check(CLI::PositiveNumber);
    b.option("--d", "d", d, "Number of menus (estimated when omitted)");
    b.option("--tau", "tau", tau, "Relative singular-value cutoff of the rank estimate");
    b.option("--seed", "seed", seed, "Seed of the random slice combination");
    b.option("--out", "out", out, "Output JSON file or directory (stdout when omitted)");
  }

  int run(int argc, const char* const* argv, std::ostream& os) {
    binder->apply(read_config(config));
    if (panel.empty() == (model.empty() && model_inline.is_null()))
      throw UsageError("exactly one of --panel and --model is required");
    std::vector<std::pair<std::string, JointChoiceTensor>> tensors;
    as_usage([&] {
      if (!panel.empty()) {
        const auto data = load_panel(panel);
        const auto grouping = PeriodGrouping::standard(data.num_periods());
        for (const auto& c : cells.empty() ? data.cells() : cells)
          tensors.emplace_back(c, empirical_tensor(data, c, grouping));
      } else {
        const auto m = load_model(model, model_inline, T);
        tensors.emplace_back("population", build_population_tensor(m, PeriodGrouping::standard(m.num_periods())));
      }
    });
    const Output output(out, os);
    as_usage([&] { output.prepare(); });
    SpectralOptions opts;
    opts.seed = seed;
    Json report = {{"cells", Json::array()}};
    std::string menus_csv = "cell,menu,m\n";
    bool failed = false;
    for (const auto& [cell, tensor] : tensors) {
      Json entry = {{"cell", cell}};
      try {
        const auto rank = estimate_rank(tensor, tau);
        entry["rank"] = to_json(rank);
        auto est = spectral_identify(tensor, d > 0 ? d : rank.d_hat, opts);
        est.sort_menus();
        entry["estimate"] = to_json(est);
        for (int j = 0; j < est.num_menus(); ++j)
          menus_csv += cell + "," + menu_csv_label(est.menus[j]) + "," + fmt("%.3f", est.m(j)) + "\n";
      } catch (const std::exception& e) {
        entry["error"] = e.what();
        failed = true;
      }
      report["cells"].push_back(std::move(entry));
    }
    output.primary(dump(report), "report.json");
    output.table("menus", menus_csv);
    output.log(log_text(argc, argv, binder->effective()));
    return failed ? kExitNumerical : kExitOk;
  }
};

// ---------------------------------------------------------------- estimate

struct EstimateCmd {
  std::string config, panel, model, out;
  Json model_inline;
  std::vector<std::string> cells;
  int T = 3;
  int d = 0;
  std::uint64_t seed = 1;
  FitFlags fit;
  CLI::Option* o_seed = nullptr;
  CLI::App* app = nullptr;
  Binder* binder = nullptr;

  void setup(CLI::App& root, std::vector<std::unique_ptr<Binder>>& binders) {
    app = root.add_subcommand("estimate", "Step-1 and Step-2 estimation per cell");
    binders.push_back(std::make_unique<Binder>(app));
    Binder& b = *binders.back();
    binder = &b;
    app->add_option("--config", config, "JSON config; flags override its fields");
    b.option("--panel", "panel", panel, "Panel CSV (unit_id,cell_id,t,choice)");
    auto* o = app->add_option("--model", model, "Model or design JSON for the population tensor, or dgp1 / dgp2");
    b.custom("model", o,
             [this](const Json& j) {
               if (j.is_string()) model = j.get<std::string>();
               else model_inline = j;
             },
             [this]() { return model_inline.is_null() ? Json(model) : model_inline; });
    b.option("--cell", "cells", cells, "Cells to estimate (all when omitted)");
    b.option("--T", "T", T, "Periods of the population tensor")->check(CLI::PositiveNumber);
    b.option("--d", "d", d, "Number of menus (estimated when omitted)");
    o_seed = app->add_option("--seed", seed, "Seed of the random starts");
    fit.bind(app, b);
    b.option("--out", "out", out, "Output JSON file or directory (stdout when omitted)");
  }

  int run(int argc, const char* const* argv, std::ostream& os) {
    binder->apply(read_config(config));
    if (panel.empty() == (model.empty() && model_inline.is_null()))
      throw UsageError("exactly one of --panel and --model is required");
    FitConfig cfg = fit.resolve();
    if (o_seed->count()) cfg.seed = seed;
    struct Cell {
      std::string id;
      int units;
      JointChoiceTensor tensor;
    };
    std::vector<Cell> work;
    as_usage([&] {
      if (!panel.empty()) {
        const auto data = load_panel(panel);
        const auto grouping = PeriodGrouping::standard(data.num_periods());
        for (const auto& c : cells.empty() ? data.cells() : cells) {
          const auto t = empirical_tensor(data, c, grouping);
          int units = 0;
          for (const auto& r : data.records()) units += r.cell_id == c ? 1 : 0;
          work.push_back({c, units, t});
        }
      } else {
        const auto m = load_model(model, model_inline, T);
        work.push_back({"population", 0, build_population_tensor(m, PeriodGrouping::standard(m.num_periods()))});
      }
      for (const auto& w : work) cfg.validate(w.tensor.num_alternatives());
    });
    const Output output(out, os);
    as_usage([&] { output.prepare(); });

    Json report = {{"cells", Json::array()}};
    std::string menus_csv = "cell,estimator,menu,m\n";
    std::string f_csv = "cell,period,menu,alternative,F\n";
    std::vector<MixtureEstimate> finals;
    bool failed = false;
    for (const auto& w : work) {
      Json entry = {{"cell", w.id}, {"units", w.units}};
      try {
        FitConfig c = cfg;
        if (c.sample_size == 0) c.sample_size = w.units;
        auto res = estimate_pipeline(w.tensor, c, d > 0 ? std::optional<int>(d) : std::nullopt);
        res.step1_estimate.sort_menus();
        res.final_estimate.sort_menus();
        entry["rank"] = to_json(res.rank);
        entry["d_hat"] = res.d_hat;
        entry["step1_warning"] = res.step1.warning;
        entry["subset"] = {{"objective", res.subset.objective},
                           {"optimal", res.subset.optimal},
                           {"nodes", res.subset.nodes},
                           {"dictionary_size", res.subset.dictionary.size()}};
        entry["step1"] = to_json(res.step1_estimate);
        entry["estimate"] = to_json(res.final_estimate);
        for (const auto* e : {&res.step1_estimate, &res.final_estimate}) {
          const char* name = e == &res.step1_estimate ? "Step-1" : "Step-2";
          for (int j = 0; j < e->num_menus(); ++j)
            menus_csv += w.id + "," + name + "," + menu_csv_label(e->menus[j]) + "," + fmt("%.3f", e->m(j)) + "\n";
        }
        const auto& e = res.final_estimate;
        for (std::size_t t = 0; t < e.F.size(); ++t)
          for (int j = 0; j < e.num_menus(); ++j)
            for (int y : e.menus[j].alternatives())
              f_csv += w.id + "," + std::to_string(e.periods[t]) + "," + menu_csv_label(e.menus[j]) + "," +
                       std::to_string(y) + "," + fmt("%.3f", e.F[t](y - 1, j)) + "\n";
        finals.push_back(res.final_estimate);
      } catch (const std::exception& e) {
        entry["error"] = e.what();
        failed = true;
      }
      report["cells"].push_back(std::move(entry));
    }
    if (!finals.empty()) {
      const auto pool = pool_supports(finals);
      Json menus = Json::array();
      for (const auto& m : pool.menus) menus.push_back(m.alternatives());
      report["pooled_support"] = {{"menus", menus}, {"full_variation", pool.full_variation}};
    }
    report["fit"] = to_json(cfg);

    // A single-cell run written to a .json file is the estimate itself.
    if (output.single_file() && work.size() == 1 && !failed)
      output.primary(dump(to_json(finals.front())), "report.json");
    else
      output.primary(dump(report), "report.json");
    output.table("menus", menus_csv);
    output.table("F", f_csv);
    output.log(log_text(argc, argv, binder->effective()));
    return failed ? kExitNumerical : kExitOk;
  }
};

// ---------------------------------------------------------------------- mc

struct McCmd {
  std::string config, dgp, name, out;
  Json dgp_inline;
  std::vector<long long> n_list{2000, 10000, 50000};
  std::vector<std::string> tables;
  int reps = 200;
  int jobs = 1;
  int d = 0;
  double tau = 1e-10;
  bool untied = false;
  std::uint64_t seed = 1;
  FitFlags fit;
  CLI::App* app = nullptr;
  Binder* binder = nullptr;

  void setup(CLI::App& root, std::vector<std::unique_ptr<Binder>>& binders) {
    app = root.add_subcommand("mc", "Monte Carlo experiment over sample sizes");
    binders.push_back(std::make_unique<Binder>(app));
    Binder& b = *binders.back();
    binder = &b;
    app->add_option("--config", config, "JSON config; flags override its fields");
    auto* o = app->add_option("--dgp", dgp, "Design JSON path, or dgp1 / dgp2");
    b.custom("dgp", o,
             [this](const Json& j) {
               if (j.is_string()) dgp = j.get<std::string>();
               else dgp_inline = j;
             },
             [this]() { return dgp_inline.is_null() ? Json(dgp) : dgp_inline; });
    b.option("--name", "name", name, "Design label in the tables (default from --dgp)");
    b.option("--n", "n", n_list, "Sample sizes");
    b.option("--reps", "reps", reps, "Replications per sample size")->check(CLI::PositiveNumber);
    b.option("--seed", "seed", seed, "Master seed");
    b.option("--jobs", "jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    b.option("--table", "tables", tables, "Tables to print: 1, 2, bias_m, rmse_m, bias_F, rmse_F (default all)");
    b.option("--d", "d", d, "Fix the number of menus instead of estimating it");
    b.option("--tau", "tau", tau, "Relative singular-value cutoff of the rank estimate");
    b.flag("--untied", "untied", untied, "Estimate F per period even when the design ties it");
    fit.bind(app, b);
    b.option("--out", "out", out, "Output JSON file or directory (tables on stdout when omitted)");
  }

  int run(int argc, const char* const* argv, std::ostream& os) {
    binder->apply(read_config(config));
    const DGPSpec spec = load_dgp(dgp, dgp_inline);
    const FitConfig cfg = fit.resolve();
    std::vector<MCTable> selected;
    as_usage([&] {
      if (tables.empty())
        selected = {MCTable::percent_correct, MCTable::average_correct, MCTable::bias_m,
                    MCTable::rmse_m,          MCTable::bias_F,          MCTable::rmse_F};
      for (const auto& t : tables) selected.push_back(parse_mc_table(t));
      cfg.validate(static_cast<int>(spec.choice_given_menu.rows()));
      for (long long n : n_list)
        if (n < 1) throw UsageError("--n: sample sizes must be positive");
      if (!(tau > 0.0 && tau < 1.0)) throw UsageError("--tau must lie in (0, 1)");
    });
    std::string label = name;
    if (label.empty()) label = dgp == "dgp1" ? "DGP1" : dgp == "dgp2" ? "DGP2" : dgp.empty() ? "custom" : fs::path(dgp).stem().string();
    const Output output(out, os);
    as_usage([&] { output.prepare(); });

    MCOptions opts;
    opts.jobs = jobs;
    opts.tie_from_dgp = !untied;
    opts.rank_tau = tau;
    if (d > 0) opts.fixed_d_hat = d;
    const MCReport report = run_mc(spec, label, n_list, reps, cfg, seed, opts);

    Json j = to_json(report);
    j["fit"] = to_json(cfg);
    j["options"] = {{"tie_from_dgp", opts.tie_from_dgp}, {"rank_tau", opts.rank_tau}, {"fixed_d_hat", d > 0 ? Json(d) : Json()}};
    if (output.to_stdout()) {
      for (std::size_t i = 0; i < selected.size(); ++i)
        os << (i ? "\n" : "") << mc_table_csv(report, selected[i]);
    } else {
      output.primary(dump(j), "report.json");
      for (auto t : selected) output.table(mc_table_name(t), mc_table_csv(report, t));
    }
    std::ostringstream timing;
    timing << "total_seconds: " << report.total_seconds << '\n';
    for (const auto& c : report.cells)
      timing << "n " << c.n << ": mean_seconds " << c.mean_seconds << ", max_seconds " << c.max_seconds
             << ", failures " << c.failures << '\n';
    output.log(log_text(argc, argv, binder->effective(), timing.str()));
    return kExitOk;
  }
};

// ------------------------------------------------------------------ demand

struct DemandCmd {
  std::string config, shares, prices, demographics, instruments, weights, market, out;
  std::vector<std::string> menus;
  int base = 0;
  int period = 1;
  bool heteroskedastic = false;
  CLI::App* app = nullptr;
  Binder* binder = nullptr;

  void setup(CLI::App& root, std::vector<std::unique_ptr<Binder>>& binders) {
    app = root.add_subcommand("demand", "Menu-specific logit GMM and own-price elasticities");
    binders.push_back(std::make_unique<Binder>(app));
    Binder& b = *binders.back();
    binder = &b;
    app->add_option("--config", config, "JSON config; flags override its fields");
    b.option("--shares", "shares", shares, "CSV market,period,menu,alternative,share");
    b.option("--prices", "prices", prices, "CSV market,alternative,price");
    b.option("--demographics", "demographics", demographics, "CSV market,<name>...");
    b.option("--instruments", "instruments", instruments, "CSV market,alternative,<name>...");
    b.option("--weights", "weights", weights, "CSV market,menu,weight; enables naive and mixture elasticities");
    b.option("--base", "base", base, "Base alternative of the log-ratio equations");
    b.option("--menu", "menus", menus, "Menus to estimate as space-separated alternatives (all when omitted)");
    b.option("--market", "market", market, "Market of the elasticity table (first when omitted)");
    b.option("--period", "period", period, "Period of the elasticity table")->check(CLI::PositiveNumber);
    b.flag("--heteroskedastic", "heteroskedastic", heteroskedastic,
           "Row-level moment covariance instead of clustering by market");
    b.option("--out", "out", out, "Output JSON file or directory (stdout when omitted)");
  }

  static Json gmm_json(const GmmResult& r) {
    Json coef = Json::object();
    for (std::size_t i = 0; i < r.names.size(); ++i)
      coef[r.names[i]] = {{"estimate", r.coef(static_cast<Eigen::Index>(i))}, {"se", r.se(static_cast<Eigen::Index>(i))}};
    return {{"beta", r.beta},
            {"beta_se", r.beta_se},
            {"coefficients", coef},
            {"J", r.J},
            {"J_df", r.J_df},
            {"observations", r.num_obs},
            {"clusters", r.num_clusters},
            {"ridge_applied", r.ridge_applied},
            {"shares_treated_as_exact", r.shares_treated_as_exact}};
  }

  int run(int argc, const char* const* argv, std::ostream& os) {
    binder->apply(read_config(config));
    if (shares.empty() || prices.empty()) throw UsageError("--shares and --prices are required");
    if (base < 1) throw UsageError("--base is required");
    const DemandPanel panel = as_usage([&] { return read_demand_panel({shares, prices, demographics, instruments}); });
    if (base > panel.num_alternatives) throw UsageError("--base: alternative out of range");
    std::vector<ChoiceSetMask> chosen;
    as_usage([&] {
      for (const auto& m : menus) {
        std::istringstream ss(m);
        std::vector<int> alts;
        for (int a; ss >> a;) alts.push_back(a);
        if (alts.empty() || !ss.eof()) throw UsageError("--menu: expected space-separated alternatives, got '" + m + "'");
        const auto mask = ChoiceSetMask::from_alternatives(alts, panel.num_alternatives);
        if (panel.menu_index(mask) < 0) throw UsageError("--menu: " + mask.to_string() + " has no shares");
        chosen.push_back(mask);
      }
      if (chosen.empty()) chosen = panel.menus;
    });
    Eigen::MatrixXd W;
    int market_index = 0;
    if (!weights.empty()) {
      W = as_usage([&] { return read_menu_weights(weights, panel); });
      if (!market.empty()) {
        const auto it = std::find(panel.markets.begin(), panel.markets.end(), market);
        if (it == panel.markets.end()) throw UsageError("--market: unknown market '" + market + "'");
        market_index = static_cast<int>(it - panel.markets.begin());
      }
      if (period > panel.num_periods) throw UsageError("--period: out of range");
    }
    const Output output(out, os);
    as_usage([&] { output.prepare(); });

    GmmOptions opts;
    opts.cluster_by_market = !heteroskedastic;
    Json report = {{"base", base}, {"menus", Json::array()}};
    std::string betas_csv = "estimator,beta,se,J,J_df\n";
    std::vector<double> betas(panel.menus.size(), std::numeric_limits<double>::quiet_NaN());
    for (const auto& menu : chosen) {
      const auto data = build_log_ratio_panel(panel, menu, base);
      const auto r = gmm_beta(data, opts);
      betas[panel.menu_index(menu)] = r.beta;
      Json entry = gmm_json(r);
      entry["menu"] = menu.alternatives();
      entry["dropped_rows"] = data.dropped;
      report["menus"].push_back(std::move(entry));
      betas_csv += menu.to_string() + "," + fmt("%.2f", r.beta) + "," + fmt("%.2f", r.beta_se) + "," + fmt("%.3f", r.J) +
                   "," + std::to_string(r.J_df) + "\n";
    }
    if (W.size() > 0) {
      const auto agg = aggregate_panel(panel, W);
      const auto data = build_log_ratio_panel(agg, agg.menus[0], base);
      const auto naive = gmm_beta(data, opts);
      report["naive"] = gmm_json(naive);
      betas_csv = betas_csv.substr(0, betas_csv.find('\n') + 1) + "Naive," + fmt("%.2f", naive.beta) + "," +
                  fmt("%.2f", naive.beta_se) + "," + fmt("%.3f", naive.J) + "," + std::to_string(naive.J_df) + "\n" +
                  betas_csv.substr(betas_csv.find('\n') + 1);
      if (chosen.size() == panel.menus.size()) {
        const auto table = elasticity_table(panel, W, betas, naive.beta, market_index, period - 1);
        Json rows = Json::array();
        std::string csv = "alternative,naive,mixture";
        for (const auto& m : panel.menus) csv += "," + m.to_string();
        csv += "\n";
        for (const auto& row : table) {
          rows.push_back({{"alternative", row.alternative},
                          {"naive", row.naive},
                          {"mixture", std::isnan(row.mixture) ? Json() : Json(row.mixture)},
                          {"by_menu", row.by_menu}});
          csv += std::to_string(row.alternative) + "," + fmt("%.2f", row.naive) + "," +
                 (std::isnan(row.mixture) ? std::string("n/a") : fmt("%.2f", row.mixture));
          for (double e : row.by_menu) csv += "," + fmt("%.2f", e);
          csv += "\n";
        }
        report["elasticities"] = {{"market", panel.markets[market_index]}, {"period", period}, {"rows", rows}};
        output.table("elasticities", csv);
      } else {
        report["elasticities"] = "skipped: every menu of the panel needs a beta";
      }
    }
    report["shares_treated_as_exact"] = true;
    output.primary(dump(report), "report.json");
    output.table("betas", betas_csv);
    output.log(log_text(argc, argv, binder->effective()));
    return kExitOk;
  }
};

// ------------------------------------------------------------------- check

struct CheckCmd {
  std::string config, model, out;
  Json model_inline;
  int K = 1;
  int T = 0;
  double eps = 0.01;
  CLI::App* app = nullptr;
  Binder* binder = nullptr;

  void setup(CLI::App& root, std::vector<std::unique_ptr<Binder>>& binders) {
    app = root.add_subcommand("check", "Rank condition and assumption diagnostics of a model");
    binders.push_back(std::make_unique<Binder>(app));
    Binder& b = *binders.back();
    binder = &b;
    app->add_option("--config", config, "JSON config; flags override its fields");
    auto* o = app->add_option("--model", model, "Model or design JSON, or dgp1 / dgp2");
    b.custom("model", o,
             [this](const Json& j) {
               if (j.is_string()) model = j.get<std::string>();
               else model_inline = j;
             },
             [this]() { return model_inline.is_null() ? Json(model) : model_inline; });
    b.option("--K", "K", K, "Periods per grouped outcome")->check(CLI::PositiveNumber);
    b.option("--T", "T", T, "Periods when expanding a design (default max(3, K))");
    b.option("--eps", "eps", eps, "Separation threshold of the assumption check");
    b.option("--out", "out", out, "Output JSON file or directory (summary on stdout when omitted)");
  }

  int run(int argc, const char* const* argv, std::ostream& os) {
    binder->apply(read_config(config));
    const MixtureModel m = load_model(model, model_inline, T > 0 ? T : std::max(3, K));
    if (K > m.num_periods()) throw UsageError("--K exceeds the number of periods");
    const Output output(out, os);
    as_usage([&] { output.prepare(); });
    const auto li = lin_indep_check(m, K);
    const auto as = check_assumptions(m, eps);
    auto yn = [](bool b) { return b ? "yes" : "no"; };
    std::ostringstream summary;
    summary << "nested: " << yn(li.nested) << "; excluded-choices: " << yn(li.excluded_choices)
            << "; triangular: " << yn(li.triangular) << "; full rank: " << yn(li.full_rank) << " (rank " << li.rank
            << " of " << li.num_menus << ")\n"
            << "assumptions: " << (as.ok() ? "pass" : "fail") << " (min supported " << as.min_supported << ")\n";
    const Json report = {{"lin_indep", to_json(li)}, {"assumptions", to_json(as)}};
    if (output.to_stdout()) os << summary.str();
    else output.primary(dump(report), "report.json");
    output.log(log_text(argc, argv, binder->effective(), summary.str()));
    return kExitOk;
  }
};

}  // namespace

int cmd_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent choice-set identification and estimation from short choice panels"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", build_version());
  std::vector<std::unique_ptr<Binder>> binders;
  SimulateCmd simulate;
  IdentifyCmd identify;
  EstimateCmd estimate;
  McCmd mc;
  DemandCmd demand;
  CheckCmd check;
  simulate.setup(app, binders);
  identify.setup(app, binders);
  estimate.setup(app, binders);
  mc.setup(app, binders);
  demand.setup(app, binders);
  check.setup(app, binders);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (simulate.app->parsed()) return simulate.run(argc, argv, out);
    if (identify.app->parsed()) return identify.run(argc, argv, out);
    if (estimate.app->parsed()) return estimate.run(argc, argv, out);
    if (mc.app->parsed()) return mc.run(argc, argv, out);
    if (demand.app->parsed()) return demand.run(argc, argv, out);
    if (check.app->parsed()) return check.run(argc, argv, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitUsage;
}

}  // namespace choiceset
