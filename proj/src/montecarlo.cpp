#include "choiceset/montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <sstream>
#include <thread>

#include "choiceset/errors.hpp"
#include "choiceset/rng.hpp"

namespace choiceset {

RecoveryMetrics set_recovery_metrics(const std::vector<ChoiceSetMask>& estimated,
                                     const std::vector<ChoiceSetMask>& truth) {
  RecoveryMetrics r;
  std::vector<ChoiceSetMask> est(estimated.begin(), estimated.end());
  std::sort(est.begin(), est.end());
  est.erase(std::unique(est.begin(), est.end()), est.end());
  std::vector<ChoiceSetMask> tru(truth.begin(), truth.end());
  std::sort(tru.begin(), tru.end());
  tru.erase(std::unique(tru.begin(), tru.end()), tru.end());
  for (const auto& m : est)
    if (std::binary_search(tru.begin(), tru.end(), m)) ++r.n_correct;
  r.all_correct = est == tru;
  return r;
}

ParameterTables bias_rmse(const std::vector<const MixtureEstimate*>& estimates, const MixtureModel& truth) {
  ParameterTables out;
  const int d = truth.num_menus();
  const Eigen::MatrixXd& f1 = truth.conditional(1);
  // Accumulators: sum of errors, sum of squared errors.
  struct Acc {
    double sum = 0.0, sq = 0.0;
    int count = 0, excluded = 0;
  };
  std::vector<Acc> macc(d);
  std::vector<std::pair<int, int>> f_params;  // (alternative index, menu column)
  for (int j = 0; j < d; ++j) {
    const auto alts = truth.menus()[j].alternatives();
    for (std::size_t a = 0; a + 1 < alts.size(); ++a) f_params.emplace_back(alts[a] - 1, j);
  }
  std::vector<Acc> facc(f_params.size());
  for (const MixtureEstimate* est : estimates) {
    if (!est) continue;
    std::vector<int> match(d, -1);
    for (int j = 0; j < d; ++j) {
      const auto it = std::find(est->menus.begin(), est->menus.end(), truth.menus()[j]);
      if (it != est->menus.end()) match[j] = static_cast<int>(it - est->menus.begin());
    }
    const auto period = std::find(est->periods.begin(), est->periods.end(), 1);
    for (int j = 0; j < d; ++j) {
      if (match[j] < 0) {
        ++macc[j].excluded;
        continue;
      }
      const double e = est->m(match[j]) - truth.weights()(j);
      macc[j].sum += e;
      macc[j].sq += e * e;
      ++macc[j].count;
    }
    for (std::size_t p = 0; p < f_params.size(); ++p) {
      const auto [y, j] = f_params[p];
      if (match[j] < 0 || period == est->periods.end()) {
        ++facc[p].excluded;
        continue;
      }
      const auto& F = est->F[period - est->periods.begin()];
      const double e = F(y, match[j]) - f1(y, j);
      facc[p].sum += e;
      facc[p].sq += e * e;
      ++facc[p].count;
    }
  }
  auto finish = [](const Acc& a, std::string label, double value) {
    ParameterStats s;
    s.label = std::move(label);
    s.truth = value;
    s.count = a.count;
    s.excluded = a.excluded;
    if (a.count > 0) {
      s.bias = a.sum / a.count;
      s.rmse = std::sqrt(a.sq / a.count);
    }
    return s;
  };
  for (int j = 0; j < d; ++j) out.m.push_back(finish(macc[j], "D" + std::to_string(j + 1), truth.weights()(j)));
  for (std::size_t p = 0; p < f_params.size(); ++p) {
    const auto [y, j] = f_params[p];
    out.F1.push_back(finish(facc[p], "(" + std::to_string(y + 1) + "," + std::to_string(j + 1) + ")", f1(y, j)));
  }
  return out;
}

namespace {

bool same_stats(const std::vector<ParameterStats>& a, const std::vector<ParameterStats>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].label != b[i].label || a[i].truth != b[i].truth || a[i].bias != b[i].bias ||
        a[i].rmse != b[i].rmse || a[i].count != b[i].count || a[i].excluded != b[i].excluded)
      return false;
  }
  return true;
}

bool same_summary(const EstimatorSummary& a, const EstimatorSummary& b) {
  return a.percent_all_correct == b.percent_all_correct && a.percent_se == b.percent_se &&
         a.average_correct == b.average_correct && same_stats(a.parameters.m, b.parameters.m) &&
         same_stats(a.parameters.F1, b.parameters.F1);
}

struct Replication {
  bool failed = false;
  std::string error;
  int d_hat = 0;
  MixtureEstimate step1;
  MixtureEstimate step2;
  double seconds = 0.0;
};

EstimatorSummary summarize(const std::vector<Replication>& reps, const MixtureModel& truth, bool step2) {
  EstimatorSummary s;
  int all = 0;
  long long total = 0;
  std::vector<const MixtureEstimate*> ptrs;
  for (const auto& r : reps) {
    if (r.failed) {
      ptrs.push_back(nullptr);
      continue;
    }
    const auto& est = step2 ? r.step2 : r.step1;
    const auto met = set_recovery_metrics(est.menus, truth.menus());
    all += met.all_correct ? 1 : 0;
    total += met.n_correct;
    ptrs.push_back(&est);
  }
  // Failed replications count as recovering nothing.
  const double n = static_cast<double>(reps.size());
  const double p = all / n;
  s.percent_all_correct = 100.0 * p;
  s.percent_se = 100.0 * std::sqrt(p * (1.0 - p) / n);
  s.average_correct = static_cast<double>(total) / n;
  s.parameters = bias_rmse(ptrs, truth);
  return s;
}

}  // namespace

bool same_results(const MCReport& a, const MCReport& b) {
  if (a.dgp_name != b.dgp_name || a.n_list != b.n_list || a.replications != b.replications ||
      a.seed != b.seed || a.num_menus != b.num_menus || a.cells.size() != b.cells.size())
    return false;
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    const auto& x = a.cells[i];
    const auto& y = b.cells[i];
    if (x.n != y.n || x.replications != y.replications || x.failures != y.failures ||
        x.failure_messages != y.failure_messages || x.rank_mismatches != y.rank_mismatches ||
        !same_summary(x.step1, y.step1) || !same_summary(x.step2, y.step2))
      return false;
  }
  return true;
}

std::uint64_t replication_seed(std::uint64_t master, long long n, int rep) {
  return substream_seed(substream_seed(master, static_cast<std::uint64_t>(n)), static_cast<std::uint64_t>(rep));
}

MCReport run_mc(const DGPSpec& dgp, const std::string& name, const std::vector<long long>& n_list, int reps,
                const FitConfig& cfg, std::uint64_t seed, const MCOptions& opts) {
  if (reps < 1) throw DomainError("replications must be at least 1");
  if (n_list.empty()) throw DomainError("at least one sample size is required");
  for (long long n : n_list)
    if (n < 1 || n > std::numeric_limits<int>::max()) throw DomainError("sample size out of range");
  if (opts.jobs < 1) throw DomainError("jobs must be at least 1");
  if (!(opts.rank_tau > 0.0 && opts.rank_tau < 1.0)) throw DomainError("rank_tau must lie in (0,1)");
  dgp.validate();
  const MixtureModel truth = MixtureModel::from_dgp(dgp, 3);
  cfg.validate(truth.num_alternatives());

  MCReport report;
  report.dgp_name = name;
  report.n_list = n_list;
  report.replications = reps;
  report.seed = seed;
  report.num_menus = truth.num_menus();
  report.jobs = opts.jobs;

  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t tasks = n_list.size() * static_cast<std::size_t>(reps);
  std::vector<Replication> results(tasks);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t task = next++; task < tasks; task = next++) {
      const long long n = n_list[task / reps];
      const int rep = static_cast<int>(task % reps);
      auto& out = results[task];
      const auto start = std::chrono::steady_clock::now();
      try {
        const std::uint64_t rs = replication_seed(seed, n, rep);
        const auto tensor = sample_tensor(truth, static_cast<int>(n), rs, PeriodGrouping::triple());
        FitConfig local = cfg;
        local.seed = substream_seed(rs, 1);
        local.sample_size = n;
        if (opts.tie_from_dgp && dgp.tie_F_across_t) local.tie_F_across_t = true;
        local.rank_tau = opts.rank_tau;
        const auto res = estimate_pipeline(tensor, local, opts.fixed_d_hat);
        out.d_hat = res.d_hat;
        out.step1 = res.step1_estimate;
        out.step2 = res.final_estimate;
      } catch (const std::exception& e) {
        out.failed = true;
        out.error = e.what();
      }
      out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };
  std::vector<std::thread> pool;
  for (int j = 1; j < opts.jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  for (std::size_t c = 0; c < n_list.size(); ++c) {
    std::vector<Replication> cell_reps(std::make_move_iterator(results.begin() + c * reps),
                                       std::make_move_iterator(results.begin() + (c + 1) * reps));
    MCCell cell;
    cell.n = n_list[c];
    cell.replications = reps;
    for (const auto& r : cell_reps) {
      if (r.failed) {
        ++cell.failures;
        if (std::find(cell.failure_messages.begin(), cell.failure_messages.end(), r.error) ==
            cell.failure_messages.end())
          cell.failure_messages.push_back(r.error);
      } else if (r.d_hat != truth.num_menus()) {
        ++cell.rank_mismatches;
      }
      cell.mean_seconds += r.seconds / reps;
      cell.max_seconds = std::max(cell.max_seconds, r.seconds);
    }
    cell.step1 = summarize(cell_reps, truth, false);
    cell.step2 = summarize(cell_reps, truth, true);
    report.cells.push_back(std::move(cell));
  }
  report.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

MCTable parse_mc_table(const std::string& name) {
  if (name == "1") return MCTable::percent_correct;
  if (name == "2") return MCTable::average_correct;
  if (name == "bias_m") return MCTable::bias_m;
  if (name == "rmse_m") return MCTable::rmse_m;
  if (name == "bias_F") return MCTable::bias_F;
  if (name == "rmse_F") return MCTable::rmse_F;
  throw DomainError("unknown table '" + name + "' (expected 1, 2, bias_m, rmse_m, bias_F or rmse_F)");
}

std::string mc_table_name(MCTable table) {
  switch (table) {
    case MCTable::percent_correct: return "1";
    case MCTable::average_correct: return "2";
    case MCTable::bias_m: return "bias_m";
    case MCTable::rmse_m: return "rmse_m";
    case MCTable::bias_F: return "bias_F";
    case MCTable::rmse_F: return "rmse_F";
  }
  return "";
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::string mc_table_csv(const MCReport& report, MCTable table) {
  std::ostringstream os;
  if (table == MCTable::percent_correct || table == MCTable::average_correct) {
    os << "dgp,estimator";
    for (long long n : report.n_list) os << ',' << n;
    os << '\n';
    for (int which = 0; which < 2; ++which) {
      os << report.dgp_name << ',' << (which == 0 ? "Step-1" : "Step-2");
      for (const auto& cell : report.cells) {
        const auto& s = which == 0 ? cell.step1 : cell.step2;
        os << ',' << (table == MCTable::percent_correct ? fixed(s.percent_all_correct, 1)
                                                        : fixed(s.average_correct, 2));
      }
      os << '\n';
    }
    return os.str();
  }
  const bool is_m = table == MCTable::bias_m || table == MCTable::rmse_m;
  const bool is_bias = table == MCTable::bias_m || table == MCTable::bias_F;
  const auto& first = report.cells.front().step2.parameters;
  os << "estimator,n";
  for (const auto& p : is_m ? first.m : first.F1) os << ',' << p.label;
  os << ",excluded\n";
  for (int which = 0; which < 2; ++which) {
    for (const auto& cell : report.cells) {
      const auto& params = (which == 0 ? cell.step1 : cell.step2).parameters;
      const auto& list = is_m ? params.m : params.F1;
      os << (which == 0 ? "Step-1" : "Step-2") << ',' << cell.n;
      int excluded = 0;
      for (const auto& p : list) {
        os << ',' << sci(is_bias ? p.bias : p.rmse);
        excluded = std::max(excluded, p.excluded);
      }
      os << ',' << excluded << '\n';
    }
  }
  return os.str();
}

}  // namespace choiceset
