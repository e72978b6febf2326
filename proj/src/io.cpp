#include "choiceset/io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "choiceset/errors.hpp"

namespace choiceset {

namespace {

Json matrix_rows(const Eigen::MatrixXd& A) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < A.cols(); ++c) row.push_back(A(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json vector_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

const Json& field(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw DomainError(where + ": missing field '" + key + "'");
  return j.at(key);
}

double number(const Json& j, const std::string& name) {
  if (!j.is_number()) throw DomainError(name + ": expected a number");
  return j.get<double>();
}

template <class T>
T integer(const Json& j, const std::string& name) {
  if (!j.is_number_integer()) throw DomainError(name + ": expected an integer");
  return j.get<T>();
}

bool boolean(const Json& j, const std::string& name) {
  if (!j.is_boolean()) throw DomainError(name + ": expected true or false");
  return j.get<bool>();
}

std::string text(const Json& j, const std::string& name) {
  if (!j.is_string()) throw DomainError(name + ": expected a string");
  return j.get<std::string>();
}

Eigen::VectorXd parse_vector(const Json& j, const std::string& name) {
  if (!j.is_array()) throw DomainError(name + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = number(j[i], name + "[" + std::to_string(i) + "]");
  return v;
}

Eigen::MatrixXd parse_matrix(const Json& j, const std::string& name) {
  if (!j.is_array() || j.empty()) throw DomainError(name + ": expected a nonempty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Eigen::MatrixXd A(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw DomainError(name + ": rows must have equal length");
    for (std::size_t c = 0; c < cols; ++c)
      A(r, c) = number(j[r][c], name + "[" + std::to_string(r) + "][" + std::to_string(c) + "]");
  }
  return A;
}

ChoiceSetMask parse_menu(const Json& j, int num_alternatives, const std::string& name) {
  if (!j.is_array()) throw DomainError(name + ": expected a list of alternatives");
  std::vector<int> alts;
  for (const auto& a : j) alts.push_back(integer<int>(a, name));
  for (int a : alts)
    if (a < 1 || a > num_alternatives) throw DomainError(name + ": alternative out of range");
  return ChoiceSetMask::from_alternatives(alts, num_alternatives);
}

Json menu_json(const ChoiceSetMask& menu) { return Json(menu.alternatives()); }

const char* objective_name(Objective o) {
  return o == Objective::euclidean ? "euclidean" : "kl";
}

const char* mio_name(MioMethod m) {
  switch (m) {
    case MioMethod::automatic: return "auto";
    case MioMethod::exhaustive: return "exhaustive";
    case MioMethod::branch_and_bound: return "branch_and_bound";
  }
  return "auto";
}

const char* init_name(Step2Init s) {
  switch (s) {
    case Step2Init::nearest: return "nearest";
    case Step2Init::uniform: return "uniform";
    case Step2Init::marginal: return "marginal";
  }
  return "nearest";
}

Json stats_json(const std::vector<ParameterStats>& stats) {
  Json out = Json::array();
  for (const auto& s : stats)
    out.push_back({{"label", s.label},
                   {"truth", s.truth},
                   {"bias", s.bias},
                   {"rmse", s.rmse},
                   {"count", s.count},
                   {"excluded", s.excluded}});
  return out;
}

Json summary_json(const EstimatorSummary& s) {
  return {{"percent_all_correct", s.percent_all_correct},
          {"percent_se", s.percent_se},
          {"average_correct", s.average_correct},
          {"m", stats_json(s.parameters.m)},
          {"F1", stats_json(s.parameters.F1)}};
}

}  // namespace

void require_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw DomainError(where + ": expected a JSON object");
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return item.key() == k; });
    if (!known) throw DomainError(where + ": unknown field '" + item.key() + "'");
  }
}

Json to_json(const DGPSpec& dgp) {
  return {{"Pyd", matrix_rows(dgp.choice_given_menu)},
          {"Pd", vector_json(dgp.menu_probs)},
          {"tie_F_across_t", dgp.tie_F_across_t}};
}

DGPSpec dgp_from_json(const Json& j) {
  require_keys(j, {"Pyd", "Pd", "tie_F_across_t"}, "dgp");
  DGPSpec dgp;
  dgp.choice_given_menu = parse_matrix(field(j, "Pyd", "dgp"), "Pyd");
  dgp.menu_probs = parse_vector(field(j, "Pd", "dgp"), "Pd");
  if (j.contains("tie_F_across_t")) dgp.tie_F_across_t = boolean(j["tie_F_across_t"], "tie_F_across_t");
  dgp.validate();
  return dgp;
}

Json to_json(const JointChoiceTensor& tensor) {
  const int Y = tensor.num_alternatives();
  Json groups = Json::array();
  Json outcomes = Json::array();
  for (int g = 0; g < 3; ++g) {
    groups.push_back(tensor.grouping().groups[g]);
    Json tuples = Json::array();
    const int K = tensor.grouping().group_size(g);
    for (int z = 0; z < tensor.dim(g); ++z) tuples.push_back(decode_outcome(z, Y, K));
    outcomes.push_back(std::move(tuples));
  }
  const auto data = tensor.data();
  return {{"num_alternatives", Y},
          {"groups", groups},
          {"dims", {tensor.dim(0), tensor.dim(1), tensor.dim(2)}},
          {"layout", "row-major: index (i, j, k) -> (i * dims[1] + j) * dims[2] + k"},
          {"outcomes", outcomes},
          {"probs", std::vector<double>(data.begin(), data.end())}};
}

JointChoiceTensor tensor_from_json(const Json& j) {
  require_keys(j, {"num_alternatives", "groups", "dims", "layout", "outcomes", "probs"}, "tensor");
  const int Y = integer<int>(field(j, "num_alternatives", "tensor"), "num_alternatives");
  const Json& groups = field(j, "groups", "tensor");
  if (!groups.is_array() || groups.size() != 3) throw DomainError("groups: expected three period lists");
  PeriodGrouping grouping;
  for (int g = 0; g < 3; ++g) {
    if (!groups[g].is_array()) throw DomainError("groups: expected three period lists");
    for (const auto& t : groups[g]) grouping.groups[g].push_back(integer<int>(t, "groups"));
  }
  const Json& probs = field(j, "probs", "tensor");
  if (!probs.is_array()) throw DomainError("probs: expected an array");
  std::vector<double> p;
  p.reserve(probs.size());
  for (const auto& v : probs) p.push_back(number(v, "probs"));
  return JointChoiceTensor(Y, grouping, std::move(p));
}

Json to_json(const MixtureEstimate& est) {
  Json menus = Json::array();
  for (const auto& m : est.menus) menus.push_back(menu_json(m));
  Json F = Json::array();
  for (const auto& f : est.F) F.push_back(matrix_rows(f));
  const auto& d = est.diagnostics;
  return {{"num_alternatives", est.num_alternatives},
          {"menus", menus},
          {"m", vector_json(est.m)},
          {"periods", est.periods},
          {"F", F},
          {"diagnostics",
           {{"residual", d.residual},
            {"pivot_condition", d.pivot_condition},
            {"max_imag_discarded", d.max_imag_discarded},
            {"min_eigvec_entry", d.min_eigvec_entry},
            {"degenerate", d.degenerate},
            {"warnings", d.warnings}}}};
}

MixtureEstimate estimate_from_json(const Json& j) {
  require_keys(j, {"num_alternatives", "menus", "m", "periods", "F", "diagnostics"}, "estimate");
  MixtureEstimate est;
  est.num_alternatives = integer<int>(field(j, "num_alternatives", "estimate"), "num_alternatives");
  const Json& menus = field(j, "menus", "estimate");
  if (!menus.is_array() || menus.empty()) throw DomainError("menus: expected a nonempty array");
  for (std::size_t i = 0; i < menus.size(); ++i)
    est.menus.push_back(parse_menu(menus[i], est.num_alternatives, "menus[" + std::to_string(i) + "]"));
  est.m = parse_vector(field(j, "m", "estimate"), "m");
  const Json& F = field(j, "F", "estimate");
  if (!F.is_array() || F.empty()) throw DomainError("F: expected one matrix per period");
  for (std::size_t t = 0; t < F.size(); ++t) est.F.push_back(parse_matrix(F[t], "F[" + std::to_string(t) + "]"));
  if (j.contains("periods")) {
    for (const auto& t : j["periods"]) est.periods.push_back(integer<int>(t, "periods"));
  } else {
    for (std::size_t t = 0; t < est.F.size(); ++t) est.periods.push_back(static_cast<int>(t) + 1);
  }
  const auto d = static_cast<Eigen::Index>(est.menus.size());
  if (est.m.size() != d) throw DomainError("m: length must equal the number of menus");
  if (est.periods.size() != est.F.size()) throw DomainError("periods: length must equal the number of F matrices");
  for (const auto& f : est.F)
    if (f.rows() != est.num_alternatives || f.cols() != d)
      throw DomainError("F: each matrix must be num_alternatives x number of menus");
  if (j.contains("diagnostics")) {
    const Json& dj = j["diagnostics"];
    require_keys(dj, {"residual", "pivot_condition", "max_imag_discarded", "min_eigvec_entry", "degenerate", "warnings"},
                 "diagnostics");
    auto& diag = est.diagnostics;
    if (dj.contains("residual")) diag.residual = number(dj["residual"], "diagnostics.residual");
    if (dj.contains("pivot_condition")) diag.pivot_condition = number(dj["pivot_condition"], "diagnostics.pivot_condition");
    if (dj.contains("max_imag_discarded"))
      diag.max_imag_discarded = number(dj["max_imag_discarded"], "diagnostics.max_imag_discarded");
    if (dj.contains("min_eigvec_entry")) diag.min_eigvec_entry = number(dj["min_eigvec_entry"], "diagnostics.min_eigvec_entry");
    if (dj.contains("degenerate")) diag.degenerate = boolean(dj["degenerate"], "diagnostics.degenerate");
    if (dj.contains("warnings"))
      for (const auto& w : dj["warnings"]) diag.warnings.push_back(text(w, "diagnostics.warnings"));
  }
  return est;
}

MixtureModel model_from_json(const Json& j, int num_periods) {
  if (j.is_object() && j.contains("Pyd")) return MixtureModel::from_dgp(dgp_from_json(j), num_periods);
  const MixtureEstimate est = estimate_from_json(j);
  for (std::size_t t = 0; t < est.periods.size(); ++t)
    if (est.periods[t] != static_cast<int>(t) + 1) throw DomainError("periods: a model needs periods 1..T in order");
  return MixtureModel(est.num_alternatives, est.menus, est.m, est.F);
}

Json to_json(const FitConfig& cfg) {
  std::vector<int> required;
  for (int y = 1; y <= kMaxAlternatives; ++y)
    if ((cfg.required_bits >> (y - 1)) & 1u) required.push_back(y);
  return {{"eps", cfg.eps},
          {"trim_mode", cfg.trim_mode == TrimMode::fixed ? "fixed" : "vanishing"},
          {"sample_size", cfg.sample_size},
          {"starts", cfg.starts},
          {"max_iter", cfg.max_iter},
          {"tol", cfg.tol},
          {"seed", cfg.seed},
          {"tie_F_across_t", cfg.tie_F_across_t},
          {"objective", objective_name(cfg.objective)},
          {"required", required},
          {"rank_tau", cfg.rank_tau},
          {"spectral_start", cfg.spectral_start},
          {"step2_init", init_name(cfg.step2_init)},
          {"step2_spread", cfg.step2_spread},
          {"final_starts", cfg.final_starts},
          {"mio",
           {{"method", mio_name(cfg.mio.method)},
            {"enumeration_budget", cfg.mio.enumeration_budget},
            {"node_limit", cfg.mio.node_limit}}}};
}

FitConfig fit_config_from_json(const Json& j) {
  require_keys(j,
               {"eps", "trim_mode", "sample_size", "starts", "max_iter", "tol", "seed", "tie_F_across_t", "objective",
                "required", "rank_tau", "spectral_start", "step2_init", "step2_spread", "final_starts", "mio"},
               "fit");
  FitConfig cfg;
  if (j.contains("eps")) cfg.eps = number(j["eps"], "fit.eps");
  if (j.contains("trim_mode")) {
    const auto s = text(j["trim_mode"], "fit.trim_mode");
    if (s == "fixed") cfg.trim_mode = TrimMode::fixed;
    else if (s == "vanishing") cfg.trim_mode = TrimMode::vanishing;
    else throw DomainError("fit.trim_mode: expected 'fixed' or 'vanishing'");
  }
  if (j.contains("sample_size")) cfg.sample_size = integer<long long>(j["sample_size"], "fit.sample_size");
  if (j.contains("starts")) cfg.starts = integer<int>(j["starts"], "fit.starts");
  if (j.contains("max_iter")) cfg.max_iter = integer<int>(j["max_iter"], "fit.max_iter");
  if (j.contains("tol")) cfg.tol = number(j["tol"], "fit.tol");
  if (j.contains("seed")) cfg.seed = integer<std::uint64_t>(j["seed"], "fit.seed");
  if (j.contains("tie_F_across_t")) cfg.tie_F_across_t = boolean(j["tie_F_across_t"], "fit.tie_F_across_t");
  if (j.contains("objective")) {
    const auto s = text(j["objective"], "fit.objective");
    if (s == "euclidean") cfg.objective = Objective::euclidean;
    else if (s == "kl") cfg.objective = Objective::kullback_leibler;
    else throw DomainError("fit.objective: expected 'euclidean' or 'kl'");
  }
  if (j.contains("required")) {
    if (!j["required"].is_array()) throw DomainError("fit.required: expected a list of alternatives");
    cfg.required_bits = 0;
    for (const auto& a : j["required"]) {
      const int y = integer<int>(a, "fit.required");
      if (y < 1 || y > kMaxAlternatives) throw DomainError("fit.required: alternative out of range");
      cfg.required_bits |= 1u << (y - 1);
    }
  }
  if (j.contains("rank_tau")) cfg.rank_tau = number(j["rank_tau"], "fit.rank_tau");
  if (j.contains("spectral_start")) cfg.spectral_start = boolean(j["spectral_start"], "fit.spectral_start");
  if (j.contains("step2_init")) {
    const auto s = text(j["step2_init"], "fit.step2_init");
    if (s == "nearest") cfg.step2_init = Step2Init::nearest;
    else if (s == "uniform") cfg.step2_init = Step2Init::uniform;
    else if (s == "marginal") cfg.step2_init = Step2Init::marginal;
    else throw DomainError("fit.step2_init: expected 'nearest', 'uniform' or 'marginal'");
  }
  if (j.contains("step2_spread")) cfg.step2_spread = number(j["step2_spread"], "fit.step2_spread");
  if (j.contains("final_starts")) cfg.final_starts = integer<int>(j["final_starts"], "fit.final_starts");
  if (j.contains("mio")) {
    const Json& mj = j["mio"];
    require_keys(mj, {"method", "enumeration_budget", "node_limit"}, "fit.mio");
    if (mj.contains("method")) {
      const auto s = text(mj["method"], "fit.mio.method");
      if (s == "auto") cfg.mio.method = MioMethod::automatic;
      else if (s == "exhaustive") cfg.mio.method = MioMethod::exhaustive;
      else if (s == "branch_and_bound") cfg.mio.method = MioMethod::branch_and_bound;
      else throw DomainError("fit.mio.method: expected 'auto', 'exhaustive' or 'branch_and_bound'");
    }
    if (mj.contains("enumeration_budget"))
      cfg.mio.enumeration_budget = integer<unsigned long long>(mj["enumeration_budget"], "fit.mio.enumeration_budget");
    if (mj.contains("node_limit")) cfg.mio.node_limit = integer<long long>(mj["node_limit"], "fit.mio.node_limit");
  }
  return cfg;
}

Json to_json(const RankReport& rank) {
  return {{"d_hat", rank.d_hat},
          {"singular_values", rank.singular_values},
          {"possibly_under_detected", rank.possibly_under_detected}};
}

Json to_json(const LinearIndependenceReport& r) {
  return {{"K", r.K},
          {"rank", r.rank},
          {"num_menus", r.num_menus},
          {"smallest_singular_value", r.smallest_singular_value},
          {"full_rank", r.full_rank},
          {"nested", r.nested},
          {"excluded_choices", r.excluded_choices},
          {"triangular", r.triangular},
          {"K_at_least_Y", r.K_at_least_Y}};
}

Json to_json(const AssumptionReport& r) {
  Json below = Json::array();
  for (const auto& c : r.below_eps)
    below.push_back({{"period", c.period}, {"alternative", c.alternative}, {"menu", c.menu}, {"value", c.value}});
  return {{"min_supported", r.min_supported},
          {"argmin",
           {{"period", r.argmin.period},
            {"alternative", r.argmin.alternative},
            {"menu", r.argmin.menu},
            {"value", r.argmin.value}}},
          {"full_support", r.full_support},
          {"eps_separated", r.eps_separated},
          {"menus_distinct", r.menus_distinct},
          {"below_eps", below},
          {"ok", r.ok()}};
}

Json to_json(const MCReport& report) {
  Json cells = Json::array();
  for (const auto& c : report.cells)
    cells.push_back({{"n", c.n},
                     {"replications", c.replications},
                     {"failures", c.failures},
                     {"failure_messages", c.failure_messages},
                     {"rank_mismatches", c.rank_mismatches},
                     {"step1", summary_json(c.step1)},
                     {"step2", summary_json(c.step2)}});
  return {{"dgp", report.dgp_name},
          {"n", report.n_list},
          {"replications", report.replications},
          {"seed", report.seed},
          {"num_menus", report.num_menus},
          {"cells", cells}};
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace choiceset
