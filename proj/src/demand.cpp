#include "choiceset/demand.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "choiceset/errors.hpp"

namespace choiceset {

namespace {

constexpr double kMassTol = 1e-8;

struct CsvRow {
  int line = 0;
  std::vector<std::string> fields;
};

struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<CsvRow> rows;

  [[noreturn]] void fail(int line, const std::string& msg) const {
    throw ParseError(path + ":" + std::to_string(line) + ": " + msg);
  }
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

CsvTable read_csv(const std::string& path, std::size_t min_columns) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  CsvTable table{path, {}, {}};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> fields;
    std::istringstream ss(t);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(trim(f));
    if (t.back() == ',') fields.emplace_back();
    if (table.header.empty()) {
      if (fields.size() < min_columns) table.fail(line_no, "header has too few columns");
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size()) table.fail(line_no, "expected " + std::to_string(table.header.size()) + " fields");
    table.rows.push_back({line_no, std::move(fields)});
  }
  if (table.header.empty()) throw ParseError(path + ": missing header");
  return table;
}

void expect_header(const CsvTable& t, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (i >= t.header.size() || t.header[i] != names[i])
      throw ParseError(t.path + ": header column " + std::to_string(i + 1) + " must be '" + names[i] + "'");
}

double parse_double(const CsvTable& t, const CsvRow& r, std::size_t col) {
  const auto& s = r.fields[col];
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  t.fail(r.line, "column '" + t.header[col] + "': not a number: '" + s + "'");
}

int parse_int(const CsvTable& t, const CsvRow& r, std::size_t col) {
  const auto& s = r.fields[col];
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  t.fail(r.line, "column '" + t.header[col] + "': not an integer: '" + s + "'");
}

std::vector<int> parse_menu_field(const CsvTable& t, const CsvRow& r, std::size_t col) {
  std::istringstream ss(r.fields[col]);
  std::vector<int> alts;
  std::string tok;
  while (ss >> tok) {
    try {
      std::size_t pos = 0;
      const int v = std::stoi(tok, &pos);
      if (pos != tok.size()) throw std::invalid_argument(tok);
      alts.push_back(v);
    } catch (const std::exception&) {
      t.fail(r.line, "menu must list alternatives separated by spaces");
    }
  }
  if (alts.empty()) t.fail(r.line, "empty menu");
  std::sort(alts.begin(), alts.end());
  return alts;
}

std::string menu_field(const ChoiceSetMask& menu) {
  std::string out;
  for (int a : menu.alternatives()) {
    if (!out.empty()) out += ' ';
    out += std::to_string(a);
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

Eigen::MatrixXd symmetric_inverse(const Eigen::MatrixXd& A) {
  Eigen::MatrixXd inv = A.ldlt().solve(Eigen::MatrixXd::Identity(A.rows(), A.cols()));
  return 0.5 * (inv + inv.transpose());
}

Eigen::VectorXd weighted_coef(const Eigen::MatrixXd& XZ, const Eigen::VectorXd& Zy, const Eigen::MatrixXd& W) {
  const Eigen::MatrixXd A = XZ * W * XZ.transpose();
  return A.ldlt().solve(XZ * W * Zy);
}

}  // namespace

int DemandPanel::menu_index(const ChoiceSetMask& menu) const {
  for (std::size_t d = 0; d < menus.size(); ++d)
    if (menus[d] == menu) return static_cast<int>(d);
  return -1;
}

void DemandPanel::validate() const {
  const int Y = num_alternatives;
  const int J = num_markets();
  if (Y < 1 || Y > kMaxAlternatives) throw DomainError("demand panel: num_alternatives outside 1..16");
  if (J < 1 || num_periods < 1) throw DomainError("demand panel: needs at least one market and period");
  if (menus.empty()) throw DomainError("demand panel: no menus");
  if (shares.size() != menus.size()) throw DomainError("demand panel: one share matrix per menu required");
  for (std::size_t a = 0; a < menus.size(); ++a) {
    if (menus[a].num_alternatives() != Y) throw DomainError("demand panel: menu over the wrong grand set");
    for (std::size_t b = 0; b < a; ++b)
      if (menus[a] == menus[b]) throw DomainError("demand panel: duplicate menu " + menus[a].to_string());
  }
  if (prices.rows() != J || prices.cols() != Y) throw DomainError("demand panel: prices must be markets x alternatives");
  if (demographics.rows() != J || demographics.cols() != static_cast<Eigen::Index>(demographic_names.size()))
    throw DomainError("demand panel: demographics must be markets x named columns");
  if (instruments.size() != instrument_names.size()) throw DomainError("demand panel: unnamed instrument");
  for (const auto& z : instruments)
    if (z.rows() != J || z.cols() != Y) throw DomainError("demand panel: instruments must be markets x alternatives");
  for (std::size_t d = 0; d < menus.size(); ++d) {
    const auto& S = shares[d];
    if (S.rows() != J * num_periods || S.cols() != Y) throw DomainError("demand panel: share matrix has the wrong shape");
    for (Eigen::Index r = 0; r < S.rows(); ++r) {
      double total = 0.0;
      for (int y = 0; y < Y; ++y) {
        const double s = S(r, y);
        if (!(s >= 0.0 && s <= 1.0)) throw DomainError("demand panel: share outside [0, 1]");
        if (s > 0.0 && !menus[d].contains_index(y))
          throw DomainError("demand panel: positive share of alternative " + std::to_string(y + 1) + " outside menu " +
                            menus[d].to_string());
        total += s;
      }
      if (total != 0.0 && std::abs(total - 1.0) > kMassTol)
        throw DomainError("demand panel: shares of menu " + menus[d].to_string() + " in market " +
                          markets[r / num_periods] + " period " + std::to_string(r % num_periods + 1) +
                          " do not sum to 1");
    }
  }
}

LogRatioData build_log_ratio_panel(const DemandPanel& panel, const ChoiceSetMask& menu, int base) {
  const int d = panel.menu_index(menu);
  if (d < 0) throw DomainError("menu " + menu.to_string() + " is not in the panel");
  if (!menu.contains(base)) throw DomainError("base alternative " + std::to_string(base) + " is not in menu " + menu.to_string());

  std::vector<int> others;
  for (int y : menu.alternatives())
    if (y != base) others.push_back(y);
  const int k = static_cast<int>(others.size());
  const int R = static_cast<int>(panel.demographic_names.size());
  const int Q = static_cast<int>(panel.instruments.size());

  LogRatioData out;
  out.menu = menu;
  out.base = base;
  // Column layout: alphas, price, gammas (alternative-major).
  for (int y : others) out.x_names.push_back("alpha_" + std::to_string(y));
  out.price_column = k;
  out.x_names.push_back("price");
  for (int y : others)
    for (const auto& name : panel.demographic_names) out.x_names.push_back("gamma_" + std::to_string(y) + "_" + name);
  for (int y : others) out.z_names.push_back("alpha_" + std::to_string(y));
  for (int y : others)
    for (const auto& name : panel.demographic_names) out.z_names.push_back("gamma_" + std::to_string(y) + "_" + name);
  for (const auto& name : panel.instrument_names) out.z_names.push_back(name + "_diff");

  std::vector<std::vector<double>> xs, zs;
  std::vector<double> ys;
  for (int a = 0; a < k; ++a) {
    const int y = others[a];
    for (int j = 0; j < panel.num_markets(); ++j) {
      for (int t = 0; t < panel.num_periods; ++t) {
        const double sy = panel.share(d, j, t, y);
        const double sb = panel.share(d, j, t, base);
        if (sy <= 0.0 || sb <= 0.0) {
          out.dropped.push_back("market " + panel.markets[j] + " period " + std::to_string(t + 1) + " alternative " +
                                std::to_string(y) + ": zero share");
          continue;
        }
        std::vector<double> x(static_cast<std::size_t>(k + 1 + k * R), 0.0);
        std::vector<double> z(static_cast<std::size_t>(k + k * R + Q), 0.0);
        x[a] = 1.0;
        z[a] = 1.0;
        x[k] = panel.prices(j, y - 1) - panel.prices(j, base - 1);
        for (int r = 0; r < R; ++r) {
          x[k + 1 + a * R + r] = panel.demographics(j, r);
          z[k + a * R + r] = panel.demographics(j, r);
        }
        for (int q = 0; q < Q; ++q) z[k + k * R + q] = panel.instruments[q](j, y - 1) - panel.instruments[q](j, base - 1);
        ys.push_back(std::log(sy / sb));
        xs.push_back(std::move(x));
        zs.push_back(std::move(z));
        out.rows.push_back({y, j, t});
      }
    }
  }
  const auto n = static_cast<Eigen::Index>(ys.size());
  out.outcome = Eigen::Map<const Eigen::VectorXd>(ys.data(), n);
  out.X.resize(n, static_cast<Eigen::Index>(out.x_names.size()));
  out.Z.resize(n, static_cast<Eigen::Index>(out.z_names.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < out.X.cols(); ++c) out.X(i, c) = xs[i][c];
    for (Eigen::Index c = 0; c < out.Z.cols(); ++c) out.Z(i, c) = zs[i][c];
  }
  return out;
}

GmmResult gmm_estimate(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z,
                       const std::vector<int>& clusters, const GmmOptions& opts,
                       const std::vector<std::string>& x_names, const std::vector<std::string>& z_names,
                       int price_column) {
  const auto N = X.rows();
  const auto K = X.cols();
  const auto L = Z.cols();
  if (N == 0) throw DomainError("gmm: no observations");
  if (y.size() != N || Z.rows() != N) throw DomainError("gmm: outcome, regressors and instruments differ in length");
  if (!clusters.empty() && static_cast<Eigen::Index>(clusters.size()) != N)
    throw DomainError("gmm: one cluster label per row required");
  if (L < K)
    throw DomainError("gmm: " + std::to_string(L) + " instruments for " + std::to_string(K) + " parameters");
  if (price_column < 0 || price_column >= K) throw DomainError("gmm: price column out of range");

  auto z_name = [&](Eigen::Index c) {
    return c < static_cast<Eigen::Index>(z_names.size()) ? z_names[c] : "z" + std::to_string(c + 1);
  };
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> zqr = Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(Z).setThreshold(opts.rank_tol);
  if (zqr.rank() < L) {
    std::string names;
    for (Eigen::Index p = zqr.rank(); p < L; ++p) {
      if (!names.empty()) names += ", ";
      names += z_name(zqr.colsPermutation().indices()(p));
    }
    throw DomainError("gmm: instrument matrix is rank deficient; collinear columns: " + names);
  }

  const Eigen::MatrixXd XZ = X.transpose() * Z / static_cast<double>(N);
  const Eigen::VectorXd Zy = Z.transpose() * y / static_cast<double>(N);
  const Eigen::FullPivLU<Eigen::MatrixXd> xz_lu(XZ);
  if (xz_lu.rank() < K) throw DomainError("gmm: instruments do not identify all regressors");

  GmmResult res;
  for (Eigen::Index c = 0; c < K; ++c)
    res.names.push_back(c < static_cast<Eigen::Index>(x_names.size()) ? x_names[c] : "x" + std::to_string(c + 1));
  res.price_column = price_column;
  res.num_obs = static_cast<int>(N);

  res.W1 = symmetric_inverse(Z.transpose() * Z / static_cast<double>(N));
  res.coef_step1 = weighted_coef(XZ, Zy, res.W1);

  // Moment covariance from step-1 residuals, summed within clusters.
  const Eigen::VectorXd e1 = y - X * res.coef_step1;
  std::map<int, Eigen::VectorXd> sums;
  for (Eigen::Index i = 0; i < N; ++i) {
    const int key = clusters.empty() ? static_cast<int>(i) : clusters[i];
    auto [it, fresh] = sums.try_emplace(key, Eigen::VectorXd::Zero(L));
    it->second += Z.row(i).transpose() * e1(i);
  }
  res.num_clusters = static_cast<int>(sums.size());
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(L, L);
  for (const auto& [key, g] : sums) S += g * g.transpose();
  S /= static_cast<double>(N);

  const double trace = S.trace();
  if (!(trace > 0.0)) {
    // Exact fit: every weighting gives the same coefficients.
    res.W2 = res.W1;
    res.ridge_applied = true;
  } else {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > opts.ridge_rcond * hi)) {
      S += (1e-10 * trace / static_cast<double>(L)) * Eigen::MatrixXd::Identity(L, L);
      res.ridge_applied = true;
    }
    res.W2 = symmetric_inverse(S);
  }
  res.coef = weighted_coef(XZ, Zy, res.W2);

  const Eigen::VectorXd e2 = y - X * res.coef;
  const Eigen::VectorXd gbar = Z.transpose() * e2 / static_cast<double>(N);
  res.J = static_cast<double>(N) * gbar.dot(res.W2 * gbar);
  res.J_df = static_cast<int>(L - K);

  const Eigen::MatrixXd G = XZ.transpose();  // L x K
  const Eigen::MatrixXd V = symmetric_inverse(G.transpose() * res.W2 * G) / static_cast<double>(N);
  res.se = V.diagonal().cwiseMax(0.0).cwiseSqrt();
  res.beta = res.coef(price_column);
  res.beta_se = res.se(price_column);
  return res;
}

GmmResult gmm_beta(const LogRatioData& data, const GmmOptions& opts) { return gmm_beta(data, data.Z, opts); }

GmmResult gmm_beta(const LogRatioData& data, const Eigen::MatrixXd& Z, const GmmOptions& opts) {
  std::vector<int> clusters;
  if (opts.cluster_by_market)
    for (const auto& r : data.rows) clusters.push_back(r.market);
  const bool own = Z.cols() == data.Z.cols() && Z.rows() == data.Z.rows() && Z == data.Z;
  return gmm_estimate(data.outcome, data.X, Z, clusters, opts, data.x_names,
                      own ? data.z_names : std::vector<std::string>{}, data.price_column);
}

double elasticity_naive(double beta, double p, double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw DomainError("elasticity: share outside [0, 1]");
  return beta * p * (1.0 - s);
}

double elasticity_mixture(std::span<const double> betas, std::span<const double> menu_shares,
                          std::span<const double> weights, double p) {
  if (betas.size() != menu_shares.size() || betas.size() != weights.size())
    throw DomainError("elasticity: betas, shares and weights differ in length");
  double total_weight = 0.0;
  double s = 0.0;
  for (std::size_t d = 0; d < weights.size(); ++d) {
    if (!(weights[d] >= 0.0)) throw DomainError("elasticity: negative menu weight");
    if (!(menu_shares[d] >= 0.0 && menu_shares[d] <= 1.0)) throw DomainError("elasticity: share outside [0, 1]");
    total_weight += weights[d];
    s += menu_shares[d] * weights[d];
  }
  if (std::abs(total_weight - 1.0) > 1e-9) throw DomainError("elasticity: menu weights do not sum to 1");
  if (!(s > 0.0)) throw DomainError("elasticity: aggregate share is 0");
  double e = 0.0;
  for (std::size_t d = 0; d < weights.size(); ++d)
    e += menu_shares[d] * weights[d] / s * elasticity_naive(betas[d], p, menu_shares[d]);
  return e;
}

DemandPanel aggregate_panel(const DemandPanel& panel, const Eigen::MatrixXd& weights) {
  const int J = panel.num_markets();
  const int D = static_cast<int>(panel.menus.size());
  if (weights.rows() != J || weights.cols() != D) throw DomainError("menu weights must be markets x menus");
  DemandPanel out = panel;
  out.menus = {ChoiceSetMask::full(panel.num_alternatives)};
  out.shares.assign(1, Eigen::MatrixXd::Zero(J * panel.num_periods, panel.num_alternatives));
  for (int j = 0; j < J; ++j) {
    if (weights.row(j).minCoeff() < 0.0 || std::abs(weights.row(j).sum() - 1.0) > 1e-9)
      throw DomainError("menu weights of market " + panel.markets[j] + " are not a distribution");
    for (int t = 0; t < panel.num_periods; ++t) {
      const int r = j * panel.num_periods + t;
      for (int d = 0; d < D; ++d) {
        if (weights(j, d) == 0.0) continue;
        if (panel.shares[d].row(r).sum() == 0.0)
          throw DomainError("menu " + panel.menus[d].to_string() + " has weight in market " + panel.markets[j] +
                            " but no shares");
        out.shares[0].row(r) += weights(j, d) * panel.shares[d].row(r);
      }
    }
  }
  return out;
}

std::vector<ElasticityRow> elasticity_table(const DemandPanel& panel, const Eigen::MatrixXd& weights,
                                            std::span<const double> betas, double naive_beta, int market,
                                            int period) {
  const int D = static_cast<int>(panel.menus.size());
  if (static_cast<int>(betas.size()) != D) throw DomainError("one beta per menu required");
  if (market < 0 || market >= panel.num_markets() || period < 0 || period >= panel.num_periods)
    throw DomainError("market or period out of range");
  std::vector<double> w(D);
  for (int d = 0; d < D; ++d) w[d] = weights(market, d);
  std::vector<ElasticityRow> rows;
  for (int y = 1; y <= panel.num_alternatives; ++y) {
    ElasticityRow row;
    row.alternative = y;
    const double p = panel.prices(market, y - 1);
    std::vector<double> sd(D);
    double s = 0.0;
    for (int d = 0; d < D; ++d) {
      sd[d] = panel.share(d, market, period, y);
      s += sd[d] * w[d];
      row.by_menu.push_back(panel.menus[d].contains(y) ? elasticity_naive(betas[d], p, sd[d]) : 0.0);
    }
    row.naive = elasticity_naive(naive_beta, p, std::min(1.0, s));
    row.mixture = s > 0.0 ? elasticity_mixture(betas, sd, w, p) : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(std::move(row));
  }
  return rows;
}

MenuShareSummary menu_share_summaries(const std::vector<MixtureEstimate>& estimates,
                                      std::span<const double> market_weights, double threshold, int min_menus) {
  if (estimates.empty()) throw DomainError("menu summaries: no markets");
  if (market_weights.size() != estimates.size()) throw DomainError("menu summaries: one weight per market required");
  double total = 0.0;
  for (double w : market_weights) {
    if (!(w >= 0.0)) throw DomainError("menu summaries: negative market weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("menu summaries: market weights do not sum to 1");
  const int Y = estimates.front().num_alternatives;
  MenuShareSummary out;
  out.cardinality.assign(Y, 0.0);
  out.consideration.assign(Y, 0.0);
  std::map<ChoiceSetMask, double> pooled;
  for (std::size_t j = 0; j < estimates.size(); ++j) {
    const auto& est = estimates[j];
    if (est.num_alternatives != Y) throw DomainError("menu summaries: markets differ in the number of alternatives");
    int above = 0;
    for (int d = 0; d < est.num_menus(); ++d) {
      const double mass = est.m(d) * market_weights[j];
      const auto& menu = est.menus[d];
      out.cardinality[menu.size() - 1] += mass;
      for (int y : menu.alternatives()) out.consideration[y - 1] += mass;
      pooled[menu] += mass;
      if (est.m(d) > threshold) ++above;
    }
    out.menus_above_threshold.push_back(above);
    if (above >= min_menus) ++out.markets_meeting_threshold;
  }
  for (const auto& [menu, mass] : pooled) out.top_menus.push_back({menu, mass});
  std::stable_sort(out.top_menus.begin(), out.top_menus.end(),
                   [](const MenuMass& a, const MenuMass& b) { return a.mass > b.mass; });
  return out;
}

DemandPanel read_demand_panel(const DemandFiles& files) {
  DemandPanel panel;
  std::map<std::string, int> market_index;

  const CsvTable prices = read_csv(files.prices, 3);
  expect_header(prices, {"market", "alternative", "price"});
  int Y = 0;
  for (const auto& r : prices.rows) {
    if (market_index.emplace(r.fields[0], static_cast<int>(panel.markets.size())).second)
      panel.markets.push_back(r.fields[0]);
    const int y = parse_int(prices, r, 1);
    if (y < 1 || y > kMaxAlternatives) prices.fail(r.line, "alternative outside 1..16");
    Y = std::max(Y, y);
  }
  if (panel.markets.empty()) throw ParseError(files.prices + ": no rows");
  const int J = static_cast<int>(panel.markets.size());
  panel.num_alternatives = Y;
  panel.prices = Eigen::MatrixXd::Constant(J, Y, std::numeric_limits<double>::quiet_NaN());
  for (const auto& r : prices.rows) panel.prices(market_index[r.fields[0]], parse_int(prices, r, 1) - 1) = parse_double(prices, r, 2);
  for (int j = 0; j < J; ++j)
    for (int y = 0; y < Y; ++y)
      if (std::isnan(panel.prices(j, y)))
        throw ParseError(files.prices + ": missing price for market " + panel.markets[j] + " alternative " + std::to_string(y + 1));

  auto market_of = [&](const CsvTable& t, const CsvRow& r) {
    const auto it = market_index.find(r.fields[0]);
    if (it == market_index.end()) t.fail(r.line, "market '" + r.fields[0] + "' has no prices");
    return it->second;
  };

  const CsvTable shares = read_csv(files.shares, 5);
  expect_header(shares, {"market", "period", "menu", "alternative", "share"});
  int T = 1;
  for (const auto& r : shares.rows) {
    const int t = parse_int(shares, r, 1);
    if (t < 1) shares.fail(r.line, "period must be >= 1");
    T = std::max(T, t);
    const auto alts = parse_menu_field(shares, r, 2);
    if (alts.front() < 1 || alts.back() > Y) shares.fail(r.line, "menu alternative without a price");
    const auto menu = ChoiceSetMask::from_alternatives(alts, Y);
    if (panel.menu_index(menu) < 0) panel.menus.push_back(menu);
  }
  panel.num_periods = T;
  panel.shares.assign(panel.menus.size(), Eigen::MatrixXd::Zero(J * T, Y));
  for (const auto& r : shares.rows) {
    const int j = market_of(shares, r);
    const int t = parse_int(shares, r, 1) - 1;
    const auto menu = ChoiceSetMask::from_alternatives(parse_menu_field(shares, r, 2), Y);
    const int y = parse_int(shares, r, 3);
    if (!menu.contains(y)) shares.fail(r.line, "alternative outside its menu");
    panel.shares[panel.menu_index(menu)](j * T + t, y - 1) = parse_double(shares, r, 4);
  }

  panel.demographics.resize(J, 0);
  if (!files.demographics.empty()) {
    const CsvTable demo = read_csv(files.demographics, 1);
    expect_header(demo, {"market"});
    panel.demographic_names.assign(demo.header.begin() + 1, demo.header.end());
    const auto R = static_cast<Eigen::Index>(panel.demographic_names.size());
    panel.demographics = Eigen::MatrixXd::Constant(J, R, std::numeric_limits<double>::quiet_NaN());
    for (const auto& r : demo.rows) {
      const int j = market_of(demo, r);
      for (Eigen::Index c = 0; c < R; ++c) panel.demographics(j, c) = parse_double(demo, r, c + 1);
    }
    if (panel.demographics.hasNaN()) throw ParseError(files.demographics + ": a market is missing");
  }

  if (!files.instruments.empty()) {
    const CsvTable inst = read_csv(files.instruments, 2);
    expect_header(inst, {"market", "alternative"});
    panel.instrument_names.assign(inst.header.begin() + 2, inst.header.end());
    panel.instruments.assign(panel.instrument_names.size(),
                             Eigen::MatrixXd::Constant(J, Y, std::numeric_limits<double>::quiet_NaN()));
    for (const auto& r : inst.rows) {
      const int j = market_of(inst, r);
      const int y = parse_int(inst, r, 1);
      if (y < 1 || y > Y) inst.fail(r.line, "alternative out of range");
      for (std::size_t q = 0; q < panel.instruments.size(); ++q) panel.instruments[q](j, y - 1) = parse_double(inst, r, q + 2);
    }
    for (const auto& z : panel.instruments)
      if (z.hasNaN()) throw ParseError(files.instruments + ": a market or alternative is missing");
  }

  panel.validate();
  return panel;
}

Eigen::MatrixXd read_menu_weights(const std::string& path, const DemandPanel& panel) {
  const CsvTable t = read_csv(path, 3);
  expect_header(t, {"market", "menu", "weight"});
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(panel.num_markets(), static_cast<Eigen::Index>(panel.menus.size()));
  for (const auto& r : t.rows) {
    const auto it = std::find(panel.markets.begin(), panel.markets.end(), r.fields[0]);
    if (it == panel.markets.end()) t.fail(r.line, "unknown market '" + r.fields[0] + "'");
    const auto alts = parse_menu_field(t, r, 1);
    if (alts.front() < 1 || alts.back() > panel.num_alternatives) t.fail(r.line, "menu alternative out of range");
    const int d = panel.menu_index(ChoiceSetMask::from_alternatives(alts, panel.num_alternatives));
    if (d < 0) t.fail(r.line, "menu has no shares");
    W(it - panel.markets.begin(), d) = parse_double(t, r, 2);
  }
  return W;
}

void write_demand_panel(const DemandPanel& panel, const DemandFiles& files) {
  auto open = [](const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    return out;
  };
  const int J = panel.num_markets();
  const int Y = panel.num_alternatives;
  {
    auto out = open(files.prices);
    out << "market,alternative,price\n";
    for (int j = 0; j < J; ++j)
      for (int y = 1; y <= Y; ++y) out << panel.markets[j] << ',' << y << ',' << fmt(panel.prices(j, y - 1)) << '\n';
  }
  {
    auto out = open(files.shares);
    out << "market,period,menu,alternative,share\n";
    for (std::size_t d = 0; d < panel.menus.size(); ++d)
      for (int j = 0; j < J; ++j)
        for (int t = 0; t < panel.num_periods; ++t) {
          if (panel.shares[d].row(j * panel.num_periods + t).sum() == 0.0) continue;
          for (int y : panel.menus[d].alternatives())
            out << panel.markets[j] << ',' << t + 1 << ',' << menu_field(panel.menus[d]) << ',' << y << ','
                << fmt(panel.share(static_cast<int>(d), j, t, y)) << '\n';
        }
  }
  if (!files.demographics.empty()) {
    auto out = open(files.demographics);
    out << "market";
    for (const auto& n : panel.demographic_names) out << ',' << n;
    out << '\n';
    for (int j = 0; j < J; ++j) {
      out << panel.markets[j];
      for (Eigen::Index c = 0; c < panel.demographics.cols(); ++c) out << ',' << fmt(panel.demographics(j, c));
      out << '\n';
    }
  }
  if (!files.instruments.empty()) {
    auto out = open(files.instruments);
    out << "market,alternative";
    for (const auto& n : panel.instrument_names) out << ',' << n;
    out << '\n';
    for (int j = 0; j < J; ++j)
      for (int y = 1; y <= Y; ++y) {
        out << panel.markets[j] << ',' << y;
        for (const auto& z : panel.instruments) out << ',' << fmt(z(j, y - 1));
        out << '\n';
      }
  }
}

}  // namespace choiceset
