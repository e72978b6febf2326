#pragma once

#include <istream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "choiceset/choice_set.hpp"
#include "choiceset/spectral.hpp"

namespace choiceset {

/// Menu-level logit shares with market covariates. Market j and period t are
/// 0-based positions; alternatives are 1-based in the API.
struct DemandPanel {
  int num_alternatives = 0;
  int num_periods = 1;
  std::vector<std::string> markets;
  std::vector<ChoiceSetMask> menus;
  /// shares[d] is (J*T) x Y with row j*T + t. A row of zeros means menu d is
  /// not observed in that market and period.
  std::vector<Eigen::MatrixXd> shares;
  /// J x Y.
  Eigen::MatrixXd prices;
  /// J x R.
  Eigen::MatrixXd demographics;
  std::vector<std::string> demographic_names;
  /// Each J x Y, one per excluded instrument.
  std::vector<Eigen::MatrixXd> instruments;
  std::vector<std::string> instrument_names;

  int num_markets() const { return static_cast<int>(markets.size()); }
  int menu_index(const ChoiceSetMask& menu) const;
  double share(int d, int j, int t, int y) const { return shares[d](j * num_periods + t, y - 1); }
  /// Throws DomainError on shape mismatches, shares outside [0,1], mass off
  /// the menu, or observed rows that do not sum to 1.
  void validate() const;
};

/// Stacked differenced equations for one menu: rows over (y in D \ {base},
/// j, t). Regressors are an intercept per alternative, the price difference
/// and demographics interacted with each alternative. Instruments are the
/// exogenous regressors plus each excluded instrument differenced against the
/// base alternative.
struct LogRatioData {
  ChoiceSetMask menu = ChoiceSetMask::full(1);
  int base = 0;
  Eigen::VectorXd outcome;
  Eigen::MatrixXd X;
  Eigen::MatrixXd Z;
  std::vector<std::string> x_names;
  std::vector<std::string> z_names;
  int price_column = 0;
  struct Row {
    int alternative;
    int market;
    int period;
  };
  std::vector<Row> rows;
  /// One message per skipped (y, j, t) with a zero share.
  std::vector<std::string> dropped;
};

/// Throws DomainError if the base is outside the menu or the menu is not in
/// the panel.
LogRatioData build_log_ratio_panel(const DemandPanel& panel, const ChoiceSetMask& menu, int base);

struct GmmOptions {
  /// Moment covariance summed within markets; otherwise row by row.
  bool cluster_by_market = true;
  /// Reciprocal condition number of the moment covariance below which the
  /// ridge 1e-10 * trace / dim is added.
  double ridge_rcond = 1e-12;
  /// Relative tolerance of the instrument rank test.
  double rank_tol = 1e-10;
};

struct GmmResult {
  std::vector<std::string> names;
  Eigen::VectorXd coef;
  Eigen::VectorXd se;
  /// Step-1 (2SLS) coefficients.
  Eigen::VectorXd coef_step1;
  int price_column = 0;
  double beta = 0.0;
  double beta_se = 0.0;
  double J = 0.0;
  int J_df = 0;
  int num_obs = 0;
  int num_clusters = 0;
  Eigen::MatrixXd W1;
  Eigen::MatrixXd W2;
  bool ridge_applied = false;
  /// Shares enter as data; their first-stage sampling error is not propagated.
  bool shares_treated_as_exact = true;
};

/// Two-step efficient GMM of y = X b + e with E[Z e] = 0. W1 = (Z'Z/N)^{-1};
/// W2 is the inverse of the step-1 moment covariance. `clusters` (empty for
/// none) assigns rows to groups. Throws DomainError naming collinear
/// instrument columns, or when instruments are fewer than regressors.
GmmResult gmm_estimate(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z,
                       const std::vector<int>& clusters, const GmmOptions& opts = {},
                       const std::vector<std::string>& x_names = {}, const std::vector<std::string>& z_names = {},
                       int price_column = 0);

/// gmm_estimate on a log-ratio dataset with its own instruments.
GmmResult gmm_beta(const LogRatioData& data, const GmmOptions& opts = {});
/// Same, with an explicit instrument matrix (rows aligned with data.rows).
GmmResult gmm_beta(const LogRatioData& data, const Eigen::MatrixXd& Z, const GmmOptions& opts = {});

/// beta * p * (1 - s). Throws DomainError unless s lies in [0, 1].
double elasticity_naive(double beta, double p, double s);

/// Own-price elasticity under menu variation with price-independent weights:
/// sum_D (s_D / s) * beta_D * p * (1 - s_D) * m_D with s = sum_D s_D m_D.
/// Throws DomainError when s = 0 or the weights are not a distribution.
double elasticity_mixture(std::span<const double> betas, std::span<const double> menu_shares,
                          std::span<const double> weights, double p);

/// Single-menu panel of aggregate shares s = sum_D s_D m(D | j). weights is
/// J x d; markets with unobserved menus must carry zero weight on them.
DemandPanel aggregate_panel(const DemandPanel& panel, const Eigen::MatrixXd& weights);

struct ElasticityRow {
  int alternative = 0;
  double naive = 0.0;
  double mixture = 0.0;
  /// Per-menu elasticity, 0 when the alternative is not in the menu.
  std::vector<double> by_menu;
};

/// Elasticities of every alternative in one market and period. `betas` and
/// the columns of `weights` follow panel.menus.
std::vector<ElasticityRow> elasticity_table(const DemandPanel& panel, const Eigen::MatrixXd& weights,
                                            std::span<const double> betas, double naive_beta, int market,
                                            int period);

struct MenuMass {
  ChoiceSetMask menu;
  double mass = 0.0;
};

struct MenuShareSummary {
  /// cardinality[l - 1]: weighted share of menus of size l.
  std::vector<double> cardinality;
  /// consideration[y - 1]: weighted probability that y is in the menu.
  std::vector<double> consideration;
  /// Menus by pooled weighted mass, largest first.
  std::vector<MenuMass> top_menus;
  /// Per market, the number of menus with m above the threshold.
  std::vector<int> menus_above_threshold;
  /// Markets with at least `min_menus` menus above the threshold.
  int markets_meeting_threshold = 0;
};

/// Throws DomainError unless the market weights are nonnegative and sum to 1.
MenuShareSummary menu_share_summaries(const std::vector<MixtureEstimate>& estimates,
                                      std::span<const double> market_weights, double threshold = 0.10,
                                      int min_menus = 5);

/// CSV bundle. Menus are written as space-separated alternatives ("1 2 4").
///   shares:       market,period,menu,alternative,share
///   prices:       market,alternative,price
///   demographics: market,<name>...
///   instruments:  market,alternative,<name>...
///   weights:      market,menu,weight
struct DemandFiles {
  std::string shares;
  std::string prices;
  std::string demographics;
  std::string instruments;
};

DemandPanel read_demand_panel(const DemandFiles& files);
/// J x d menu weights aligned with panel.markets and panel.menus.
Eigen::MatrixXd read_menu_weights(const std::string& path, const DemandPanel& panel);
void write_demand_panel(const DemandPanel& panel, const DemandFiles& files);

}  // namespace choiceset
