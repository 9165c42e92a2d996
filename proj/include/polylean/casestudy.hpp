#pragma once

#include "polylean/ingest.hpp"
#include "polylean/pbls.hpp"

#include <Eigen/Dense>

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace polylean::casestudy {

inline constexpr std::string_view kDemocratic = "Democratic";
inline constexpr std::string_view kRepublican = "Republican";

struct CashAggregate {
    double size = 0.0;      // +shares for buys, -shares for sells
    double cash_flow = 0.0; // -usdc for buys, +usdc for sells
};

/// address -> outcome -> aggregate
using CashFlows = std::map<std::string, std::map<std::string, CashAggregate, std::less<>>, std::less<>>;

/// Aggregates signed sizes and cash flows per (address, outcome). When
/// `labels` is nonempty every trade outcome must be one of them, otherwise
/// UnknownOutcomeLabel is thrown.
CashFlows cash_flows(std::span<const ingest::BettingRecord> trades, std::span<const std::string_view> labels = {});

struct PnlRecord {
    std::string address;
    double cash_flow = 0.0;
    double final_cash_flow = 0.0; // net winner shares redeemed at 1 USDC each
    double pnl = 0.0;             // cash_flow + final_cash_flow

    bool operator==(const PnlRecord&) const = default;
};

/// One record per address, sorted by address.
std::vector<PnlRecord> pnl(const CashFlows& flows, std::string_view winner);

struct PnlRegression {
    double beta0 = 0.0;
    double beta1 = 0.0;
    double beta1_se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double p_value = 1.0;
    double level = 0.95;
    std::size_t n = 0;
};

/// OLS of pnl on [1, pbls] over addresses present in both inputs. Throws
/// InsufficientData below 3 joined rows and ZeroVariance for constant pbls.
PnlRegression pnl_regression(std::span<const PnlRecord> records, std::span<const pbls::LeaningScore> scores,
                             double level = 0.95);

struct PanelObservation {
    std::string address;
    Timestamp time = 0;
    double dem_price = 0.0;
    double rep_price = 0.0;
    double dem_holding = 0.0;
    double rep_holding = 0.0;
    double pbls = 0.0;
    bool after_split = false; // time > split

    bool operator==(const PanelObservation&) const = default;
};

struct PanelOptions {
    Timestamp split = 0;
    Timestamp end = 0;
    std::int64_t interval = kSecondsPerDay;
    /// Earliest time point; defaults to the day of the first trade.
    std::optional<Timestamp> start;
    std::string dem_label = std::string(kDemocratic);
    std::string rep_label = std::string(kRepublican);
};

/// Time points run backward from `end` in steps of `interval` down to the
/// start. Each scored address that traded gets one row per point. Prices come
/// from the latest trade of that outcome at or before the point, else the
/// earliest trade of that outcome, else one minus the other outcome's price.
/// Holdings are signed cumulative shares at or before the point.
/// Rows are sorted by (address, time). Throws NoTrades or InvalidConfig.
std::vector<PanelObservation> build_panel(std::span<const ingest::BettingRecord> trades,
                                          std::span<const pbls::LeaningScore> scores, const PanelOptions& options);

enum class Side { Democratic, Republican };
enum class Period { Total, Before, After };

std::string_view to_string(Side side);
std::string_view to_string(Period period);

/// Dense regression problem with an entity index per row.
struct PanelDesign {
    Eigen::VectorXd y;
    Eigen::MatrixXd x;                // includes the constant column if wanted
    std::vector<std::size_t> entity;  // 0-based, dense
    std::vector<std::string> names;   // one per column of x
    std::size_t entities = 0;
};

/// Regressors [const, pbls, price, pbls*price] against the holding of `side`.
PanelDesign make_design(std::span<const PanelObservation> rows, Side side, Period period = Period::Total);

struct RandomEffectsFit {
    std::vector<std::string> names;
    std::vector<double> coefficients;
    std::vector<double> std_errors; // NaN for columns dropped as collinear
    std::vector<double> t_stats;
    std::vector<double> p_values;
    double sigma_delta2 = 0.0;
    double sigma_eps2 = 0.0;
    double r2 = 0.0;         // of the transformed regression
    double r2_overall = 0.0;
    double r2_within = 0.0;
    double r2_between = 0.0;
    std::size_t n_obs = 0;
    std::size_t n_entities = 0;
    std::size_t min_obs = 0;
    std::size_t max_obs = 0;
};

struct RandomEffectsOptions {
    /// Overrides every entity's quasi-demeaning factor: 0 gives pooled OLS,
    /// 1 gives the within estimator. Collinear columns are then reported with
    /// coefficient 0 and NaN standard error instead of throwing.
    std::optional<double> forced_lambda;
};

/// Swamy-Arora feasible GLS. Variance components come from within and
/// between OLS fits; sigma_delta2 is truncated at 0. Standard errors use the
/// unadjusted covariance s^2 (X*'X*)^-1 with s^2 = SSR / (N - k), p-values
/// use Student-t(N - k). Throws InsufficientPanel or SingularGLS.
RandomEffectsFit random_effects(const PanelDesign& design, const RandomEffectsOptions& options = {});

} // namespace polylean::casestudy
