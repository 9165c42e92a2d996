#include "polylean/casestudy.hpp"

#include "polylean/error.hpp"
#include "polylean/numeric.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace polylean::casestudy {

namespace {

double student_sf2(double t, double df) {
    if (!std::isfinite(t)) return 0.0;
    boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

double squared_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() < 2) return 0.0;
    const Eigen::ArrayXd da = a.array() - a.mean();
    const Eigen::ArrayXd db = b.array() - b.mean();
    const double saa = (da * da).sum();
    const double sbb = (db * db).sum();
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    const double sab = (da * db).sum();
    return sab * sab / (saa * sbb);
}

struct OlsResult {
    Eigen::VectorXd beta;
    Eigen::VectorXd resid;
    Eigen::Index rank = 0;
};

OlsResult ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    OlsResult r;
    r.rank = qr.rank();
    r.beta = qr.solve(y);
    r.resid = y - x * r.beta;
    return r;
}

} // namespace

CashFlows cash_flows(std::span<const ingest::BettingRecord> trades, std::span<const std::string_view> labels) {
    std::map<std::string, std::map<std::string, std::pair<CompensatedSum, CompensatedSum>, std::less<>>, std::less<>>
        sums;
    for (const auto& t : trades) {
        if (!labels.empty() && std::find(labels.begin(), labels.end(), t.outcome) == labels.end())
            throw Error(ErrorCode::UnknownOutcomeLabel, "outcome '" + t.outcome + "' is not a recognised party label");
        auto& [size, cash] = sums[t.address][t.outcome];
        if (t.side == ingest::Side::Buy) {
            size += t.shares;
            cash += -t.usdc_size;
        } else {
            size += -t.shares;
            cash += t.usdc_size;
        }
    }
    CashFlows flows;
    for (const auto& [address, outcomes] : sums)
        for (const auto& [outcome, s] : outcomes) flows[address][outcome] = {s.first.value(), s.second.value()};
    return flows;
}

std::vector<PnlRecord> pnl(const CashFlows& flows, std::string_view winner) {
    std::vector<PnlRecord> out;
    out.reserve(flows.size());
    for (const auto& [address, outcomes] : flows) {
        PnlRecord r;
        r.address = address;
        CompensatedSum cash;
        for (const auto& [outcome, agg] : outcomes) {
            cash += agg.cash_flow;
            if (outcome == winner) r.final_cash_flow = agg.size;
        }
        r.cash_flow = cash.value();
        r.pnl = r.cash_flow + r.final_cash_flow;
        out.push_back(std::move(r));
    }
    return out;
}

PnlRegression pnl_regression(std::span<const PnlRecord> records, std::span<const pbls::LeaningScore> scores,
                             double level) {
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::InvalidConfig, "level must lie in (0, 1)");
    std::map<std::string_view, double, std::less<>> score_of;
    for (const auto& s : scores) score_of.emplace(s.address, s.pbls);
    std::vector<double> xs, ys;
    for (const auto& r : records) {
        auto it = score_of.find(r.address);
        if (it == score_of.end()) continue;
        xs.push_back(it->second);
        ys.push_back(r.pnl);
    }
    const std::size_t n = xs.size();
    if (n < 3) throw Error(ErrorCode::InsufficientData, "P&L regression needs at least 3 joined rows");
    const double dn = static_cast<double>(n);
    CompensatedSum sx, sy;
    for (std::size_t i = 0; i < n; ++i) {
        sx += xs[i];
        sy += ys[i];
    }
    const double mx = sx.value() / dn;
    const double my = sy.value() / dn;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx == 0.0) throw Error(ErrorCode::ZeroVariance, "pbls is constant across joined rows");
    PnlRegression reg;
    reg.n = n;
    reg.level = level;
    reg.beta1 = sxy / sxx;
    reg.beta0 = my - reg.beta1 * mx;
    double ssr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = ys[i] - reg.beta0 - reg.beta1 * xs[i];
        ssr += e * e;
    }
    const double df = dn - 2.0;
    reg.beta1_se = std::sqrt(ssr / df / sxx);
    boost::math::students_t dist(df);
    const double q = boost::math::quantile(dist, 0.5 + level / 2.0);
    reg.ci_low = reg.beta1 - q * reg.beta1_se;
    reg.ci_high = reg.beta1 + q * reg.beta1_se;
    if (reg.beta1_se > 0.0)
        reg.p_value = student_sf2(reg.beta1 / reg.beta1_se, df);
    else
        reg.p_value = reg.beta1 == 0.0 ? 1.0 : 0.0;
    return reg;
}

std::vector<PanelObservation> build_panel(std::span<const ingest::BettingRecord> trades,
                                          std::span<const pbls::LeaningScore> scores, const PanelOptions& options) {
    if (options.interval <= 0) throw Error(ErrorCode::InvalidConfig, "panel interval must be positive");
    if (options.split > options.end) throw Error(ErrorCode::InvalidConfig, "split time is after end time");

    std::vector<ingest::BettingRecord> sorted;
    for (const auto& t : trades)
        if (t.outcome == options.dem_label || t.outcome == options.rep_label) sorted.push_back(t);
    if (sorted.empty()) throw Error(ErrorCode::NoTrades, "no trades on the party outcomes");
    std::sort(sorted.begin(), sorted.end(), ingest::record_less);

    const Timestamp start = options.start.value_or(floor_to_day(sorted.front().timestamp));
    std::vector<Timestamp> points;
    for (Timestamp t = options.end; t >= start; t -= options.interval) points.push_back(t);
    std::reverse(points.begin(), points.end());

    struct PriceTrack {
        std::vector<Timestamp> times;
        std::vector<double> prices;
        std::optional<double> at(Timestamp t) const {
            if (times.empty()) return std::nullopt;
            auto it = std::upper_bound(times.begin(), times.end(), t);
            if (it == times.begin()) return prices.front();
            return prices[static_cast<std::size_t>(it - times.begin()) - 1];
        }
    };
    PriceTrack dem, rep;
    struct Holding {
        std::vector<Timestamp> times;
        std::vector<double> dem, rep;
    };
    std::map<std::string, Holding, std::less<>> holdings;
    std::map<std::string, std::pair<CompensatedSum, CompensatedSum>, std::less<>> running;
    for (const auto& t : sorted) {
        const bool is_dem = t.outcome == options.dem_label;
        auto& track = is_dem ? dem : rep;
        track.times.push_back(t.timestamp);
        track.prices.push_back(t.price);
        auto& [d, r] = running[t.address];
        const double signed_shares = t.side == ingest::Side::Buy ? t.shares : -t.shares;
        (is_dem ? d : r) += signed_shares;
        auto& h = holdings[t.address];
        h.times.push_back(t.timestamp);
        h.dem.push_back(d.value());
        h.rep.push_back(r.value());
    }

    std::vector<PanelObservation> rows;
    std::vector<const pbls::LeaningScore*> ordered;
    for (const auto& s : scores)
        if (holdings.contains(s.address)) ordered.push_back(&s);
    std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->address < b->address; });
    ordered.erase(std::unique(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->address == b->address; }),
                  ordered.end());

    rows.reserve(ordered.size() * points.size());
    for (const auto* s : ordered) {
        const auto& h = holdings.at(s->address);
        for (Timestamp t : points) {
            PanelObservation o;
            o.address = s->address;
            o.time = t;
            auto dp = dem.at(t);
            auto rp = rep.at(t);
            o.dem_price = dp ? *dp : 1.0 - *rp;
            o.rep_price = rp ? *rp : 1.0 - *dp;
            auto it = std::upper_bound(h.times.begin(), h.times.end(), t);
            if (it != h.times.begin()) {
                const auto i = static_cast<std::size_t>(it - h.times.begin()) - 1;
                o.dem_holding = h.dem[i];
                o.rep_holding = h.rep[i];
            }
            o.pbls = s->pbls;
            o.after_split = t > options.split;
            rows.push_back(std::move(o));
        }
    }
    return rows;
}

std::string_view to_string(Side side) { return side == Side::Democratic ? "dem" : "rep"; }

std::string_view to_string(Period period) {
    switch (period) {
    case Period::Total: return "total";
    case Period::Before: return "before";
    case Period::After: return "after";
    }
    return "total";
}

PanelDesign make_design(std::span<const PanelObservation> rows, Side side, Period period) {
    std::vector<const PanelObservation*> kept;
    for (const auto& r : rows) {
        if (period == Period::Before && r.after_split) continue;
        if (period == Period::After && !r.after_split) continue;
        kept.push_back(&r);
    }
    PanelDesign d;
    d.names = {"const", "pbls", "price", "pbls_x_price"};
    const auto n = static_cast<Eigen::Index>(kept.size());
    d.y.resize(n);
    d.x.resize(n, 4);
    std::map<std::string_view, std::size_t, std::less<>> ids;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = *kept[static_cast<std::size_t>(i)];
        const double price = side == Side::Democratic ? r.dem_price : r.rep_price;
        d.y(i) = side == Side::Democratic ? r.dem_holding : r.rep_holding;
        d.x(i, 0) = 1.0;
        d.x(i, 1) = r.pbls;
        d.x(i, 2) = price;
        d.x(i, 3) = r.pbls * price;
        auto [it, _] = ids.emplace(r.address, ids.size());
        d.entity.push_back(it->second);
    }
    d.entities = ids.size();
    return d;
}

RandomEffectsFit random_effects(const PanelDesign& design, const RandomEffectsOptions& options) {
    const Eigen::Index n = design.y.size();
    const Eigen::Index k = design.x.cols();
    const auto ne = design.entities;
    if (design.x.rows() != n || design.entity.size() != static_cast<std::size_t>(n))
        throw Error(ErrorCode::LengthMismatch, "panel design dimensions disagree");
    if (options.forced_lambda && !(*options.forced_lambda >= 0.0 && *options.forced_lambda <= 1.0))
        throw Error(ErrorCode::InvalidConfig, "forced lambda must lie in [0, 1]");

    std::vector<std::size_t> counts(ne, 0);
    for (auto e : design.entity) {
        if (e >= ne) throw Error(ErrorCode::InvalidConfig, "entity index out of range");
        ++counts[e];
    }
    const auto multi = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c >= 2; });
    if (multi < 2) throw Error(ErrorCode::InsufficientPanel, "need at least 2 entities with 2 or more observations");
    if (std::find(counts.begin(), counts.end(), std::size_t{0}) != counts.end())
        throw Error(ErrorCode::InvalidConfig, "entity without observations");

    const auto en = static_cast<Eigen::Index>(ne);
    Eigen::MatrixXd xbar = Eigen::MatrixXd::Zero(en, k);
    Eigen::VectorXd ybar = Eigen::VectorXd::Zero(en);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto e = static_cast<Eigen::Index>(design.entity[static_cast<std::size_t>(i)]);
        xbar.row(e) += design.x.row(i);
        ybar(e) += design.y(i);
    }
    for (Eigen::Index e = 0; e < en; ++e) {
        const double c = static_cast<double>(counts[static_cast<std::size_t>(e)]);
        xbar.row(e) /= c;
        ybar(e) /= c;
    }

    Eigen::MatrixXd xw(n, k);
    Eigen::VectorXd yw(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto e = static_cast<Eigen::Index>(design.entity[static_cast<std::size_t>(i)]);
        xw.row(i) = design.x.row(i) - xbar.row(e);
        yw(i) = design.y(i) - ybar(e);
    }

    bool has_const = false;
    for (Eigen::Index j = 0; j < k; ++j)
        if ((design.x.col(j).array() == 1.0).all()) has_const = true;

    RandomEffectsFit fit;
    fit.names = design.names;
    fit.n_obs = static_cast<std::size_t>(n);
    fit.n_entities = ne;
    fit.min_obs = *std::min_element(counts.begin(), counts.end());
    fit.max_obs = *std::max_element(counts.begin(), counts.end());

    const double df_within = static_cast<double>(n) - static_cast<double>(ne) - static_cast<double>(k - (has_const ? 1 : 0));
    const double df_between = static_cast<double>(ne) - static_cast<double>(k);
    const bool estimable = df_within > 0.0 && df_between > 0.0;
    if (!options.forced_lambda && !estimable)
        throw Error(ErrorCode::InsufficientPanel, "too few observations or entities for the variance components");
    if (estimable) {
        const auto within = ols(xw, yw);
        const auto between = ols(xbar, ybar);
        fit.sigma_eps2 = within.resid.squaredNorm() / df_within;
        double inv_sum = 0.0;
        for (auto c : counts) inv_sum += 1.0 / static_cast<double>(c);
        const double t_bar = static_cast<double>(ne) / inv_sum;
        fit.sigma_delta2 = std::max(0.0, between.resid.squaredNorm() / df_between - fit.sigma_eps2 / t_bar);
    }

    std::vector<double> lambda(ne);
    for (std::size_t e = 0; e < ne; ++e) {
        if (options.forced_lambda) {
            lambda[e] = *options.forced_lambda;
            continue;
        }
        const double denom = fit.sigma_eps2 + static_cast<double>(counts[e]) * fit.sigma_delta2;
        lambda[e] = denom > 0.0 ? 1.0 - std::sqrt(fit.sigma_eps2 / denom) : 0.0;
    }

    Eigen::MatrixXd xs(n, k);
    Eigen::VectorXd ys(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto e = design.entity[static_cast<std::size_t>(i)];
        const auto ei = static_cast<Eigen::Index>(e);
        xs.row(i) = design.x.row(i) - lambda[e] * xbar.row(ei);
        ys(i) = design.y(i) - lambda[e] * ybar(ei);
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
    const Eigen::Index rank = qr.rank();
    if (rank < k && !options.forced_lambda) throw Error(ErrorCode::SingularGLS, "GLS design is rank deficient");
    if (rank == 0) throw Error(ErrorCode::SingularGLS, "GLS design has no identified column");
    std::vector<Eigen::Index> kept;
    for (Eigen::Index j = 0; j < rank; ++j) kept.push_back(qr.colsPermutation().indices()(j));
    std::sort(kept.begin(), kept.end());
    Eigen::MatrixXd xk(n, static_cast<Eigen::Index>(kept.size()));
    for (std::size_t j = 0; j < kept.size(); ++j) xk.col(static_cast<Eigen::Index>(j)) = xs.col(kept[j]);

    const auto reduced = ols(xk, ys);
    const double df = static_cast<double>(n - rank);
    const double ssr = reduced.resid.squaredNorm();
    const double s2 = df > 0.0 ? ssr / df : std::numeric_limits<double>::quiet_NaN();
    const Eigen::MatrixXd xtx = xk.transpose() * xk;
    const Eigen::MatrixXd cov =
        s2 * xtx.ldlt().solve(Eigen::MatrixXd::Identity(xtx.rows(), xtx.cols()));

    const auto ku = static_cast<std::size_t>(k);
    fit.coefficients.assign(ku, 0.0);
    fit.std_errors.assign(ku, std::numeric_limits<double>::quiet_NaN());
    fit.t_stats.assign(ku, std::numeric_limits<double>::quiet_NaN());
    fit.p_values.assign(ku, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t j = 0; j < kept.size(); ++j) {
        const auto c = static_cast<std::size_t>(kept[j]);
        const auto jj = static_cast<Eigen::Index>(j);
        fit.coefficients[c] = reduced.beta(jj);
        fit.std_errors[c] = std::sqrt(cov(jj, jj));
        fit.t_stats[c] = fit.coefficients[c] / fit.std_errors[c];
        fit.p_values[c] = df > 0.0 ? student_sf2(fit.t_stats[c], df) : std::numeric_limits<double>::quiet_NaN();
    }

    Eigen::VectorXd beta(k);
    for (Eigen::Index j = 0; j < k; ++j) beta(j) = fit.coefficients[static_cast<std::size_t>(j)];
    const double tss = (ys.array() - ys.mean()).square().sum();
    fit.r2 = tss > 0.0 ? 1.0 - ssr / tss : 0.0;
    fit.r2_overall = squared_correlation(design.y, design.x * beta);
    fit.r2_within = squared_correlation(yw, xw * beta);
    fit.r2_between = squared_correlation(ybar, xbar * beta);
    return fit;
}

} // namespace polylean::casestudy
