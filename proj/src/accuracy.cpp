#include "polylean/accuracy.hpp"

#include "polylean/error.hpp"
#include "polylean/numeric.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

namespace polylean::accuracy {

double dls(double p, bool occurred) {
    const double q = std::clamp(occurred ? p : 1.0 - p, kProbabilityClamp, 1.0 - kProbabilityClamp);
    return std::log2(q) + 1.0;
}

double final_probability(const ingest::MarketMeta& market, std::span<const ingest::BettingRecord> trades) {
    if (!market.resolved_outcome || !market.close_time)
        throw Error(ErrorCode::NotResolved, "market " + market.market_id + " is not resolved");
    const ingest::BettingRecord* last = nullptr;
    for (const auto& t : trades) {
        if (t.market_id != market.market_id || t.timestamp > *market.close_time) continue;
        if (!last || ingest::record_less(*last, t)) last = &t;
    }
    if (!last) throw Error(ErrorCode::NoTrades, "market " + market.market_id + " has no trade before close");
    return last->outcome == *market.resolved_outcome ? last->price : 1.0 - last->price;
}

ScoreReport score_markets(const ingest::Dataset& dataset, const ScoreOptions& options) {
    ScoreReport report;
    for (const auto& [id, market] : dataset.markets()) {
        if (!market.resolved_outcome) continue;
        if (options.category) {
            const auto* event = dataset.event(market.event_id);
            const bool match = market.category_id == options.category ||
                               (event != nullptr && event->category_id == *options.category);
            if (!match) continue;
        }
        const auto trades = dataset.trades_of_market(id);
        double p = 0.0;
        try {
            p = final_probability(market, trades);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NoTrades) throw;
            report.skipped.push_back(id);
            continue;
        }
        std::set<std::string_view> addresses;
        CompensatedSum volume;
        for (const auto& t : trades) {
            addresses.insert(t.address);
            volume += t.usdc_size;
        }
        report.markets.push_back({id, *market.close_time, p, dls(p, true), addresses.size(), volume.value()});
    }
    std::sort(report.markets.begin(), report.markets.end(), [](const MarketAccuracy& a, const MarketAccuracy& b) {
        return std::tie(a.resolution_time, a.market_id) < std::tie(b.resolution_time, b.market_id);
    });
    return report;
}

std::vector<EwmaPoint> ewma_series(std::span<const std::pair<Timestamp, double>> scores, double decay) {
    if (scores.empty()) throw Error(ErrorCode::EmptyInput, "EWMA needs at least one score");
    if (!(decay > 0.0 && decay <= 1.0)) throw Error(ErrorCode::InvalidConfig, "decay must lie in (0, 1]");
    std::vector<EwmaPoint> out;
    out.reserve(scores.size());
    double numerator = 0.0;
    double denominator = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (i > 0 && scores[i].first < scores[i - 1].first)
            throw Error(ErrorCode::InvalidConfig, "scores must be sorted by resolution time");
        numerator = decay * numerator + scores[i].second;
        denominator = decay * denominator + 1.0;
        out.push_back({scores[i].first, numerator / denominator});
    }
    return out;
}

AccuracyRegression accuracy_regression(std::span<const AccuracyPoint> points) {
    const auto n = points.size();
    if (n < 4) throw Error(ErrorCode::InsufficientData, "accuracy regression needs at least 4 points");
    auto range = [&](auto field) {
        auto [lo, hi] = std::minmax_element(points.begin(), points.end(),
                                            [&](const auto& a, const auto& b) { return a.*field < b.*field; });
        return std::pair{(*lo).*field, (*hi).*field};
    };
    const auto [vol_lo, vol_hi] = range(&AccuracyPoint::volume);
    const auto [part_lo, part_hi] = range(&AccuracyPoint::participants);
    if (!(vol_hi > vol_lo) || !(part_hi > part_lo))
        throw Error(ErrorCode::DegenerateDesign, "volume or participants column is constant");

    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 3);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        x(r, 0) = 1.0;
        x(r, 1) = (points[i].volume - vol_lo) / (vol_hi - vol_lo);
        x(r, 2) = (points[i].participants - part_lo) / (part_hi - part_lo);
        y(r) = points[i].ewma;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < 3) throw Error(ErrorCode::DegenerateDesign, "volume and participants are collinear");
    const Eigen::VectorXd beta = qr.solve(y);
    const Eigen::VectorXd resid = y - x * beta;
    const double ssr = resid.squaredNorm();
    const double sst = (y.array() - y.mean()).square().sum();

    AccuracyRegression reg;
    reg.intercept = beta(0);
    reg.coef_volume = beta(1);
    reg.coef_participants = beta(2);
    reg.r2 = sst > 0.0 ? 1.0 - ssr / sst : 1.0;
    reg.n = n;
    return reg;
}

} // namespace polylean::accuracy
