#include "polylean/accuracy.hpp"
#include "polylean/error.hpp"
#include "polylean/rng.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace polylean;
using ingest::Side;

namespace {

std::vector<double> ewma_oracle(const std::vector<double>& s, double decay) {
    std::vector<double> out;
    for (std::size_t n = 0; n < s.size(); ++n) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i <= n; ++i) {
            const double w = std::pow(decay, static_cast<double>(n - i));
            num += w * s[i];
            den += w;
        }
        out.push_back(num / den);
    }
    return out;
}

std::vector<std::pair<Timestamp, double>> series(const std::vector<double>& s) {
    std::vector<std::pair<Timestamp, double>> out;
    for (std::size_t i = 0; i < s.size(); ++i) out.emplace_back(static_cast<Timestamp>(i), s[i]);
    return out;
}

} // namespace

TEST_CASE("dls examples") {
    CHECK(accuracy::dls(0.5, true) == 0.0);
    CHECK(accuracy::dls(0.5, false) == 0.0);
    CHECK(accuracy::dls(1.0, true) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(accuracy::dls(1.0, true) <= 1.0);
    CHECK(accuracy::dls(0.25, true) == -1.0);
    CHECK(accuracy::dls(0.0, true) == doctest::Approx(std::log2(1e-9) + 1.0));
}

TEST_CASE("dls complement symmetry and monotonicity") {
    Rng r(1);
    double prev_true = -1e9, prev_false = 1e9;
    for (int i = 0; i <= 1000; ++i) {
        const double p = i / 1000.0;
        CHECK(accuracy::dls(p, true) == doctest::Approx(accuracy::dls(1.0 - p, false)).epsilon(1e-12));
        CHECK(accuracy::dls(p, true) >= prev_true);
        CHECK(accuracy::dls(p, false) <= prev_false);
        CHECK(accuracy::dls(p, true) <= 1.0);
        prev_true = accuracy::dls(p, true);
        prev_false = accuracy::dls(p, false);
    }
}

TEST_CASE("final probability reads the last trade before close") {
    auto m = test::market("m1", "e1", {}, "Yes", 1000);
    const std::vector<ingest::BettingRecord> yes{test::trade("a", 10, "u", "Yes", Side::Buy, 1, 0.8)};
    CHECK(accuracy::final_probability(m, yes) == 0.8);
    const std::vector<ingest::BettingRecord> no{test::trade("a", 10, "u", "No", Side::Buy, 1, 0.3)};
    CHECK(accuracy::final_probability(m, no) == doctest::Approx(0.7).epsilon(1e-15));
    const std::vector<ingest::BettingRecord> late{test::trade("a", 2000, "u", "Yes", Side::Buy, 1, 0.8)};
    CHECK_THROWS_AS(accuracy::final_probability(m, late), Error);
    auto open = test::market("m1", "e1");
    CHECK_THROWS_AS(accuracy::final_probability(open, yes), Error);
}

TEST_CASE("final probability matches a linear-scan oracle") {
    Rng r(21);
    for (int trial = 0; trial < 200; ++trial) {
        const Timestamp close = 500;
        auto m = test::market("m1", "e1", {}, r.below(2) ? "Yes" : "No", close);
        std::vector<ingest::BettingRecord> trades;
        const auto n = 1 + r.below(30);
        for (std::uint64_t i = 0; i < n; ++i)
            trades.push_back(test::trade("tx" + std::to_string(r.below(1000000)), r.integer(0, 700), "u",
                                         r.below(2) ? "Yes" : "No", Side::Buy, 1, r.uniform()));
        const ingest::BettingRecord* best = nullptr;
        for (const auto& t : trades) {
            if (t.timestamp > close) continue;
            if (!best || t.timestamp > best->timestamp || (t.timestamp == best->timestamp && t.tx_hash > best->tx_hash))
                best = &t;
        }
        if (!best) {
            CHECK_THROWS_AS(accuracy::final_probability(m, trades), Error);
            continue;
        }
        const double expected = best->outcome == *m.resolved_outcome ? best->price : 1.0 - best->price;
        CHECK(accuracy::final_probability(m, trades) == expected);
    }
}

TEST_CASE("ewma examples") {
    auto single = accuracy::ewma_series(series({0.3}));
    REQUIRE(single.size() == 1);
    CHECK(single[0].ewma == 0.3);
    auto two = accuracy::ewma_series(series({1.0, 0.0}));
    CHECK(two[1].ewma == doctest::Approx(0.95 / 1.95).epsilon(1e-15));
    CHECK(two[1].ewma == doctest::Approx(0.487179).epsilon(1e-6));
    CHECK_THROWS_AS(accuracy::ewma_series({}), Error);
}

TEST_CASE("ewma matches the quadratic oracle and stays within prefix bounds") {
    Rng r(4);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> s(1 + r.below(50));
        for (auto& v : s) v = r.uniform(-5, 1);
        const auto got = accuracy::ewma_series(series(s));
        const auto want = ewma_oracle(s, 0.95);
        double lo = s[0], hi = s[0];
        for (std::size_t i = 0; i < s.size(); ++i) {
            lo = std::min(lo, s[i]);
            hi = std::max(hi, s[i]);
            CHECK(std::abs(got[i].ewma - want[i]) <= 1e-12);
            CHECK(got[i].ewma >= lo - 1e-12);
            CHECK(got[i].ewma <= hi + 1e-12);
            CHECK(got[i].time == static_cast<Timestamp>(i));
        }
    }
}

TEST_CASE("accuracy regression exact fit and degenerate design") {
    // With both regressors already in [0, 1] at their extremes, min-max
    // scaling is the identity.
    std::vector<accuracy::AccuracyPoint> pts;
    const double xs[][2] = {{0, 0}, {1, 1}, {0.5, 0.2}, {0.3, 0.9}, {0.8, 0.4}, {0.1, 0.6}};
    for (const auto& x : xs) pts.push_back({2 * x[0] - x[1] + 0.1, x[1], x[0]});
    const auto fit = accuracy::accuracy_regression(pts);
    CHECK(fit.r2 == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(fit.coef_volume == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(fit.coef_participants == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(fit.intercept == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(fit.n == 6);

    for (auto& p : pts) p.volume = 7.0;
    try {
        accuracy::accuracy_regression(pts);
        FAIL("expected DegenerateDesign");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DegenerateDesign);
    }
    pts.resize(3);
    CHECK_THROWS_AS(accuracy::accuracy_regression(pts), Error);
}

TEST_CASE("accuracy regression r2 lies in [0, 1]") {
    Rng r(9);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<accuracy::AccuracyPoint> pts(4 + r.below(40));
        for (auto& p : pts) p = {r.uniform(-3, 1), static_cast<double>(1 + r.below(100)), r.uniform(0, 1e6)};
        try {
            const auto fit = accuracy::accuracy_regression(pts);
            CHECK(fit.r2 >= -1e-10);
            CHECK(fit.r2 <= 1.0 + 1e-10);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::DegenerateDesign);
        }
    }
}

TEST_CASE("score_markets counts participants and volume, skips untraded markets") {
    using test::trade;
    std::vector<ingest::BettingRecord> records{
        trade("1", 10, "alice", "Yes", Side::Buy, 10, 0.6, "m1"),
        trade("2", 20, "bob", "No", Side::Buy, 10, 0.25, "m1"),
        trade("3", 30, "alice", "Yes", Side::Buy, 2, 0.5, "m2"),
        trade("4", 5000, "carol", "Yes", Side::Buy, 2, 0.5, "m3"),
    };
    std::vector<ingest::MarketMeta> markets{test::market("m1", "e1", 1, "Yes", 100), test::market("m2", "e2", 2),
                                            test::market("m3", "e1", 1, "No", 100)};
    const auto ds = ingest::build_dataset(records, markets, {{"e1", 5481, "x"}, {"e2", 7, "y"}});
    const auto report = accuracy::score_markets(ds);
    REQUIRE(report.markets.size() == 1);
    const auto& m = report.markets[0];
    CHECK(m.market_id == "m1");
    CHECK(m.final_probability == 0.75);
    CHECK(m.dls == doctest::Approx(std::log2(0.75) + 1.0).epsilon(1e-15));
    CHECK(m.participants == 2);
    CHECK(m.volume == doctest::Approx(8.5));
    CHECK(report.skipped == std::vector<std::string>{"m3"});

    accuracy::ScoreOptions only_other;
    only_other.category = 7;
    CHECK(accuracy::score_markets(ds, only_other).markets.empty());
    accuracy::ScoreOptions political;
    political.category = 5481;
    CHECK(accuracy::score_markets(ds, political).markets.size() == 1);
}
