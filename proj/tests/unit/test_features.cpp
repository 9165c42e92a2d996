#include "polylean/error.hpp"
#include "polylean/features.hpp"
#include "polylean/rng.hpp"
#include "polylean/validation.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

using namespace polylean;
using features::FeatureVector;
using features::Level;
using ingest::Side;

namespace {

constexpr Timestamp kT0 = 1'700'000'000;

// e1: political (5481), markets m1 (cat 1001, resolved Yes) and m4 (cat 1001, open).
// e2: category 100, markets m2 (cat 2002, resolved No) and m3 (cat 2002, open).
// e3: category 300, market m5 without a category.
std::vector<ingest::MarketMeta> fixture_markets() {
    return {test::market("m1", "e1", 1001, "Yes", kT0 + 100 * kSecondsPerDay),
            test::market("m2", "e2", 2002, "No", kT0 + 100 * kSecondsPerDay), test::market("m3", "e2", 2002),
            test::market("m4", "e1", 1001), test::market("m5", "e3")};
}

std::vector<ingest::EventMeta> fixture_events() { return {{"e1", 5481, "Election"}, {"e2", 100, "Sports"}, {"e3", 300, "Misc"}}; }

features::CatalogConfig fixture_config() {
    features::CatalogConfig c;
    c.event_categories = {5481, 100, 300};
    c.market_categories = {1001, 2002};
    return c;
}

ingest::BettingRecord tr(std::string tx, Timestamp t, std::string market, std::string outcome, Side side,
                         double shares, double price, std::string address = "alice") {
    const std::string event = market == "m1" || market == "m4" ? "e1" : market == "m5" ? "e3" : "e2";
    return test::trade(std::move(tx), t, std::move(address), std::move(outcome), side, shares, price,
                       std::move(market), event);
}

struct Fixture {
    ingest::Dataset ds;
    features::FeatureContext ctx;

    explicit Fixture(std::vector<ingest::BettingRecord> records, features::CatalogConfig cfg = fixture_config())
        : ds(ingest::build_dataset(std::move(records), fixture_markets(), fixture_events())), ctx(ds, std::move(cfg)) {}

    std::vector<ingest::BettingRecord> of(const std::string& address) const {
        return ds.select(ds.by_address().at(address));
    }
};

std::optional<double> get(const FeatureVector& f, const std::string& name) {
    auto it = f.find(name);
    if (it == f.end()) return std::nullopt;
    return it->second;
}

std::string ev(std::int64_t cat, std::string_view metric) { return features::feature_name(Level::Event, cat, metric); }
std::string mk(std::int64_t cat, std::string_view metric) { return features::feature_name(Level::Market, cat, metric); }
std::string user(std::string_view metric) { return features::user_feature(metric); }

std::vector<ingest::BettingRecord> random_records(Rng& r, std::size_t n, std::size_t addresses) {
    const char* markets[] = {"m1", "m2", "m3", "m4", "m5"};
    std::vector<ingest::BettingRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        const char* outcome = r.below(5) == 0 ? "Maybe" : (r.below(2) ? "Yes" : "No");
        out.push_back(tr("tx" + std::to_string(i), kT0 + r.integer(-400, 400) * kSecondsPerDay / 4, markets[r.below(5)],
                         outcome, r.below(3) ? Side::Buy : Side::Sell, std::round(r.uniform(0, 200) * 100) / 100,
                         std::round(r.uniform(0.01, 0.99) * 100) / 100, "addr" + std::to_string(r.below(addresses))));
    }
    return out;
}

} // namespace

TEST_CASE("feature names are canonical") {
    CHECK(features::feature_name(Level::Market, 5482, "buyFreq") == "market.5482.buyFreq");
    CHECK(features::user_feature("volumeTraded") == "user.global.volumeTraded");
    CHECK(features::feature_name(Level::Event, 5481, "successRate") == "event.5481.successRate");
}

TEST_CASE("catalog size follows the configured category sets") {
    features::CatalogConfig empty;
    const auto base = features::make_catalog(empty);
    CHECK(base.size() == 26);
    for (auto level : base.levels) CHECK(level == Level::User);
    const auto full = features::make_catalog(fixture_config());
    CHECK(full.size() == 26 + 13 * 5);
    CHECK(std::set<std::string>(full.names.begin(), full.names.end()).size() == full.size());
    auto more = fixture_config();
    more.anchors.push_back({"2020", 1604361600});
    CHECK(features::make_catalog(more).size() == full.size() + 4);
}

TEST_CASE("catalog config parsing") {
    const auto c = features::parse_catalog_config(
        R"({"event_categories":[5481,7],"market_categories":[1],"anchors":{"mid":"2022-11-08"},"hhi_squared":true})");
    CHECK(c.event_categories == std::vector<std::int64_t>{5481, 7});
    REQUIRE(c.anchors.size() == 1);
    CHECK(c.anchors[0].second == 1667865600);
    CHECK(c.hhi_squared);
    CHECK_THROWS_AS(features::parse_catalog_config(R"({"event_categories":"x"})"), Error);
}

TEST_CASE("basic features") {
    Fixture one({tr("a", kT0, "m2", "Yes", Side::Buy, 20, 0.5)});
    const auto f = features::basic_features(one.of("alice"), one.ctx);
    CHECK(get(f, user("volumeTraded")) == 10.0);
    CHECK(get(f, user("activityNum")) == 1.0);
    CHECK(get(f, user("eventsTraded")) == 1.0);
    CHECK(get(f, user("createdAt")) == static_cast<double>(kT0));
    // m2 resolved No: the Yes position is worthless.
    CHECK(get(f, user("realizedProfit")) == -10.0);

    Fixture two({tr("a", kT0, "m3", "Yes", Side::Buy, 2, 0.5), tr("b", kT0 + 5, "m3", "No", Side::Sell, 2, 0.5)});
    const auto g = features::basic_features(two.of("alice"), two.ctx);
    CHECK(get(g, user("marketsTraded")) == 1.0);
    CHECK(get(g, user("activityNum")) == 2.0);
    CHECK(get(g, user("realizedProfit")) == 0.0);
}

TEST_CASE("basic features match a naive recount") {
    Rng r(1);
    Fixture fx(random_records(r, 100, 1));
    const auto trades = fx.of("addr0");
    const auto f = features::basic_features(trades, fx.ctx);
    double volume = 0;
    Timestamp first = trades[0].timestamp;
    std::set<std::string> events, markets;
    for (const auto& t : trades) {
        volume += t.usdc_size;
        first = std::min(first, t.timestamp);
        events.insert(t.event_id);
        markets.insert(t.market_id);
    }
    CHECK(*get(f, user("volumeTraded")) == doctest::Approx(volume).epsilon(1e-12));
    CHECK(get(f, user("activityNum")) == 100.0);
    CHECK(get(f, user("eventsTraded")) == static_cast<double>(events.size()));
    CHECK(get(f, user("marketsTraded")) == static_cast<double>(markets.size()));
    CHECK(get(f, user("createdAt")) == static_cast<double>(first));
}

TEST_CASE("participation features") {
    Fixture fx({tr("a", kT0, "m1", "Yes", Side::Buy, 1, 0.5), tr("b", kT0 + 1, "m2", "Yes", Side::Buy, 1, 0.5),
                tr("c", kT0 + 2, "m3", "Yes", Side::Buy, 1, 0.5), tr("d", kT0 + 3, "m3", "No", Side::Buy, 1, 0.5)});
    const auto f = features::participation_features(fx.of("alice"), fx.ctx);
    CHECK(get(f, ev(5481, "categoryRatio")) == 0.25);
    CHECK(get(f, ev(5481, "categoryCount")) == 1.0);
    CHECK(get(f, ev(300, "categoryCount")) == 0.0);
    CHECK(get(f, ev(300, "categoryRatio")) == 0.0);
    CHECK(*get(f, ev(5481, "categoryRatio")) + *get(f, ev(100, "categoryRatio")) + *get(f, ev(300, "categoryRatio")) ==
          1.0);
    CHECK(*get(f, mk(1001, "categoryRatio")) + *get(f, mk(2002, "categoryRatio")) == 1.0);
}

TEST_CASE("trading behavior features") {
    Fixture fx({tr("a", kT0, "m1", "Yes", Side::Buy, 10, 0.5), tr("b", kT0 + 1, "m4", "Yes", Side::Buy, 4, 0.5),
                tr("c", kT0 + 2, "m2", "Yes", Side::Buy, 6, 0.5), tr("d", kT0 + 3, "m3", "No", Side::Sell, 2, 0.5),
                tr("e", kT0 + 4, "m3", "No", Side::Sell, 2, 0.25)});
    const auto f = features::trading_behavior_features(fx.of("alice"), fx.ctx);
    CHECK(get(f, ev(5481, "buyFreq")) == 1.0);
    CHECK(get(f, ev(5481, "sellFreq")) == 0.0);
    CHECK(get(f, ev(5481, "buyAmount")) == 7.0);
    CHECK(get(f, ev(100, "buyFreq")) == doctest::Approx(1.0 / 3.0));
    CHECK(get(f, ev(100, "sellFreq")) == doctest::Approx(2.0 / 3.0));
    CHECK(get(f, ev(100, "sellAmount")) == 1.5);
    CHECK(get(f, ev(100, "amount")) == 4.5);
    CHECK_FALSE(get(f, ev(300, "buyFreq")).has_value());
    CHECK_FALSE(get(f, ev(300, "buyAmount")).has_value());
}

TEST_CASE("success and profitability features") {
    // m1 resolved Yes, m2 resolved No.
    Fixture fx({tr("a", kT0, "m1", "Yes", Side::Buy, 10, 0.4), tr("b", kT0 + 1, "m1", "No", Side::Buy, 5, 0.6),
                tr("c", kT0 + 2, "m1", "No", Side::Sell, 2, 0.6), tr("d", kT0 + 3, "m4", "Yes", Side::Buy, 3, 0.5)});
    const auto f = features::success_profitability_features(fx.of("alice"), fx.ctx);
    // Correct: buy Yes, sell No. Wrong: buy No. The open market m4 does not count.
    CHECK(get(f, ev(5481, "successRate")) == doctest::Approx(2.0 / 3.0));
    // Holdings: +10 on the winner, +5 - 2 = 3 on the loser.
    CHECK(get(f, ev(5481, "profitability")) == 7.0);
    CHECK_FALSE(get(f, ev(100, "successRate")).has_value());
    CHECK_FALSE(get(f, ev(100, "profitability")).has_value());

    Fixture all({tr("a", kT0, "m2", "No", Side::Buy, 1, 0.5), tr("b", kT0, "m2", "Yes", Side::Sell, 1, 0.5)});
    CHECK(get(features::success_profitability_features(all.of("alice"), all.ctx), mk(2002, "successRate")) == 1.0);
}

TEST_CASE("side preference features") {
    Fixture yes({tr("a", kT0, "m2", "Yes", Side::Buy, 4, 0.5)});
    const auto f = features::side_preference_features(yes.of("alice"), yes.ctx);
    CHECK(get(f, ev(100, "yesRatio")) == 1.0);
    CHECK(get(f, ev(100, "noRatio")) == 0.0);
    Fixture even({tr("a", kT0, "m2", "Yes", Side::Buy, 4, 0.5), tr("b", kT0, "m3", "No", Side::Sell, 8, 0.25)});
    const auto g = features::side_preference_features(even.of("alice"), even.ctx);
    CHECK(get(g, ev(100, "yesRatio")) == 0.5);
    CHECK(get(g, ev(100, "noRatio")) == 0.5);
    Fixture other({tr("a", kT0, "m2", "Maybe", Side::Buy, 4, 0.5)});
    const auto h = features::side_preference_features(other.of("alice"), other.ctx);
    CHECK(get(h, ev(100, "yesAmount")) == 0.0);
    CHECK_FALSE(get(h, ev(100, "yesRatio")).has_value());
}

TEST_CASE("time features") {
    Fixture hold({tr("a", kT0, "m3", "Yes", Side::Buy, 10, 0.5),
                  tr("b", kT0 + kSecondsPerDay, "m3", "Yes", Side::Sell, 10, 0.6)});
    const auto f = features::time_features(hold.of("alice"), hold.ctx);
    CHECK(get(f, user("avgHoldingTime")) == 1.0);
    CHECK(get(f, user("avgTradingInterval")) == 1.0);

    // FIFO with partial fills: lots of 4 (day 0) and 6 (day 1), sells of 5 (day 2) and 5 (day 4).
    Fixture fifo({tr("a", kT0, "m3", "Yes", Side::Buy, 4, 0.5), tr("b", kT0 + kSecondsPerDay, "m3", "Yes", Side::Buy, 6, 0.5),
                  tr("c", kT0 + 2 * kSecondsPerDay, "m3", "Yes", Side::Sell, 5, 0.5),
                  tr("d", kT0 + 4 * kSecondsPerDay, "m3", "Yes", Side::Sell, 5, 0.5)});
    // Matched: 4 units held 2 days, 1 held 1 day, 5 held 3 days.
    CHECK(get(features::time_features(fifo.of("alice"), fifo.ctx), user("avgHoldingTime")) ==
          doctest::Approx((4 * 2 + 1 * 1 + 5 * 3) / 10.0));

    features::CatalogConfig anchors = fixture_config();
    anchors.anchors = {{"late", kT0 + 10 * kSecondsPerDay}};
    Fixture single({tr("a", kT0, "m3", "Yes", Side::Buy, 10, 0.5)}, anchors);
    const auto g = features::time_features(single.of("alice"), single.ctx);
    CHECK_FALSE(get(g, user("avgTradingInterval")).has_value());
    CHECK_FALSE(get(g, user("avgHoldingTime")).has_value());
    CHECK(get(g, user("postCount-late")) == 0.0);
    CHECK_FALSE(get(g, user("postAmount-late")).has_value());
    CHECK(get(g, user("preCount-late")) == 1.0);
    CHECK(get(g, user("preAmount-late")) == 5.0);
}

TEST_CASE("risk features") {
    Fixture flat({tr("a", kT0, "m3", "Yes", Side::Buy, 10, 0.5), tr("b", kT0, "m2", "No", Side::Buy, 10, 0.5)});
    const auto f = features::risk_features(flat.of("alice"), flat.ctx);
    CHECK(get(f, user("avgPriceDiff")) == 0.0);
    Fixture single({tr("a", kT0, "m3", "Yes", Side::Buy, 10, 0.9)});
    const auto g = features::risk_features(single.of("alice"), single.ctx);
    CHECK(get(g, user("marketConcentration")) == 1.0);
    CHECK(get(g, user("eventConcentration")) == 1.0);
    CHECK(*get(g, user("avgPriceDiff")) == doctest::Approx(0.4));

    std::vector<ingest::BettingRecord> ten;
    const char* markets[] = {"m1", "m2", "m5", "m1", "m2", "m5", "m1", "m2", "m1", "m4"};
    for (int i = 0; i < 10; ++i) ten.push_back(tr("t" + std::to_string(i), kT0 + i, markets[i], "Yes", Side::Buy, 1, 0.7));
    Fixture fx(ten);
    const auto h = features::risk_features(fx.of("alice"), fx.ctx);
    CHECK(get(h, user("marketConcentration")) == 0.3);
    CHECK(get(h, user("eventConcentration")) == 0.3);
    CHECK(*get(h, user("volWeightedAvgPriceDiff")) == doctest::Approx(0.2));

    auto hhi = fixture_config();
    hhi.hhi_squared = true;
    Fixture sq(ten, hhi);
    // Market categories: 1001 x5, 2002 x3, missing x2.
    CHECK(*get(features::risk_features(sq.of("alice"), sq.ctx), user("marketConcentration")) ==
          doctest::Approx(0.25 + 0.09 + 0.04));
}

TEST_CASE("combination features") {
    Fixture fx({tr("a", kT0, "m1", "Yes", Side::Buy, 50, 0.5), tr("b", kT0, "m1", "No", Side::Sell, 50, 0.5),
                tr("c", kT0, "m2", "Yes", Side::Buy, 50, 0.5), tr("d", kT0, "m3", "Yes", Side::Buy, 50, 0.5)});
    FeatureVector partial;
    for (auto* g : {&features::basic_features, &features::trading_behavior_features,
                    &features::success_profitability_features, &features::participation_features})
        partial.merge(g(fx.of("alice"), fx.ctx));
    const auto f = features::combination_features(partial, fx.ctx);
    CHECK(get(f, user("avgTradeAmount")) == 25.0);
    CHECK(get(f, user("avgAmountPerMarket")) == doctest::Approx(100.0 / 3.0));
    CHECK(get(f, user("avgAmountPerEvent")) == 50.0);
    // Political category: both trades correct, buy + sell frequencies sum to 1.
    CHECK(get(f, user("accFreqProduct")) == 1.0);
    CHECK(get(f, user("accFreqProductAlt")) == 2.0);

    Fixture open({tr("a", kT0, "m4", "Yes", Side::Buy, 50, 0.5)});
    FeatureVector p2 = features::basic_features(open.of("alice"), open.ctx);
    p2.merge(features::trading_behavior_features(open.of("alice"), open.ctx));
    CHECK_FALSE(get(features::combination_features(p2, open.ctx), user("accFreqProduct")).has_value());
}

TEST_CASE("feature identities on random addresses") {
    Rng r(2024);
    Fixture fx(random_records(r, 3000, 200));
    const auto catalog = features::make_catalog(fixture_config());
    for (const auto& [address, _] : fx.ds.by_address()) {
        const auto trades = fx.of(address);
        const auto f = features::address_features(trades, fx.ctx, catalog);
        double event_sum = 0, market_sum = 0;
        std::size_t uncategorized_market = 0;
        for (const auto& t : trades) uncategorized_market += t.market_id == "m5";
        for (auto cat : {5481, 100, 300}) {
            const auto count = *get(f, ev(cat, "categoryCount"));
            event_sum += count;
            const auto buy = get(f, ev(cat, "buyFreq"));
            const auto sell = get(f, ev(cat, "sellFreq"));
            CHECK(buy.has_value() == (count > 0));
            if (buy) CHECK(*buy + *sell == doctest::Approx(1.0).epsilon(1e-15));
            const auto yes = get(f, ev(cat, "yesRatio"));
            if (yes) CHECK(*yes + *get(f, ev(cat, "noRatio")) == doctest::Approx(1.0).epsilon(1e-15));
            if (count == 0) {
                CHECK_FALSE(get(f, ev(cat, "amount")).has_value());
                CHECK_FALSE(get(f, ev(cat, "successRate")).has_value());
            }
        }
        for (auto cat : {1001, 2002}) market_sum += *get(f, mk(cat, "categoryCount"));
        CHECK(event_sum == static_cast<double>(trades.size()));
        CHECK(market_sum + static_cast<double>(uncategorized_market) == static_cast<double>(trades.size()));
        for (const auto& [name, _v] : f) CHECK(std::find(catalog.names.begin(), catalog.names.end(), name) != catalog.names.end());
    }
}

TEST_CASE("feature matrix") {
    Rng r(6);
    auto records = random_records(r, 800, 40);
    const auto ds = ingest::build_dataset(records, fixture_markets(), fixture_events());
    const auto m = features::build_feature_matrix(ds, fixture_config(), 1);
    CHECK(m.addresses.size() == ds.by_address().size());
    CHECK(m.columns == features::make_catalog(fixture_config()).names);
    for (const auto& row : m.values) CHECK(row.size() == m.columns.size());
    CHECK(std::is_sorted(m.addresses.begin(), m.addresses.end()));

    const auto parallel = features::build_feature_matrix(ds, fixture_config(), 4);
    std::reverse(records.begin(), records.end());
    const auto reordered = features::build_feature_matrix(ingest::build_dataset(records, fixture_markets(), fixture_events()),
                                                          fixture_config(), 2);
    for (const auto* other : {&parallel, &reordered}) {
        REQUIRE(other->addresses == m.addresses);
        for (std::size_t i = 0; i < m.values.size(); ++i)
            for (std::size_t j = 0; j < m.columns.size(); ++j) {
                const double a = m.values[i][j], b = other->values[i][j];
                CHECK(((std::isnan(a) && std::isnan(b)) || a == b));
            }
    }

    // Composition: each row equals the per-address feature vector.
    features::FeatureContext ctx(ds, fixture_config());
    const auto catalog = features::make_catalog(fixture_config());
    const auto& address = m.addresses[3];
    const auto f = features::address_features(ds.select(ds.by_address().at(address)), ctx, catalog);
    for (std::size_t j = 0; j < m.columns.size(); ++j) {
        auto it = f.find(m.columns[j]);
        if (it == f.end())
            CHECK(std::isnan(m.values[3][j]));
        else
            CHECK(m.values[3][j] == it->second);
    }

    std::ostringstream os;
    features::write_matrix(os, m);
    std::istringstream is(os.str());
    const auto back = features::read_matrix(is);
    CHECK(back.columns == m.columns);
    CHECK(back.addresses == m.addresses);
    for (std::size_t i = 0; i < m.values.size(); ++i)
        for (std::size_t j = 0; j < m.columns.size(); ++j) {
            const double a = m.values[i][j], b = back.values[i][j];
            CHECK(((std::isnan(a) && std::isnan(b)) || a == b));
        }
    CHECK(m.column_index("user.global.volumeTraded") == 5);
    CHECK(m.column_index("nope") == static_cast<std::size_t>(-1));

    features::CatalogConfig empty;
    const auto only_user = features::build_feature_matrix(ds, empty);
    CHECK(only_user.columns.size() == 26);
}

TEST_CASE("correlation screening") {
    Rng r(10);
    features::FeatureMatrix m;
    m.columns = {"same", "sparse", "noisy", "constant"};
    std::vector<pbls::LeaningScore> scores;
    for (int i = 0; i < 60; ++i) {
        pbls::LeaningScore s;
        s.address = "a" + std::to_string(100 + i);
        s.pbls = r.normal();
        scores.push_back(s);
        m.addresses.push_back(s.address);
        const double noisy = std::round(std::tanh(s.pbls) * 3 + r.normal() * 0.5);
        m.values.push_back({s.pbls, i < 2 ? 1.0 * i : std::nan(""), i % 9 == 0 ? std::nan("") : noisy, 4.0});
    }
    const auto rows = features::correlate_with_pbls(m, scores);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].feature == "same");
    CHECK(rows[0].rho == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(rows[0].significant);
    CHECK(rows[1].feature == "noisy");
    std::vector<double> x, y;
    for (std::size_t i = 0; i < m.addresses.size(); ++i) {
        if (std::isnan(m.values[i][2])) continue;
        x.push_back(m.values[i][2]);
        y.push_back(scores[i].pbls);
    }
    const auto manual = validation::spearman(x, y);
    CHECK(rows[1].rho == manual.coefficient);
    CHECK(rows[1].p_value == manual.p_value);
    CHECK(rows[1].n == x.size());
    CHECK(features::correlate_with_pbls(m, scores, 3).size() == 2);
}
