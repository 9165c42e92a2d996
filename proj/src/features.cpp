#include "polylean/features.hpp"

#include "polylean/csv.hpp"
#include "polylean/error.hpp"
#include "polylean/numeric.hpp"
#include "polylean/parallel.hpp"
#include "polylean/validation.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <istream>
#include <limits>
#include <ostream>
#include <set>

namespace polylean::features {

using nlohmann::json;

std::string_view to_string(Level level) {
    switch (level) {
    case Level::User: return "user";
    case Level::Event: return "event";
    case Level::Market: return "market";
    }
    return "user";
}

CatalogConfig parse_catalog_config(std::string_view text) {
    auto doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw Error(ErrorCode::InvalidConfig, "catalog config must be a JSON object");
    CatalogConfig cfg;
    auto ids = [&](const char* key, std::vector<std::int64_t>& out) {
        if (!doc.contains(key)) return;
        const auto& arr = doc[key];
        if (!arr.is_array()) throw Error(ErrorCode::InvalidConfig, std::string(key) + " must be an array");
        std::set<std::int64_t> seen;
        for (const auto& v : arr) {
            if (!v.is_number_integer()) throw Error(ErrorCode::InvalidConfig, std::string(key) + " must hold integers");
            const auto id = v.get<std::int64_t>();
            if (!seen.insert(id).second) throw Error(ErrorCode::InvalidConfig, std::string(key) + " repeats a category");
            out.push_back(id);
        }
    };
    ids("event_categories", cfg.event_categories);
    ids("market_categories", cfg.market_categories);
    if (doc.contains("anchors")) {
        const auto& a = doc["anchors"];
        if (!a.is_object()) throw Error(ErrorCode::InvalidConfig, "anchors must be an object of label to time");
        cfg.anchors.clear();
        for (const auto& [label, value] : a.items()) {
            std::optional<Timestamp> t;
            if (value.is_string()) t = parse_time(value.get<std::string>());
            else if (value.is_number_integer()) t = value.get<Timestamp>();
            if (!t) throw Error(ErrorCode::InvalidConfig, "anchor '" + label + "' has an invalid time");
            cfg.anchors.emplace_back(label, *t);
        }
    }
    if (doc.contains("political_category")) {
        if (!doc["political_category"].is_number_integer())
            throw Error(ErrorCode::InvalidConfig, "political_category must be an integer");
        cfg.political_category = doc["political_category"].get<std::int64_t>();
    }
    if (doc.contains("hhi_squared")) {
        if (!doc["hhi_squared"].is_boolean()) throw Error(ErrorCode::InvalidConfig, "hhi_squared must be a boolean");
        cfg.hhi_squared = doc["hhi_squared"].get<bool>();
    }
    for (auto [key, field] : {std::pair{"yes_label", &cfg.yes_label}, std::pair{"no_label", &cfg.no_label}}) {
        if (!doc.contains(key)) continue;
        if (!doc[key].is_string()) throw Error(ErrorCode::InvalidConfig, std::string(key) + " must be a string");
        *field = doc[key].get<std::string>();
    }
    return cfg;
}

std::string feature_name(Level level, std::int64_t category, std::string_view metric) {
    return std::string(to_string(level)) + "." + std::to_string(category) + "." + std::string(metric);
}

std::string user_feature(std::string_view metric) { return "user.global." + std::string(metric); }

namespace {

std::vector<std::string> user_metrics(const CatalogConfig& config) {
    std::vector<std::string> m = {"createdAt",    "totalProfit",  "realizedProfit", "eventsTraded",
                                  "marketsTraded", "volumeTraded", "activityNum",    "avgHoldingTime",
                                  "avgTradingInterval"};
    for (const auto& [label, _] : config.anchors) {
        for (std::string_view base : {"preCount", "postCount", "preAmount", "postAmount"})
            m.push_back(std::string(base) + "-" + label);
    }
    for (std::string_view s : {"avgPriceDiff", "volWeightedAvgPriceDiff", "eventConcentration", "marketConcentration",
                               "avgTradeAmount", "avgAmountPerMarket", "avgAmountPerEvent", "accFreqProduct",
                               "accFreqProductAlt"})
        m.emplace_back(s);
    return m;
}

} // namespace

FeatureCatalog make_catalog(const CatalogConfig& config) {
    FeatureCatalog catalog;
    for (const auto& m : user_metrics(config)) {
        catalog.names.push_back(user_feature(m));
        catalog.levels.push_back(Level::User);
    }
    for (auto [level, ids] : {std::pair{Level::Event, &config.event_categories},
                              std::pair{Level::Market, &config.market_categories}}) {
        for (auto id : *ids) {
            for (auto metric : kCategoryMetrics) {
                catalog.names.push_back(feature_name(level, id, metric));
                catalog.levels.push_back(level);
            }
        }
    }
    return catalog;
}

FeatureContext::FeatureContext(const ingest::Dataset& dataset, CatalogConfig config)
    : dataset_(&dataset), config_(std::move(config)), event_categories_(config_.event_categories) {
    if (std::find(event_categories_.begin(), event_categories_.end(), config_.political_category) ==
        event_categories_.end())
        event_categories_.push_back(config_.political_category);
    // Records are in time order, so the last write per token wins.
    for (const auto& r : dataset.records()) last_price_[{r.market_id, r.outcome}] = r.price;
}

std::optional<std::int64_t> FeatureContext::event_category(const ingest::BettingRecord& trade) const {
    if (const auto* e = dataset_->event(trade.event_id)) return e->category_id;
    return std::nullopt;
}

std::optional<std::int64_t> FeatureContext::market_category(const ingest::BettingRecord& trade) const {
    if (const auto* m = dataset_->market(trade.market_id)) return m->category_id;
    return std::nullopt;
}

const std::optional<std::string>& FeatureContext::resolution(const ingest::BettingRecord& trade) const {
    static const std::optional<std::string> none;
    if (const auto* m = dataset_->market(trade.market_id)) return m->resolved_outcome;
    return none;
}

std::optional<double> FeatureContext::last_price(std::string_view market_id, std::string_view outcome) const {
    auto it = last_price_.find(std::pair<std::string, std::string>{market_id, outcome});
    if (it == last_price_.end()) return std::nullopt;
    return it->second;
}

namespace {

struct CategoryStats {
    std::size_t count = 0;
    std::size_t buys = 0;
    std::size_t sells = 0;
    std::size_t resolved = 0;
    std::size_t correct = 0;
    CompensatedSum amount, buy_amount, sell_amount, yes_amount, no_amount, profit;
};

using StatsMap = std::map<std::pair<Level, std::int64_t>, CategoryStats>;

double signed_shares(const ingest::BettingRecord& t) { return t.side == ingest::Side::Buy ? t.shares : -t.shares; }

StatsMap category_stats(std::span<const ingest::BettingRecord> trades, const FeatureContext& ctx) {
    StatsMap stats;
    for (auto id : ctx.event_categories()) stats[{Level::Event, id}];
    for (auto id : ctx.config().market_categories) stats[{Level::Market, id}];
    const auto& cfg = ctx.config();
    for (const auto& t : trades) {
        const auto& resolved = ctx.resolution(t);
        for (auto [level, cat] : {std::pair{Level::Event, ctx.event_category(t)},
                                  std::pair{Level::Market, ctx.market_category(t)}}) {
            if (!cat) continue;
            auto it = stats.find({level, *cat});
            if (it == stats.end()) continue;
            auto& s = it->second;
            ++s.count;
            s.amount += t.usdc_size;
            if (t.side == ingest::Side::Buy) {
                ++s.buys;
                s.buy_amount += t.usdc_size;
            } else {
                ++s.sells;
                s.sell_amount += t.usdc_size;
            }
            if (t.outcome == cfg.yes_label) s.yes_amount += t.usdc_size;
            if (t.outcome == cfg.no_label) s.no_amount += t.usdc_size;
            if (resolved) {
                ++s.resolved;
                const bool on_winner = t.outcome == *resolved;
                // A sell bets against the token it sells.
                if (on_winner == (t.side == ingest::Side::Buy)) ++s.correct;
                s.profit += signed_shares(t) * (on_winner ? 1.0 : -1.0);
            }
        }
    }
    return stats;
}

std::string stat_name(const std::pair<Level, std::int64_t>& key, std::string_view metric) {
    return feature_name(key.first, key.second, metric);
}

} // namespace

FeatureVector basic_features(std::span<const ingest::BettingRecord> trades, const FeatureContext& ctx) {
    FeatureVector f;
    if (trades.empty()) return f;
    Timestamp first = trades.front().timestamp;
    std::set<std::string_view> events, markets;
    CompensatedSum volume;
    std::map<std::string_view, std::map<std::string_view, std::pair<CompensatedSum, CompensatedSum>>> positions;
    for (const auto& t : trades) {
        first = std::min(first, t.timestamp);
        events.insert(t.event_id);
        markets.insert(t.market_id);
        volume += t.usdc_size;
        auto& [shares, cash] = positions[t.market_id][t.outcome];
        shares += signed_shares(t);
        cash += t.side == ingest::Side::Buy ? -t.usdc_size : t.usdc_size;
    }
    CompensatedSum realized, total;
    for (const auto& [market_id, outcomes] : positions) {
        const auto* market = ctx.dataset().market(market_id);
        const bool resolved = market && market->resolved_outcome;
        CompensatedSum value;
        for (const auto& [outcome, pos] : outcomes) {
            value += pos.second.value();
            if (resolved) {
                if (outcome == *market->resolved_outcome) value += pos.first.value();
            } else if (auto price = ctx.last_price(market_id, outcome)) {
                value += pos.first.value() * *price;
            }
        }
        if (resolved) realized += value.value();
        total += value.value();
    }
    f[user_feature("createdAt")] = static_cast<double>(first);
    f[user_feature("realizedProfit")] = realized.value();
    f[user_feature("totalProfit")] = total.value();
    f[user_feature("eventsTraded")] = static_cast<double>(events.size());
    f[user_feature("marketsTraded")] = static_cast<double>(markets.size());
    f[user_feature("volumeTraded")] = volume.value();
    f[user_feature("activityNum")] = static_cast<double>(trades.size());
    return f;
}

FeatureVector participation_features(std::span<const ingest::BettingRecord> trades, const FeatureContext& ctx) {
    FeatureVector f;
    const double a = static_cast<double>(trades.size());
    for (const auto& [key, s] : category_stats(trades, ctx)) {
        f[stat_name(key, "categoryCount")] = static_cast<double>(s.count);
        if (a > 0.0) f[stat_name(key, "categoryRatio")] = static_cast<double>(s.count) / a;
    }
    return f;
}

FeatureVector trading_behavior_features(std::span<const ingest::BettingRecord> trades, const FeatureContext& ctx) {
    FeatureVector f;
    for (const auto& [key, s] : category_stats(trades, ctx)) {
        if (s.count == 0) continue;
        const double c = static_cast<double>(s.count);
        f[stat_name(key, "amount")] = s.amount.value();
        f[stat_name(key, "buyAmount")] = s.buy_amount.value();
        f[stat_name(key, "sellAmount")] = s.sell_amount.value();
        f[stat_name(key, "buyFreq")] = static_cast<double>(s.buys) / c;
        f[stat_name(key, "sellFreq")] = static_cast<double>(s.sells) / c;
    }
    return f;
}

FeatureVector success_profitability_features(std::span<const ingest::BettingRecord> trades,
                                             const FeatureContext& ctx) {
    FeatureVector f;
    for (const auto& [key, s] : category_stats(trades, ctx)) {
        if (s.resolved == 0) continue;
        f[stat_name(key, "successRate")] = static_cast<double>(s.correct) / static_cast<double>(s.resolved);
        f[stat_name(key, "profitability")] = s.profit.value();
    }
    return f;
}

FeatureVector side_preference_features(std::span<const ingest::BettingRecord> trades, const FeatureContext& ctx) {
    FeatureVector f;
    for (const auto& [key, s] : category_stats(trades, ctx)) {
        if (s.count == 0) continue;
        const double yes = s.yes_amount.value();
        const double no = s.no_amount.value();
        f[stat_name(key, "yesAmount")] = yes;
        f[stat_name(key, "noAmount")] = no;
        if (yes + no > 0.0) {
            f[stat_name(key, "yesRatio")] = yes / (yes + no);
            f[stat_name(key, "noRatio")] = 1.0 - yes / (yes + no);
        }
    }
    return f;
}

FeatureVector time_features(std::span<const ingest::BettingRecord> trades, const FeatureContext& ctx) {
    FeatureVector f;
    if (trades.empty()) return f;
    constexpr double kDay = static_cast<double>(kSecondsPerDay);

    struct Lot {
        Timestamp time;
        double shares;
    };
    std::map<std::pair<std::string_view, std::string_view>, std::deque<Lot>> open;
    CompensatedSum weighted, matched;
    for (const auto& t : trades) {
        auto& lots = open[{t.market_id, t.outcome}];
        if (t.side == ingest::Side::Buy) {
            if (t.shares > 0.0) lots.push_back({t.timestamp, t.shares});
            continue;
        }
        double remaining = t.shares;
        while (remaining > 0.0 && !lots.empty()) {
            auto& lot = lots.front();
            const double u = std::min(remaining, lot.shares);
            weighted += static_cast<double>(t.timestamp - lot.time) * u;
            matched += u;
            remaining -= u;
            lot.shares -= u;
            if (lot.shares <= 0.0) lots.pop_front();
        }
    }
    if (matched.value() > 0.0) f[user_feature("avgHoldingTime")] = weighted.value() / matched.value() / kDay;

    if (trades.size() >= 2) {
        auto [lo, hi] = std::minmax_element(trades.begin(), trades.end(),
                                            [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
        f[user_feature("avgTradingInterval")] =
            static_cast<double>(hi->timestamp - lo->timestamp) / static_cast<double>(trades.size() - 1) / kDay;
    }

    for (const auto& [label, anchor] : ctx.config().anchors) {
        std::size_t pre = 0, post = 0;
        CompensatedSum pre_amount, post_amount;
        for (const auto& t : trades) {
            if (t.timestamp < anchor) {
                ++pre;
                pre_amount += t.usdc_size;
            } else {
                ++post;
                post_amount += t.usdc_size;
            }
        }
        f[user_feature("preCount-" + label)] = static_cast<double>(pre);
        f[user_feature("postCount-" + label)] = static_cast<double>(post);
        if (pre > 0) f[user_feature("preAmount-" + label)] = pre_amount.value() / static_cast<double>(pre);
        if (post > 0) f[user_feature("postAmount-" + label)] = post_amount.value() / static_cast<double>(post);
    }
    return f;
}

FeatureVector risk_features(std::span<const ingest::BettingRecord> trades, const FeatureContext& ctx) {
    FeatureVector f;
    if (trades.empty()) return f;
    const double n = static_cast<double>(trades.size());
    CompensatedSum diff, weighted_diff, volume;
    std::map<std::optional<std::int64_t>, std::size_t> by_market_cat, by_event_cat;
    for (const auto& t : trades) {
        const double d = std::abs(t.price - 0.5);
        diff += d;
        weighted_diff += d * t.usdc_size;
        volume += t.usdc_size;
        ++by_market_cat[ctx.market_category(t)];
        ++by_event_cat[ctx.event_category(t)];
    }
    f[user_feature("avgPriceDiff")] = diff.value() / n;
    if (volume.value() > 0.0) f[user_feature("volWeightedAvgPriceDiff")] = weighted_diff.value() / volume.value();
    auto concentration = [&](const auto& counts) {
        if (!ctx.config().hhi_squared) return static_cast<double>(counts.size()) / n;
        CompensatedSum hhi;
        for (const auto& [_, c] : counts) hhi += (static_cast<double>(c) / n) * (static_cast<double>(c) / n);
        return hhi.value();
    };
    f[user_feature("marketConcentration")] = concentration(by_market_cat);
    f[user_feature("eventConcentration")] = concentration(by_event_cat);
    return f;
}

FeatureVector combination_features(const FeatureVector& partial, const FeatureContext& ctx) {
    FeatureVector f;
    auto get = [&](const std::string& name) -> std::optional<double> {
        auto it = partial.find(name);
        if (it == partial.end()) return std::nullopt;
        return it->second;
    };
    const auto v = get(user_feature("volumeTraded"));
    auto ratio = [&](const char* out, const char* den) {
        const auto d = get(user_feature(den));
        if (v && d && *d > 0.0) f[user_feature(out)] = *v / *d;
    };
    ratio("avgTradeAmount", "activityNum");
    ratio("avgAmountPerMarket", "marketsTraded");
    ratio("avgAmountPerEvent", "eventsTraded");

    const auto pc = ctx.config().political_category;
    const auto success = get(feature_name(Level::Event, pc, "successRate"));
    const auto buy = get(feature_name(Level::Event, pc, "buyFreq"));
    const auto sell = get(feature_name(Level::Event, pc, "sellFreq"));
    const auto count = get(feature_name(Level::Event, pc, "categoryCount"));
    if (success && buy && sell) f[user_feature("accFreqProduct")] = *success * (*buy + *sell);
    if (success && count) f[user_feature("accFreqProductAlt")] = *success * *count;
    return f;
}

FeatureVector address_features(std::span<const ingest::BettingRecord> trades, const FeatureContext& ctx,
                               const FeatureCatalog& catalog) {
    FeatureVector all;
    for (auto* group : {&basic_features, &participation_features, &trading_behavior_features,
                        &success_profitability_features, &side_preference_features, &time_features,
                        &risk_features}) {
        all.merge(group(trades, ctx));
    }
    all.merge(combination_features(all, ctx));
    FeatureVector out;
    for (const auto& name : catalog.names) {
        auto it = all.find(name);
        if (it != all.end()) out.emplace(name, it->second);
    }
    return out;
}

std::size_t FeatureMatrix::column_index(std::string_view name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    return it == columns.end() ? std::string::npos : static_cast<std::size_t>(it - columns.begin());
}

FeatureMatrix build_feature_matrix(const ingest::Dataset& dataset, const CatalogConfig& config, unsigned jobs) {
    const FeatureContext ctx(dataset, config);
    const auto catalog = make_catalog(config);
    FeatureMatrix m;
    m.columns = catalog.names;
    std::vector<const std::vector<std::size_t>*> indices;
    for (const auto& [address, idx] : dataset.by_address()) {
        m.addresses.push_back(address);
        indices.push_back(&idx);
    }
    m.values.assign(m.addresses.size(), std::vector<double>(catalog.size(), std::numeric_limits<double>::quiet_NaN()));
    parallel_for(m.addresses.size(), jobs, [&](std::size_t i) {
        const auto trades = dataset.select(*indices[i]);
        const auto f = address_features(trades, ctx, catalog);
        auto& row = m.values[i];
        for (std::size_t c = 0; c < catalog.size(); ++c) {
            auto it = f.find(catalog.names[c]);
            if (it != f.end()) row[c] = it->second;
        }
    });
    return m;
}

void write_matrix(std::ostream& out, const FeatureMatrix& matrix) {
    out << "address";
    for (const auto& c : matrix.columns) out << ',' << csv::escape(c);
    out << '\n';
    for (std::size_t r = 0; r < matrix.addresses.size(); ++r) {
        out << csv::escape(matrix.addresses[r]);
        for (double v : matrix.values[r]) {
            out << ',';
            if (!std::isnan(v)) out << format_double(v);
        }
        out << '\n';
    }
}

FeatureMatrix read_matrix(std::istream& in) {
    FeatureMatrix m;
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::SchemaMismatch, "feature matrix is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = csv::split(line);
    if (!header || header->empty() || (*header)[0] != "address")
        throw Error(ErrorCode::SchemaMismatch, "feature matrix header must start with 'address'");
    m.columns.assign(header->begin() + 1, header->end());
    std::size_t number = 1;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = csv::split(line);
        if (!fields || fields->size() != header->size())
            throw Error(ErrorCode::SchemaMismatch, "feature matrix line " + std::to_string(number) + " is malformed");
        m.addresses.push_back((*fields)[0]);
        std::vector<double> row;
        row.reserve(m.columns.size());
        for (std::size_t c = 1; c < fields->size(); ++c) {
            const auto& cell = (*fields)[c];
            if (cell.empty()) {
                row.push_back(std::numeric_limits<double>::quiet_NaN());
                continue;
            }
            auto v = parse_double(cell);
            if (!v) throw Error(ErrorCode::SchemaMismatch, "feature matrix line " + std::to_string(number) + " has a bad number");
            row.push_back(*v);
        }
        m.values.push_back(std::move(row));
    }
    return m;
}

std::vector<CorrelationRow> correlate_with_pbls(const FeatureMatrix& matrix,
                                                std::span<const pbls::LeaningScore> scores, unsigned jobs) {
    std::map<std::string_view, double, std::less<>> score_of;
    for (const auto& s : scores) score_of.emplace(s.address, s.pbls);
    std::vector<std::optional<double>> row_score(matrix.addresses.size());
    for (std::size_t r = 0; r < matrix.addresses.size(); ++r) {
        auto it = score_of.find(matrix.addresses[r]);
        if (it != score_of.end()) row_score[r] = it->second;
    }
    std::vector<std::optional<CorrelationRow>> results(matrix.columns.size());
    parallel_for(matrix.columns.size(), jobs, [&](std::size_t c) {
        std::vector<double> x, y;
        for (std::size_t r = 0; r < matrix.values.size(); ++r) {
            const double v = matrix.values[r][c];
            if (std::isnan(v) || !row_score[r]) continue;
            x.push_back(v);
            y.push_back(*row_score[r]);
        }
        if (x.size() < 3) return;
        try {
            const auto s = validation::spearman(x, y);
            results[c] = CorrelationRow{matrix.columns[c], s.coefficient, s.p_value, s.n, s.p_value < 0.05};
        } catch (const Error& e) {
            if (e.code() != ErrorCode::ZeroVariance) throw;
        }
    });
    std::vector<CorrelationRow> rows;
    for (auto& r : results)
        if (r) rows.push_back(std::move(*r));
    std::sort(rows.begin(), rows.end(), [](const CorrelationRow& a, const CorrelationRow& b) {
        if (std::abs(a.rho) != std::abs(b.rho)) return std::abs(a.rho) > std::abs(b.rho);
        return a.feature < b.feature;
    });
    return rows;
}

void write_correlations(std::ostream& out, std::span<const CorrelationRow> rows) {
    out << "feature,rho,p,n,significant\n";
    for (const auto& r : rows) {
        out << csv::escape(r.feature) << ',' << format_double(r.rho) << ',' << format_double(r.p_value) << ',' << r.n
            << ',' << (r.significant ? "true" : "false") << '\n';
    }
}

} // namespace polylean::features
