#include "polylean/synth.hpp"

#include "polylean/error.hpp"
#include "polylean/io.hpp"
#include "polylean/numeric.hpp"
#include "polylean/rng.hpp"
#include "polylean/validation.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <functional>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

namespace polylean::synth {

using nlohmann::json;

namespace {

constexpr std::string_view kDem = casestudy::kDemocratic;
constexpr std::string_view kRep = casestudy::kRepublican;
constexpr std::int64_t kSideEventCategories[] = {5456, 5466, 5487, 5470, 5476, 5478, 5463, 5546};
// Streams below the agent range are reserved for layout draws.
constexpr std::uint64_t kLayoutStream = 0xFFFF'FFFF'0000'0001ULL;

std::string hex_id(Rng& rng, std::size_t digits) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s = "0x";
    while (s.size() < digits + 2) {
        std::uint64_t v = rng.next();
        for (int k = 0; k < 16 && s.size() < digits + 2; ++k, v >>= 4) s.push_back(kHex[v & 0xF]);
    }
    return s;
}

double round6(double x) { return std::round(x * 1e6) / 1e6; }

} // namespace

std::vector<double> default_dem_series(int n_days) {
    std::vector<double> s;
    s.reserve(static_cast<std::size_t>(std::max(0, n_days)));
    for (int d = 0; d < n_days; ++d)
        s.push_back(0.71 + 0.18 * std::sin(2.0 * std::numbers::pi * static_cast<double>(d) / 17.0));
    return s;
}

void SynthConfig::validate() const {
    auto bad = [](const std::string& m) { return Error(ErrorCode::InvalidConfig, m); };
    if (n_agents < 1) throw bad("n_agents must be positive");
    if (n_days < 1) throw bad("n_days must be positive");
    if (!(leaning_lo >= -1.0 && leaning_hi <= 1.0 && leaning_lo <= leaning_hi)) throw bad("leaning range must lie in [-1, 1]");
    if (!(profit_weight_lo >= 0.0 && profit_weight_hi <= 1.0 && profit_weight_lo <= profit_weight_hi))
        throw bad("profit_weight range must lie in [0, 1]");
    if (!(activity_lo >= 0.0 && activity_lo <= activity_hi) || !std::isfinite(activity_hi))
        throw bad("activity range must be finite and nonnegative");
    if (!std::isfinite(size_log_mean) || !(size_log_std >= 0.0)) throw bad("size parameters are invalid");
    if (side_markets < 0) throw bad("side_markets must be nonnegative");
    if (!(side_activity_fraction >= 0.0)) throw bad("side_activity_fraction must be nonnegative");
    for (const auto& [outcome, series] : price_series) {
        if (outcome != kDem && outcome != kRep) throw bad("price series outcome '" + outcome + "' is not a party label");
        if (series.size() != static_cast<std::size_t>(n_days)) throw bad("price series for '" + outcome + "' must have n_days values");
        for (double p : series)
            if (!(p > 0.0 && p < 1.0)) throw bad("price series values must lie in (0, 1)");
    }
}

SynthConfig parse_synth_config(std::string_view text) {
    auto doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw Error(ErrorCode::InvalidConfig, "synth config must be a JSON object");
    SynthConfig c;
    try {
        c.n_agents = doc.value("n_agents", c.n_agents);
        c.n_days = doc.value("n_days", c.n_days);
        if (doc.contains("start")) {
            const auto& s = doc["start"];
            std::optional<Timestamp> t = s.is_string() ? parse_time(s.get<std::string>()) : std::optional<Timestamp>(s.get<Timestamp>());
            if (!t) throw Error(ErrorCode::InvalidConfig, "start is not a valid time");
            c.start = *t;
        }
        c.seed = doc.value("seed", c.seed);
        auto pair = [&](const char* key, double& lo, double& hi) {
            if (!doc.contains(key)) return;
            const auto& v = doc[key];
            if (v.is_number()) {
                lo = hi = v.get<double>();
            } else if (v.is_array() && v.size() == 2) {
                lo = v[0].get<double>();
                hi = v[1].get<double>();
            } else {
                throw Error(ErrorCode::InvalidConfig, std::string(key) + " must be a number or [lo, hi]");
            }
        };
        pair("leaning", c.leaning_lo, c.leaning_hi);
        pair("profit_weight", c.profit_weight_lo, c.profit_weight_hi);
        pair("activity_rate", c.activity_lo, c.activity_hi);
        c.size_log_mean = doc.value("size_log_mean", c.size_log_mean);
        c.size_log_std = doc.value("size_log_std", c.size_log_std);
        if (doc.contains("price_series")) {
            for (const auto& [k, v] : doc["price_series"].items()) c.price_series[k] = v.get<std::vector<double>>();
        }
        c.political_event = doc.value("political_event", c.political_event);
        c.political_market = doc.value("political_market", c.political_market);
        c.political_category = doc.value("political_category", c.political_category);
        c.political_market_category = doc.value("political_market_category", c.political_market_category);
        c.side_markets = doc.value("side_markets", c.side_markets);
        c.side_activity_fraction = doc.value("side_activity_fraction", c.side_activity_fraction);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("synth config has a wrongly typed value: ") + e.what());
    }
    c.validate();
    return c;
}

Generated generate(const SynthConfig& config) {
    config.validate();
    const auto days = static_cast<std::size_t>(config.n_days);
    std::vector<double> dem = config.price_series.contains(kDem) ? config.price_series.find(kDem)->second
                                                                 : default_dem_series(config.n_days);
    std::vector<double> rep;
    if (auto it = config.price_series.find(kRep); it != config.price_series.end()) {
        rep = it->second;
    } else {
        for (double p : dem) rep.push_back(1.0 - p);
    }
    const Timestamp span = static_cast<Timestamp>(days) * kSecondsPerDay;
    const Timestamp close = config.start + span;

    std::vector<ingest::MarketMeta> markets;
    std::vector<ingest::EventMeta> events;
    events.push_back({config.political_event, config.political_category, "Synthetic election"});
    markets.push_back({config.political_market, config.political_event, config.political_market_category,
                       "Which party wins the synthetic election?", close,
                       std::string(dem.back() > 0.5 ? kDem : kRep)});

    struct SideMarket {
        std::string market_id, event_id;
        double yes_price;
    };
    std::vector<SideMarket> side;
    Rng layout = Rng::derive(config.seed, kLayoutStream);
    for (int k = 0; k < config.side_markets; ++k) {
        const auto ks = std::to_string(k);
        SideMarket m{"mkt-side-" + ks, "evt-side-" + ks, layout.uniform(0.2, 0.8)};
        const auto cat = kSideEventCategories[static_cast<std::size_t>(k) % std::size(kSideEventCategories)];
        events.push_back({m.event_id, cat, "Synthetic side event " + ks});
        markets.push_back({m.market_id, m.event_id, 2001 + k, "Synthetic side market " + ks, close,
                           std::string(layout.uniform() < 0.5 ? "Yes" : "No")});
        side.push_back(std::move(m));
    }

    Generated g;
    g.party_map = {{std::string(kDem), 1}, {std::string(kRep), -1}};
    std::vector<ingest::BettingRecord> records;
    for (std::size_t i = 0; i < config.n_agents; ++i) {
        Rng rng = Rng::derive(config.seed, i);
        AgentSpec a;
        a.address = hex_id(rng, 40);
        a.latent_leaning = rng.uniform(config.leaning_lo, config.leaning_hi);
        if (config.leaning_lo == config.leaning_hi) a.latent_leaning = config.leaning_lo;
        a.profit_weight = config.profit_weight_lo == config.profit_weight_hi
                              ? config.profit_weight_lo
                              : rng.uniform(config.profit_weight_lo, config.profit_weight_hi);
        a.activity_rate = config.activity_lo == config.activity_hi ? config.activity_lo
                                                                   : rng.uniform(config.activity_lo, config.activity_hi);
        a.size_log_mean = config.size_log_mean;
        a.size_log_std = config.size_log_std;

        auto make = [&](Timestamp t, const std::string& event, const std::string& market, ingest::Side s,
                        std::string outcome, double price, double usdc) {
            ingest::BettingRecord r;
            r.tx_hash = hex_id(rng, 64);
            r.timestamp = t;
            r.event_id = event;
            r.market_id = market;
            r.side = s;
            r.outcome = std::move(outcome);
            r.price = price;
            r.usdc_size = round6(usdc);
            r.shares = round6(r.usdc_size / price);
            r.address = a.address;
            return r;
        };
        auto draw_times = [&](double per_day) {
            const auto n = per_day > 0.0 ? rng.poisson(per_day * static_cast<double>(days)) : 0;
            std::vector<Timestamp> ts;
            for (std::uint64_t k = 0; k < n; ++k) ts.push_back(config.start + static_cast<Timestamp>(rng.below(static_cast<std::uint64_t>(span))));
            std::sort(ts.begin(), ts.end());
            return ts;
        };

        const double political_rate = a.activity_rate * (0.2 + std::abs(a.latent_leaning)) / 1.2;
        double held_dem = 0.0, held_rep = 0.0;
        for (Timestamp t : draw_times(political_rate)) {
            const auto d = static_cast<std::size_t>((t - config.start) / kSecondsPerDay);
            const double usdc = rng.lognormal(a.size_log_mean, a.size_log_std);
            bool buy_dem;
            bool sell = false;
            if (rng.uniform() >= a.profit_weight) {
                buy_dem = a.latent_leaning > 0.0 || (a.latent_leaning == 0.0 && rng.uniform() < 0.5);
            } else {
                const double change = dem[d] - (d > 0 ? dem[d - 1] : dem[d]);
                buy_dem = change > 0.0 || (change == 0.0 && rng.uniform() < 0.5);
                // Chasing can also mean dumping the falling side.
                sell = rng.uniform() < 0.5 && (buy_dem ? held_rep : held_dem) > 0.0;
            }
            if (sell) {
                auto& held = buy_dem ? held_rep : held_dem;
                const double price = buy_dem ? rep[d] : dem[d];
                const double shares = std::min(held, usdc / price);
                auto r = make(t, config.political_event, config.political_market, ingest::Side::Sell,
                              std::string(buy_dem ? kRep : kDem), price, shares * price);
                if (r.shares <= 0.0) continue;
                held -= r.shares;
                records.push_back(std::move(r));
            } else {
                const double price = buy_dem ? dem[d] : rep[d];
                auto r = make(t, config.political_event, config.political_market, ingest::Side::Buy,
                              std::string(buy_dem ? kDem : kRep), price, usdc);
                (buy_dem ? held_dem : held_rep) += r.shares;
                records.push_back(std::move(r));
            }
        }
        if (!side.empty()) {
            for (Timestamp t : draw_times(a.activity_rate * config.side_activity_fraction)) {
                const auto& m = side[rng.below(side.size())];
                const bool yes = rng.uniform() < 0.5;
                const double jitter = rng.uniform(-0.05, 0.05);
                const double price = std::clamp((yes ? m.yes_price : 1.0 - m.yes_price) + jitter, 0.05, 0.95);
                records.push_back(make(t, m.event_id, m.market_id, ingest::Side::Buy, yes ? "Yes" : "No", price,
                                       rng.lognormal(a.size_log_mean, a.size_log_std)));
            }
        }
        g.agents.push_back(std::move(a));
    }
    g.dataset = ingest::build_dataset(std::move(records), std::move(markets), std::move(events), true);
    return g;
}

void write_agents(std::ostream& out, std::span<const AgentSpec> agents) {
    for (const auto& a : agents) {
        json obj = {{"address", a.address},
                    {"latent_leaning", a.latent_leaning},
                    {"profit_weight", a.profit_weight},
                    {"activity_rate", a.activity_rate},
                    {"size_log_mean", a.size_log_mean},
                    {"size_log_std", a.size_log_std}};
        out << obj.dump() << '\n';
    }
}

std::vector<AgentSpec> read_agents(std::istream& in) {
    std::vector<AgentSpec> agents;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto obj = json::parse(line, nullptr, false);
        try {
            if (obj.is_discarded() || !obj.is_object()) throw std::runtime_error("not an object");
            AgentSpec a;
            a.address = obj.at("address").get<std::string>();
            a.latent_leaning = obj.at("latent_leaning").get<double>();
            a.profit_weight = obj.at("profit_weight").get<double>();
            a.activity_rate = obj.at("activity_rate").get<double>();
            a.size_log_mean = obj.at("size_log_mean").get<double>();
            a.size_log_std = obj.at("size_log_std").get<double>();
            agents.push_back(std::move(a));
        } catch (const std::exception&) {
            throw Error(ErrorCode::SchemaMismatch, "agents line " + std::to_string(number) + " is malformed");
        }
    }
    return agents;
}

void save_generated(const Generated& generated, const std::filesystem::path& dir) {
    ingest::save_dataset(generated.dataset, dir);
    std::ostringstream agents;
    write_agents(agents, generated.agents);
    io::write_file_atomic(dir / "agents.jsonl", agents.str());
    json map = json::object();
    for (const auto& [label, sign] : generated.party_map) map[label] = sign;
    io::write_file_atomic(dir / "party_map.json", map.dump(2) + "\n");
}

RecoveryReport recovery_report(std::span<const AgentSpec> agents, std::span<const pbls::LeaningScore> scores) {
    std::map<std::string_view, double, std::less<>> score_of;
    for (const auto& s : scores) score_of.emplace(s.address, s.pbls);
    std::vector<double> lambda, score;
    RecoveryReport report;
    std::size_t agree = 0;
    for (const auto& a : agents) {
        auto it = score_of.find(a.address);
        if (it == score_of.end()) continue;
        lambda.push_back(a.latent_leaning);
        score.push_back(it->second);
        if (std::abs(a.latent_leaning) > 0.2) {
            ++report.strong;
            const bool same = (a.latent_leaning > 0.0 && it->second > 0.0) || (a.latent_leaning < 0.0 && it->second < 0.0);
            if (same) ++agree;
        }
    }
    report.matched = lambda.size();
    if (report.matched < 10) throw Error(ErrorCode::InsufficientAgents, "recovery needs at least 10 scored agents");
    const bool varies = std::adjacent_find(lambda.begin(), lambda.end(), std::not_equal_to<>()) != lambda.end() &&
                        std::adjacent_find(score.begin(), score.end(), std::not_equal_to<>()) != score.end();
    if (varies) report.spearman_rho = validation::spearman(lambda, score).coefficient;
    if (report.strong > 0) report.sign_accuracy = static_cast<double>(agree) / static_cast<double>(report.strong);
    return report;
}

std::vector<casestudy::PanelObservation> re_oracle_data(const ReOracleOptions& o) {
    if (!(o.sigma_eps > 0.0) || !(o.sigma_delta >= 0.0) || !std::isfinite(o.sigma_eps) || !std::isfinite(o.sigma_delta))
        throw Error(ErrorCode::InvalidConfig, "noise scales must be finite with sigma_eps > 0");
    for (double t : o.theta)
        if (!std::isfinite(t)) throw Error(ErrorCode::InvalidConfig, "theta must be finite");
    Rng rng(o.seed);
    std::vector<double> price(o.periods);
    for (auto& p : price) p = rng.uniform(0.3, 0.8);
    std::vector<casestudy::PanelObservation> rows;
    rows.reserve(o.entities * o.periods);
    const auto width = std::to_string(o.entities).size();
    for (std::size_t u = 0; u < o.entities; ++u) {
        auto id = std::to_string(u);
        id.insert(0, width - id.size(), '0');
        const double pbls = rng.normal();
        const double delta = o.sigma_delta * rng.normal();
        std::vector<double> eps(o.periods);
        for (auto& e : eps) e = o.sigma_eps * rng.normal();
        if (o.demean_noise && o.periods > 0) {
            CompensatedSum s;
            for (double e : eps) s += e;
            const double mean = s.value() / static_cast<double>(o.periods);
            for (auto& e : eps) e -= mean;
        }
        for (std::size_t t = 0; t < o.periods; ++t) {
            casestudy::PanelObservation r;
            r.address = "entity-" + id;
            r.time = static_cast<Timestamp>(t) * kSecondsPerDay;
            r.dem_price = price[t];
            r.rep_price = 1.0 - price[t];
            r.pbls = pbls;
            r.dem_holding = o.theta[0] + o.theta[1] * pbls + o.theta[2] * price[t] + o.theta[3] * pbls * price[t] + delta + eps[t];
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

} // namespace polylean::synth
