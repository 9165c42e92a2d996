#pragma once

#include "polylean/casestudy.hpp"
#include "polylean/ingest.hpp"
#include "polylean/pbls.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace polylean::synth {

struct AgentSpec {
    std::string address;
    double latent_leaning = 0.0; // [-1, 1], positive is Democratic
    double profit_weight = 0.0;  // [0, 1], share of price-chasing trades
    double activity_rate = 1.0;  // expected trades per day
    double size_log_mean = 3.0;
    double size_log_std = 1.0;

    bool operator==(const AgentSpec&) const = default;
};

struct SynthConfig {
    std::size_t n_agents = 500;
    int n_days = 60;
    Timestamp start = 1704326400; // 2024-01-04
    std::uint64_t seed = 0;

    double leaning_lo = -1.0;
    double leaning_hi = 1.0;
    double profit_weight_lo = 0.5;
    double profit_weight_hi = 0.5;
    double activity_lo = 4.0;
    double activity_hi = 4.0;
    double size_log_mean = 3.0;
    double size_log_std = 1.0;

    /// Daily probabilities per party outcome. A missing Republican series is
    /// the complement of the Democratic one.
    std::map<std::string, std::vector<double>, std::less<>> price_series;

    std::string political_event = "evt-election";
    std::string political_market = "mkt-election";
    std::int64_t political_category = 5481;
    std::int64_t political_market_category = 1001;
    /// Non-political Yes/No markets, each in its own event and category.
    int side_markets = 3;
    double side_activity_fraction = 0.25; // side trades per day relative to activity_rate

    /// Throws InvalidConfig.
    void validate() const;
};

/// JSON object; every key optional. `profit_weight` may be a number or a
/// [lo, hi] pair. Throws InvalidConfig.
SynthConfig parse_synth_config(std::string_view json_text);

/// Democratic series used when none is configured; stays inside [0.52, 0.9].
std::vector<double> default_dem_series(int n_days);

struct Generated {
    ingest::Dataset dataset;
    std::vector<AgentSpec> agents;
    pbls::PartyMap party_map;
};

/// Agents draw a Poisson number of political trades at rate
/// activity * (0.2 + |lambda|) / 1.2 per day with uniform times. Each trade is
/// belief-driven with probability 1 - profit_weight (buy the sign(lambda)
/// party) and price-chasing otherwise (buy the party whose price rose since
/// the previous day, or sell a held token of the other party). Sizes are
/// log-normal in USDC. Agent i uses substream (seed, i).
Generated generate(const SynthConfig& config);

/// Writes the dataset files plus agents.jsonl and party_map.json.
void save_generated(const Generated& generated, const std::filesystem::path& dir);

void write_agents(std::ostream& out, std::span<const AgentSpec> agents);
std::vector<AgentSpec> read_agents(std::istream& in);

struct RecoveryReport {
    std::optional<double> spearman_rho;  // absent when either side is constant
    std::optional<double> sign_accuracy; // among agents with |lambda| > 0.2
    std::size_t matched = 0;
    std::size_t strong = 0;
};

/// Joins agents to scores by address. Throws InsufficientAgents below 10.
RecoveryReport recovery_report(std::span<const AgentSpec> agents, std::span<const pbls::LeaningScore> scores);

struct ReOracleOptions {
    std::array<double, 4> theta{};
    double sigma_delta = 0.0;
    double sigma_eps = 1.0;
    std::size_t entities = 400;
    std::size_t periods = 8;
    std::uint64_t seed = 0;
    /// Removes each entity's mean idiosyncratic error so the between fit is
    /// exact; with sigma_delta = 0 the estimated random-effect variance is 0.
    bool demean_noise = false;
};

/// Panel rows generated from the random-intercept model on the Democratic
/// side: holding = t0 + t1*pbls + t2*price + t3*pbls*price + delta_u + eps.
/// pbls ~ N(0, 1) per entity, price ~ U(0.3, 0.8) per period shared by all
/// entities.
std::vector<casestudy::PanelObservation> re_oracle_data(const ReOracleOptions& options);

} // namespace polylean::synth
