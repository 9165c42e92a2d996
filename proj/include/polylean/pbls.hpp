#pragma once

#include "polylean/ingest.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace polylean::pbls {

/// Outcome label to party sign: +1 Democratic, -1 Republican. Labels not in
/// the map are excluded from scoring.
using PartyMap = std::map<std::string, int, std::less<>>;

struct WeightConfig {
    double theta = 0.005;        // price-distance threshold around 0.5
    double half_life_days = 14.0;
    std::optional<Timestamp> t_end; // reference time; score_event defaults it to the event's last trade
    PartyMap party_map;

    /// Throws InvalidConfig when theta is outside [0, 0.5), the half-life is
    /// not positive, or a party sign is not +/-1.
    void validate() const;
};

PartyMap parse_party_map(std::string_view json_text);

double price_weight(double price, double theta);

/// exp(-ln2 / h * days(t_end - t)). Throws FutureTrade when t > t_end.
double time_decay_weight(Timestamp t, Timestamp t_end, double half_life_days);

/// +ln(1 + usdc) for buys, -ln(1 + usdc) for sells.
double amount_weight(double usdc_size, ingest::Side side);

struct TradeWeights {
    std::string tx_hash;
    double price = 0.0;
    double time = 0.0;
    double amount = 0.0;
    int party = 0;
};

enum class Provenance { Computed, Predicted };

std::string_view to_string(Provenance p);

struct LeaningScore {
    std::string address;
    double pbls = 0.0;
    std::size_t trade_count = 0;
    double freq_weight = 0.0;
    Provenance provenance = Provenance::Computed;
    bool degenerate = false;
    std::size_t excluded_future = 0;
    std::vector<TradeWeights> breakdown;
};

/// Score for one address from its trades in the designated event. Trades whose
/// outcome is not in the party map, and trades after t_end, are dropped before
/// the trade count is taken. A zero denominator yields pbls = 0 with the
/// degenerate flag set. Throws NoQualifyingTrades when nothing remains.
LeaningScore compute_pbls(std::string address, std::span<const ingest::BettingRecord> trades,
                          const WeightConfig& config);

enum class Leaning { Democratic, Republican, Neutral };

std::string_view to_string(Leaning leaning);
Leaning classify_leaning(const LeaningScore& score);

struct EventScores {
    std::vector<LeaningScore> scores; // sorted by address
    Timestamp t_end = 0;
    std::size_t excluded_future = 0;
    std::vector<std::string> unscored; // addresses with no qualifying trade
};

/// Scores every address that traded in `event_id`. Work is spread over `jobs`
/// threads; the output does not depend on the thread count.
EventScores score_event(const ingest::Dataset& dataset, std::string_view event_id, WeightConfig config,
                        unsigned jobs = 1);

void write_scores(std::ostream& out, std::span<const LeaningScore> scores, bool with_breakdown = false);
std::vector<LeaningScore> read_scores(std::istream& in);

} // namespace polylean::pbls
