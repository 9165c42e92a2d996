#include "polylean/pbls.hpp"

#include "polylean/error.hpp"
#include "polylean/numeric.hpp"
#include "polylean/parallel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>

namespace polylean::pbls {

using nlohmann::json;

void WeightConfig::validate() const {
    if (!(theta >= 0.0 && theta < 0.5)) throw Error(ErrorCode::InvalidConfig, "theta must lie in [0, 0.5)");
    if (!(half_life_days > 0.0)) throw Error(ErrorCode::InvalidConfig, "half-life must be positive");
    for (const auto& [label, sign] : party_map) {
        if (sign != 1 && sign != -1) throw Error(ErrorCode::InvalidConfig, "party sign for '" + label + "' must be +1 or -1");
    }
}

PartyMap parse_party_map(std::string_view text) {
    auto doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw Error(ErrorCode::InvalidConfig, "party map must be a JSON object");
    PartyMap map;
    for (const auto& [label, value] : doc.items()) {
        if (!value.is_number_integer()) throw Error(ErrorCode::InvalidConfig, "party sign for '" + label + "' must be an integer");
        map.emplace(label, value.get<int>());
    }
    WeightConfig check;
    check.party_map = map;
    check.validate();
    return map;
}

double price_weight(double price, double theta) {
    const double distance = std::abs(price - 0.5);
    return distance > theta ? distance / 0.5 : 0.0;
}

double time_decay_weight(Timestamp t, Timestamp t_end, double half_life_days) {
    if (t > t_end) throw Error(ErrorCode::FutureTrade, "trade time is after t_end");
    const double days = static_cast<double>(t_end - t) / static_cast<double>(kSecondsPerDay);
    return std::exp(-std::numbers::ln2 / half_life_days * days);
}

double amount_weight(double usdc_size, ingest::Side side) {
    const double magnitude = std::log1p(usdc_size);
    return side == ingest::Side::Buy ? magnitude : -magnitude;
}

std::string_view to_string(Provenance p) { return p == Provenance::Computed ? "computed" : "predicted"; }

LeaningScore compute_pbls(std::string address, std::span<const ingest::BettingRecord> trades,
                          const WeightConfig& config) {
    config.validate();
    if (!config.t_end) throw Error(ErrorCode::InvalidConfig, "t_end is not set");
    LeaningScore score;
    score.address = std::move(address);
    CompensatedSum numerator;
    CompensatedSum denominator;
    for (const auto& trade : trades) {
        auto party = config.party_map.find(trade.outcome);
        if (party == config.party_map.end()) continue;
        if (trade.timestamp > *config.t_end) {
            ++score.excluded_future;
            continue;
        }
        TradeWeights w;
        w.tx_hash = trade.tx_hash;
        w.price = price_weight(trade.price, config.theta);
        w.time = time_decay_weight(trade.timestamp, *config.t_end, config.half_life_days);
        w.amount = amount_weight(trade.usdc_size, trade.side);
        w.party = party->second;
        const double magnitude = w.price * w.time * w.amount;
        numerator += magnitude * w.party;
        denominator += std::abs(magnitude);
        score.breakdown.push_back(std::move(w));
    }
    score.trade_count = score.breakdown.size();
    if (score.trade_count == 0)
        throw Error(ErrorCode::NoQualifyingTrades, "address " + score.address + " has no party-mapped trades");
    score.freq_weight = std::log1p(static_cast<double>(score.trade_count));
    const double den = denominator.value();
    if (den == 0.0) {
        score.degenerate = true;
        score.pbls = 0.0;
        return score;
    }
    const double core = std::clamp(numerator.value() / den, -1.0, 1.0);
    score.pbls = core * score.freq_weight;
    return score;
}

std::string_view to_string(Leaning leaning) {
    switch (leaning) {
    case Leaning::Democratic: return "democratic";
    case Leaning::Republican: return "republican";
    case Leaning::Neutral: return "neutral";
    }
    return "neutral";
}

Leaning classify_leaning(const LeaningScore& score) {
    if (score.pbls > 0.0) return Leaning::Democratic;
    if (score.pbls < 0.0) return Leaning::Republican;
    return Leaning::Neutral;
}

EventScores score_event(const ingest::Dataset& dataset, std::string_view event_id, WeightConfig config,
                        unsigned jobs) {
    EventScores out;
    const auto trades = dataset.trades_of_event(event_id);
    if (trades.empty()) throw Error(ErrorCode::NoTrades, "event " + std::string(event_id) + " has no trades");
    if (!config.t_end) config.t_end = trades.back().timestamp;
    config.validate();
    out.t_end = *config.t_end;

    std::map<std::string, std::vector<ingest::BettingRecord>, std::less<>> per_address;
    for (const auto& t : trades) per_address[t.address].push_back(t);
    std::vector<const std::string*> addresses;
    for (const auto& [addr, _] : per_address) addresses.push_back(&addr);

    std::vector<std::optional<LeaningScore>> results(addresses.size());
    parallel_for(addresses.size(), jobs, [&](std::size_t i) {
        try {
            results[i] = compute_pbls(*addresses[i], per_address.at(*addresses[i]), config);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NoQualifyingTrades) throw;
        }
    });
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (!results[i]) {
            out.unscored.push_back(*addresses[i]);
            for (const auto& t : per_address.at(*addresses[i]))
                if (config.party_map.contains(t.outcome) && t.timestamp > out.t_end) ++out.excluded_future;
            continue;
        }
        out.excluded_future += results[i]->excluded_future;
        out.scores.push_back(std::move(*results[i]));
    }
    return out;
}

void write_scores(std::ostream& out, std::span<const LeaningScore> scores, bool with_breakdown) {
    for (const auto& s : scores) {
        json obj = {{"address", s.address},
                    {"pbls", s.pbls},
                    {"trade_count", s.trade_count},
                    {"freq_weight", s.freq_weight},
                    {"provenance", to_string(s.provenance)},
                    {"degenerate", s.degenerate}};
        if (with_breakdown) {
            json weights = json::array();
            for (const auto& w : s.breakdown) {
                weights.push_back({{"tx_hash", w.tx_hash},
                                   {"price_w", w.price},
                                   {"time_w", w.time},
                                   {"amount_w", w.amount},
                                   {"party_w", w.party}});
            }
            obj["weights"] = std::move(weights);
        }
        out << obj.dump() << '\n';
    }
}

std::vector<LeaningScore> read_scores(std::istream& in) {
    std::vector<LeaningScore> scores;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto obj = json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object() || !obj.contains("address") || !obj.contains("pbls") ||
            !obj["address"].is_string() || !obj["pbls"].is_number())
            throw Error(ErrorCode::SchemaMismatch, "scores line " + std::to_string(number) + " is malformed");
        LeaningScore s;
        s.address = obj["address"].get<std::string>();
        s.pbls = obj["pbls"].get<double>();
        s.trade_count = obj.value("trade_count", std::size_t{0});
        s.freq_weight = obj.value("freq_weight", 0.0);
        s.provenance = obj.value("provenance", std::string("computed")) == "predicted" ? Provenance::Predicted
                                                                                     : Provenance::Computed;
        s.degenerate = obj.value("degenerate", false);
        scores.push_back(std::move(s));
    }
    return scores;
}

} // namespace polylean::pbls
