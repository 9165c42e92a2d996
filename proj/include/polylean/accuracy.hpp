#pragma once

#include "polylean/ingest.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace polylean::accuracy {

/// Probabilities are clamped into [eps, 1 - eps] before taking logs, which
/// bounds the score to roughly [-28.9, 1].
inline constexpr double kProbabilityClamp = 1e-9;

/// Discrete Log Score: log2(p) + 1 if the event occurred, log2(1 - p) + 1
/// otherwise. 1 is a perfect forecast, 0 a coin flip.
double dls(double p, bool occurred);

/// Price of the last trade at or before close, expressed as the probability
/// of the resolved outcome. A last trade in the opposing token of a binary
/// market contributes 1 - price. Throws NotResolved or NoTrades.
double final_probability(const ingest::MarketMeta& market, std::span<const ingest::BettingRecord> trades);

struct MarketAccuracy {
    std::string market_id;
    Timestamp resolution_time = 0;
    double final_probability = 0.0;
    double dls = 0.0;
    std::size_t participants = 0;
    double volume = 0.0;
};

struct ScoreOptions {
    /// Restrict to markets whose own category or whose event's category equals this id.
    std::optional<std::int64_t> category;
};

struct ScoreReport {
    std::vector<MarketAccuracy> markets; // sorted by (resolution_time, market_id)
    std::vector<std::string> skipped;    // resolved markets with no trade before close
};

ScoreReport score_markets(const ingest::Dataset& dataset, const ScoreOptions& options = {});

struct EwmaPoint {
    Timestamp time = 0;
    double ewma = 0.0;
};

/// Exponentially weighted mean of the scores so far, where each earlier score
/// is weighted `decay` times the one after it. Input must be sorted by time.
std::vector<EwmaPoint> ewma_series(std::span<const std::pair<Timestamp, double>> scores, double decay = 0.95);

struct AccuracyPoint {
    double ewma = 0.0;
    double participants = 0.0;
    double volume = 0.0;
};

struct AccuracyRegression {
    double coef_volume = 0.0;
    double coef_participants = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    std::size_t n = 0;
};

/// OLS of ewma on [1, volume, participants] after min-max scaling of both
/// regressors to [0, 1]. Throws InsufficientData below 4 points and
/// DegenerateDesign for constant or collinear regressors.
AccuracyRegression accuracy_regression(std::span<const AccuracyPoint> points);

} // namespace polylean::accuracy
