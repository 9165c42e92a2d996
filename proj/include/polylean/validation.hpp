#pragma once

#include "polylean/pbls.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace polylean::validation {

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test. The p-value comes from the asymptotic
/// Kolmogorov distribution evaluated at sqrt(n_eff) * D with
/// n_eff = |a||b| / (|a| + |b|). Throws EmptyInput.
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

/// Survival function of the limiting Kolmogorov distribution, P(K > lambda).
/// Uses the Jacobi-theta form below lambda = 1.18 and the alternating
/// series above, 20 terms each.
double kolmogorov_survival(double lambda);

struct Correlation {
    double coefficient = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
};

/// Sample correlation with a two-sided p-value from
/// t = r sqrt((n - 2) / (1 - r^2)) against Student-t(n - 2).
/// Throws LengthMismatch, InsufficientData (n < 3) or ZeroVariance.
Correlation pearson(std::span<const double> x, std::span<const double> y);

/// Pearson correlation of average (fractional) ranks.
Correlation spearman(std::span<const double> x, std::span<const double> y);

/// 1-based ranks; tied values share the mean of the positions they occupy.
std::vector<double> average_ranks(std::span<const double> values);

/// Two-sided p-value for a correlation coefficient r over n observations.
double correlation_p_value(double r, std::size_t n);

/// Count of Democratic over Republican classifications, neutrals excluded.
/// Throws EmptyInput when every score is neutral and NoRepublicans when the
/// denominator is zero.
double support_ratio(std::span<const pbls::LeaningScore> scores);

struct PollRecord {
    std::string poll_id;
    std::uint64_t sample_size = 0;
    double dem_share = 0.0;
    double rep_share = 0.0;
};

/// CSV with header `poll_id,sample_size,dem_share,rep_share`.
std::vector<PollRecord> read_polls(std::istream& in);

enum class BootstrapStatistic {
    MeanOfRatios, // sum n_i (dem_i / rep_i) / sum n_i
    RatioOfMeans, // sum n_i dem_i / sum n_i rep_i
};

struct BootstrapOptions {
    std::size_t replicates = 1000;
    double level = 0.95;
    std::uint64_t seed = 0;
    BootstrapStatistic statistic = BootstrapStatistic::MeanOfRatios;
    unsigned jobs = 1;
};

struct BootstrapResult {
    double point_estimate = 0.0; // statistic on the original polls
    double ci_low = 0.0;
    double ci_high = 0.0;
    double median = 0.0;         // of the replicate distribution
    std::size_t replicates = 0;
    std::uint64_t seed = 0;
    std::string algorithm;       // RNG identifier, for audit
};

/// Weighted bootstrap of the poll ratio: each replicate draws |polls| polls
/// with replacement with probability proportional to sample size. Percentile
/// interval using nearest-rank quantiles, so endpoints are always replicate
/// values. Replicate k uses the substream (seed, k).
/// Throws EmptyInput, ZeroRepShare, or InvalidConfig for bad shares/options.
BootstrapResult weighted_bootstrap_ci(std::span<const PollRecord> polls, const BootstrapOptions& options);

/// Nearest-rank quantile of sorted data: smallest x with ECDF(x) >= q.
double nearest_rank(std::span<const double> sorted, double q);

} // namespace polylean::validation
