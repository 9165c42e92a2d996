#include "polylean/validation.hpp"

#include "polylean/csv.hpp"
#include "polylean/error.hpp"
#include "polylean/numeric.hpp"
#include "polylean/parallel.hpp"
#include "polylean/rng.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <numeric>

namespace polylean::validation {

double kolmogorov_survival(double lambda) {
    constexpr int kTerms = 20;
    if (!(lambda > 0.0)) return 1.0;
    if (lambda < 1.18) {
        // P(K <= lambda) = sqrt(2 pi) / lambda * sum exp(-(2k-1)^2 pi^2 / (8 lambda^2))
        const double pi2 = std::numbers::pi * std::numbers::pi;
        double cdf = 0.0;
        for (int k = 1; k <= kTerms; ++k) {
            const double odd = 2.0 * k - 1.0;
            cdf += std::exp(-odd * odd * pi2 / (8.0 * lambda * lambda));
        }
        cdf *= std::sqrt(2.0 * std::numbers::pi) / lambda;
        return std::clamp(1.0 - cdf, 0.0, 1.0);
    }
    double sum = 0.0;
    for (int k = 1; k <= kTerms; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += (k % 2 == 1) ? term : -term;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw Error(ErrorCode::EmptyInput, "KS test needs two nonempty samples");
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    const double na = static_cast<double>(sa.size());
    const double nb = static_cast<double>(sb.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < sa.size() && j < sb.size()) {
        const double x = std::min(sa[i], sb[j]);
        while (i < sa.size() && sa[i] == x) ++i;
        while (j < sb.size() && sb[j] == x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    // Once one sample is exhausted its ECDF is 1; the other only rises toward
    // 1, so the gap can only shrink from here.
    const double n_eff = na * nb / (na + nb);
    return {d, kolmogorov_survival(std::sqrt(n_eff) * d)};
}

double correlation_p_value(double r, std::size_t n) {
    if (n < 3) return 1.0;
    const double df = static_cast<double>(n - 2);
    if (std::abs(r) >= 1.0) return 0.0;
    const double t = r * std::sqrt(df / (1.0 - r * r));
    boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

Correlation pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "correlation inputs differ in length");
    const std::size_t n = x.size();
    if (n < 3) throw Error(ErrorCode::InsufficientData, "correlation needs at least 3 observations");
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::ZeroVariance, "correlation input has zero variance");
    const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    return {r, correlation_p_value(r, n), n};
}

std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i + 1;
        while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
        const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
        i = j;
    }
    return ranks;
}

Correlation spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "correlation inputs differ in length");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    return pearson(rx, ry);
}

double support_ratio(std::span<const pbls::LeaningScore> scores) {
    std::size_t dem = 0, rep = 0;
    for (const auto& s : scores) {
        switch (pbls::classify_leaning(s)) {
        case pbls::Leaning::Democratic: ++dem; break;
        case pbls::Leaning::Republican: ++rep; break;
        case pbls::Leaning::Neutral: break;
        }
    }
    if (dem + rep == 0) throw Error(ErrorCode::EmptyInput, "no non-neutral scores");
    if (rep == 0) throw Error(ErrorCode::NoRepublicans, "no Republican-classified addresses");
    return static_cast<double>(dem) / static_cast<double>(rep);
}

std::vector<PollRecord> read_polls(std::istream& in) {
    std::vector<PollRecord> polls;
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::SchemaMismatch, "polls file is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = csv::split(line);
    const std::vector<std::string> expected{"poll_id", "sample_size", "dem_share", "rep_share"};
    if (!header) throw Error(ErrorCode::SchemaMismatch, "polls header is malformed");
    std::vector<std::size_t> pos;
    for (const auto& name : expected) {
        auto it = std::find(header->begin(), header->end(), name);
        if (it == header->end()) throw Error(ErrorCode::SchemaMismatch, "polls header lacks " + name);
        pos.push_back(static_cast<std::size_t>(it - header->begin()));
    }
    std::size_t number = 1;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = csv::split(line);
        auto bad = [&] { return Error(ErrorCode::SchemaMismatch, "polls line " + std::to_string(number) + " is malformed"); };
        if (!fields || fields->size() < header->size()) throw bad();
        auto size = parse_int((*fields)[pos[1]]);
        auto dem = parse_double((*fields)[pos[2]]);
        auto rep = parse_double((*fields)[pos[3]]);
        if (!size || *size <= 0 || !dem || !rep) throw bad();
        polls.push_back({(*fields)[pos[0]], static_cast<std::uint64_t>(*size), *dem, *rep});
    }
    return polls;
}

double nearest_rank(std::span<const double> sorted, double q) {
    const double n = static_cast<double>(sorted.size());
    const double pos = std::ceil(q * n - 1e-9);
    const auto idx = static_cast<std::size_t>(std::clamp(pos - 1.0, 0.0, n - 1.0));
    return sorted[idx];
}

namespace {

double poll_statistic(std::span<const PollRecord> polls, std::span<const std::size_t> picks, BootstrapStatistic stat) {
    CompensatedSum num, den;
    for (auto i : picks) {
        const auto& p = polls[i];
        const double w = static_cast<double>(p.sample_size);
        if (stat == BootstrapStatistic::MeanOfRatios) {
            num += w * (p.dem_share / p.rep_share);
            den += w;
        } else {
            num += w * p.dem_share;
            den += w * p.rep_share;
        }
    }
    return num.value() / den.value();
}

} // namespace

BootstrapResult weighted_bootstrap_ci(std::span<const PollRecord> polls, const BootstrapOptions& options) {
    if (polls.empty()) throw Error(ErrorCode::EmptyInput, "bootstrap needs at least one poll");
    if (options.replicates == 0) throw Error(ErrorCode::InvalidConfig, "replicates must be positive");
    if (!(options.level > 0.0 && options.level < 1.0)) throw Error(ErrorCode::InvalidConfig, "level must lie in (0, 1)");
    std::vector<double> cumulative;
    double total = 0.0;
    for (const auto& p : polls) {
        if (p.rep_share == 0.0) throw Error(ErrorCode::ZeroRepShare, "poll " + p.poll_id + " has zero Republican share");
        if (p.sample_size == 0 || p.dem_share < 0.0 || p.rep_share < 0.0 || p.dem_share + p.rep_share > 1.0 + 1e-9)
            throw Error(ErrorCode::InvalidConfig, "poll " + p.poll_id + " has invalid size or shares");
        total += static_cast<double>(p.sample_size);
        cumulative.push_back(total);
    }

    std::vector<std::size_t> all(polls.size());
    std::iota(all.begin(), all.end(), std::size_t{0});

    BootstrapResult result;
    result.point_estimate = poll_statistic(polls, all, options.statistic);
    result.replicates = options.replicates;
    result.seed = options.seed;
    result.algorithm = std::string(Rng::kAlgorithm);

    std::vector<double> stats(options.replicates);
    parallel_for(options.replicates, options.jobs, [&](std::size_t k) {
        Rng rng = Rng::derive(options.seed, k);
        std::vector<std::size_t> picks(polls.size());
        for (auto& p : picks) p = rng.weighted_index(cumulative);
        stats[k] = poll_statistic(polls, picks, options.statistic);
    });
    std::sort(stats.begin(), stats.end());
    const double alpha = 1.0 - options.level;
    result.ci_low = nearest_rank(stats, alpha / 2.0);
    result.ci_high = nearest_rank(stats, 1.0 - alpha / 2.0);
    result.median = nearest_rank(stats, 0.5);
    return result;
}

} // namespace polylean::validation
