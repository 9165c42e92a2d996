#pragma once

#include "polylean/ingest.hpp"
#include "polylean/pbls.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace polylean::features {

enum class Level { User, Event, Market };

std::string_view to_string(Level level);

struct CatalogConfig {
    std::vector<std::int64_t> event_categories;
    std::vector<std::int64_t> market_categories;
    /// label -> anchor time; feature names carry the label, e.g. preCount-2022.
    std::vector<std::pair<std::string, Timestamp>> anchors = {{"2022", 1667865600}, {"2024", 1704326400}};
    std::int64_t political_category = 5481; // event-level category used by accFreqProduct
    bool hhi_squared = false;               // concentration as sum of squared shares
    std::string yes_label = "Yes";
    std::string no_label = "No";
};

/// JSON object with optional keys event_categories, market_categories,
/// anchors ({label: time}), political_category, hhi_squared, yes_label,
/// no_label. Throws InvalidConfig.
CatalogConfig parse_catalog_config(std::string_view json_text);

/// Per-category metrics, in catalog order.
inline constexpr std::string_view kCategoryMetrics[] = {
    "categoryCount", "categoryRatio", "amount",        "buyAmount", "sellAmount", "buyFreq",  "sellFreq",
    "successRate",   "profitability", "yesAmount",     "noAmount",  "yesRatio",   "noRatio"};

struct FeatureCatalog {
    std::vector<std::string> names;
    std::vector<Level> levels;

    std::size_t size() const { return names.size(); }
};

/// User-level global features first, then event categories, then market
/// categories, each in configured order.
FeatureCatalog make_catalog(const CatalogConfig& config);

std::string feature_name(Level level, std::int64_t category, std::string_view metric);
std::string user_feature(std::string_view metric);

/// Present features only; an absent feature has no entry.
using FeatureVector = std::map<std::string, double, std::less<>>;

/// Dataset-wide lookups shared by every address.
class FeatureContext {
public:
    FeatureContext(const ingest::Dataset& dataset, CatalogConfig config);

    const ingest::Dataset& dataset() const { return *dataset_; }
    const CatalogConfig& config() const { return config_; }
    std::optional<std::int64_t> event_category(const ingest::BettingRecord& trade) const;
    std::optional<std::int64_t> market_category(const ingest::BettingRecord& trade) const;
    const std::optional<std::string>& resolution(const ingest::BettingRecord& trade) const;
    /// Price of the latest trade in (market, outcome) across the dataset.
    std::optional<double> last_price(std::string_view market_id, std::string_view outcome) const;
    /// Event categories the per-category groups compute: the configured set
    /// plus the political category.
    const std::vector<std::int64_t>& event_categories() const { return event_categories_; }

private:
    const ingest::Dataset* dataset_;
    CatalogConfig config_;
    std::vector<std::int64_t> event_categories_;
    std::map<std::pair<std::string, std::string>, double, std::less<>> last_price_;
};

// Each group takes one address's trades in record order.
FeatureVector basic_features(std::span<const ingest::BettingRecord> trades, const FeatureContext& ctx);
FeatureVector participation_features(std::span<const ingest::BettingRecord> trades, const FeatureContext& ctx);
FeatureVector trading_behavior_features(std::span<const ingest::BettingRecord> trades, const FeatureContext& ctx);
FeatureVector success_profitability_features(std::span<const ingest::BettingRecord> trades,
                                             const FeatureContext& ctx);
FeatureVector side_preference_features(std::span<const ingest::BettingRecord> trades, const FeatureContext& ctx);
FeatureVector time_features(std::span<const ingest::BettingRecord> trades, const FeatureContext& ctx);
FeatureVector risk_features(std::span<const ingest::BettingRecord> trades, const FeatureContext& ctx);
/// Reads the basic and per-category features already present in `partial`.
FeatureVector combination_features(const FeatureVector& partial, const FeatureContext& ctx);

/// All groups merged and restricted to the catalog.
FeatureVector address_features(std::span<const ingest::BettingRecord> trades, const FeatureContext& ctx,
                               const FeatureCatalog& catalog);

/// Dense matrix; absent cells are NaN.
struct FeatureMatrix {
    std::vector<std::string> columns;
    std::vector<std::string> addresses; // sorted
    std::vector<std::vector<double>> values;

    std::size_t column_index(std::string_view name) const; // npos when missing
};

FeatureMatrix build_feature_matrix(const ingest::Dataset& dataset, const CatalogConfig& config, unsigned jobs = 1);

/// Wide CSV: `address,<columns...>`, absent values as empty cells.
void write_matrix(std::ostream& out, const FeatureMatrix& matrix);
FeatureMatrix read_matrix(std::istream& in);

struct CorrelationRow {
    std::string feature;
    double rho = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
    bool significant = false; // p < 0.05
};

/// Spearman correlation per column over addresses with both a value and a
/// score. Columns with fewer than 3 complete pairs or zero variance are
/// omitted. Sorted by |rho| descending, then by name.
std::vector<CorrelationRow> correlate_with_pbls(const FeatureMatrix& matrix,
                                                std::span<const pbls::LeaningScore> scores, unsigned jobs = 1);

void write_correlations(std::ostream& out, std::span<const CorrelationRow> rows);

} // namespace polylean::features
