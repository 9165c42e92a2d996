#pragma once

#include "polylean/time_util.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace polylean::ingest {

enum class Side { Buy, Sell };

std::string_view to_string(Side side);
std::optional<Side> parse_side(std::string_view text);

/// One trade as exported from the chain.
struct BettingRecord {
    std::string tx_hash;
    Timestamp timestamp = 0;
    std::string event_id;
    std::string market_id;
    Side side = Side::Buy;
    std::string outcome;
    double shares = 0.0;    // share units
    double price = 0.0;     // USDC per share, in [0, 1]
    double usdc_size = 0.0; // USDC
    std::string address;

    bool operator==(const BettingRecord&) const = default;
};

/// Total order used everywhere records are sorted: (timestamp, tx_hash), then
/// the remaining fields so that fills sharing a transaction hash still sort
/// deterministically.
bool record_less(const BettingRecord& a, const BettingRecord& b);

struct MarketMeta {
    std::string market_id;
    std::string event_id;
    std::optional<std::int64_t> category_id;
    std::string name;
    std::optional<Timestamp> close_time;
    std::optional<std::string> resolved_outcome;

    bool operator==(const MarketMeta&) const = default;
};

struct EventMeta {
    std::string event_id;
    std::int64_t category_id = 0;
    std::string name;

    bool operator==(const EventMeta&) const = default;
};

enum class DiagnosticKind {
    InvalidEncoding,
    MalformedRow,
    MissingField,
    BadNumber,
    BadTimestamp,
    BadSide,
    PriceOutOfRange,
    NegativeAmount,
    InconsistentSize,
    DuplicateKey,
    ResolvedWithoutClose,
    NegativeCategory,
    OrphanRecord,
    UnmatchedCategory,
};

std::string_view to_string(DiagnosticKind kind);

struct ParseDiagnostic {
    std::size_t line = 0; // 1-based; 0 when not tied to an input line
    DiagnosticKind kind = DiagnosticKind::MalformedRow;
    std::string message;
    bool warning = false; // warnings keep the row, everything else drops it

    bool operator==(const ParseDiagnostic&) const = default;
};

template <typename T>
struct Parsed {
    std::vector<T> items;
    std::vector<ParseDiagnostic> diagnostics;
};

enum class RecordFormat { Csv, Jsonl };

struct ParseOptions {
    /// Tolerance for |usdc_size - shares * price| before a warning is raised.
    double consistency_epsilon = 0.01;
};

inline constexpr std::string_view kRecordColumns[] = {"tx_hash", "timestamp", "event_id",  "market_id", "side",
                                                      "outcome", "shares",    "price",     "usdc_size", "address"};

/// Parses betting records. Never aborts on malformed content: every bad row
/// becomes a diagnostic. Throws UnreadableSource if the stream cannot be read
/// and SchemaMismatch if the CSV header lacks a required column.
Parsed<BettingRecord> parse_records(std::istream& in, RecordFormat format, const ParseOptions& options = {});
Parsed<BettingRecord> parse_records(std::string_view bytes, RecordFormat format, const ParseOptions& options = {});

void write_records(std::ostream& out, std::span<const BettingRecord> records, RecordFormat format);

Parsed<MarketMeta> parse_markets(std::istream& in);
void write_markets(std::ostream& out, std::span<const MarketMeta> markets);

Parsed<EventMeta> parse_events(std::istream& in);
void write_events(std::ostream& out, std::span<const EventMeta> events);

/// Static name-pattern to category-id table. Lookup picks the longest pattern
/// contained in the name; equal lengths resolve to the lexicographically
/// smallest pattern. Matching is case-sensitive.
class CategoryMap {
public:
    static Parsed<std::pair<std::string, std::int64_t>> parse(std::istream& in);
    static CategoryMap from_entries(std::span<const std::pair<std::string, std::int64_t>> entries);

    /// Returns false if the pattern is already present.
    bool add(std::string pattern, std::int64_t category_id);
    std::optional<std::int64_t> lookup(std::string_view name) const;
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

private:
    std::map<std::string, std::int64_t, std::less<>> entries_;
};

struct FillReport {
    std::vector<MarketMeta> markets;
    std::vector<std::string> unmatched; // market ids still lacking a category
};

FillReport fill_categories(std::vector<MarketMeta> markets, const CategoryMap& map);

/// Immutable, indexed view over validated records and their metadata.
class Dataset {
public:
    using Index = std::map<std::string, std::vector<std::size_t>, std::less<>>;

    const std::vector<BettingRecord>& records() const { return records_; }
    const std::map<std::string, MarketMeta, std::less<>>& markets() const { return markets_; }
    const std::map<std::string, EventMeta, std::less<>>& events() const { return events_; }
    const Index& by_address() const { return by_address_; }
    const Index& by_market() const { return by_market_; }
    const Index& by_event() const { return by_event_; }
    const std::vector<BettingRecord>& quarantined() const { return quarantined_; }
    const std::vector<ParseDiagnostic>& diagnostics() const { return diagnostics_; }

    const MarketMeta* market(std::string_view id) const;
    const EventMeta* event(std::string_view id) const;

    /// Records at the given indices, in dataset order.
    std::vector<BettingRecord> select(std::span<const std::size_t> indices) const;
    std::vector<BettingRecord> trades_of_event(std::string_view event_id) const;
    std::vector<BettingRecord> trades_of_market(std::string_view market_id) const;

    bool operator==(const Dataset& other) const;

private:
    friend Dataset build_dataset(std::vector<BettingRecord>, std::vector<MarketMeta>, std::vector<EventMeta>, bool);

    std::vector<BettingRecord> records_;
    std::map<std::string, MarketMeta, std::less<>> markets_;
    std::map<std::string, EventMeta, std::less<>> events_;
    Index by_address_;
    Index by_market_;
    Index by_event_;
    std::vector<BettingRecord> quarantined_;
    std::vector<ParseDiagnostic> diagnostics_;
};

/// Sorts records by record_less, indexes them and quarantines records whose
/// market is unknown. Throws EmptyInput when no record survives unless
/// `allow_empty` is set.
Dataset build_dataset(std::vector<BettingRecord> records, std::vector<MarketMeta> markets,
                      std::vector<EventMeta> events, bool allow_empty = false);

/// Dataset directory layout: records.csv (or records.jsonl), markets.jsonl,
/// and optionally events.jsonl.
Dataset load_dataset(const std::filesystem::path& dir, const ParseOptions& options = {});
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

} // namespace polylean::ingest
