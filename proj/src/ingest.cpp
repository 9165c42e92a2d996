#include "polylean/ingest.hpp"

#include "polylean/csv.hpp"
#include "polylean/error.hpp"
#include "polylean/io.hpp"
#include "polylean/numeric.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <tuple>

namespace polylean::ingest {

using nlohmann::json;

std::string_view to_string(Side side) { return side == Side::Buy ? "buy" : "sell"; }

std::optional<Side> parse_side(std::string_view text) {
    std::string lower(text);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "buy") return Side::Buy;
    if (lower == "sell") return Side::Sell;
    return std::nullopt;
}

bool record_less(const BettingRecord& a, const BettingRecord& b) {
    auto key = [](const BettingRecord& r) {
        return std::tie(r.timestamp, r.tx_hash, r.address, r.market_id, r.event_id, r.outcome, r.side, r.shares,
                        r.price, r.usdc_size);
    };
    return key(a) < key(b);
}

std::string_view to_string(DiagnosticKind kind) {
    switch (kind) {
    case DiagnosticKind::InvalidEncoding: return "InvalidEncoding";
    case DiagnosticKind::MalformedRow: return "MalformedRow";
    case DiagnosticKind::MissingField: return "MissingField";
    case DiagnosticKind::BadNumber: return "BadNumber";
    case DiagnosticKind::BadTimestamp: return "BadTimestamp";
    case DiagnosticKind::BadSide: return "BadSide";
    case DiagnosticKind::PriceOutOfRange: return "PriceOutOfRange";
    case DiagnosticKind::NegativeAmount: return "NegativeAmount";
    case DiagnosticKind::InconsistentSize: return "InconsistentSize";
    case DiagnosticKind::DuplicateKey: return "DuplicateKey";
    case DiagnosticKind::ResolvedWithoutClose: return "ResolvedWithoutClose";
    case DiagnosticKind::NegativeCategory: return "NegativeCategory";
    case DiagnosticKind::OrphanRecord: return "OrphanRecord";
    case DiagnosticKind::UnmatchedCategory: return "UnmatchedCategory";
    }
    return "Unknown";
}

namespace {

bool valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c >> 5) == 0x6) {
            len = 2;
            cp = c & 0x1f;
        } else if ((c >> 4) == 0xe) {
            len = 3;
            cp = c & 0x0f;
        } else if ((c >> 3) == 0x1e) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > s.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc >> 6) != 0x2) return false;
            cp = (cp << 6) | (cc & 0x3f);
        }
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && (cp < 0x10000 || cp > 0x10ffff)) ||
            (cp >= 0xd800 && cp <= 0xdfff))
            return false;
        i += len;
    }
    return true;
}

/// Reads the stream line by line, stripping a UTF-8 BOM and trailing CR.
class LineReader {
public:
    explicit LineReader(std::istream& in) : in_(in) {
        if (!in_.good()) throw Error(ErrorCode::UnreadableSource, "input stream is not readable");
    }
    bool next(std::string& line) {
        if (!std::getline(in_, line)) {
            if (in_.bad()) throw Error(ErrorCode::UnreadableSource, "read error");
            return false;
        }
        ++number_;
        if (number_ == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    }
    std::size_t number() const { return number_; }

private:
    std::istream& in_;
    std::size_t number_ = 0;
};

bool blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

/// Raw textual field values keyed by canonical column name.
using RawRow = std::array<std::optional<std::string>, std::size(kRecordColumns)>;

enum Col { kTx, kTs, kEvent, kMarket, kSide, kOutcome, kShares, kPrice, kUsdc, kAddress };

struct RowOutcome {
    std::optional<BettingRecord> record;
    std::vector<ParseDiagnostic> diagnostics;
};

RowOutcome validate_row(const RawRow& raw, std::size_t line, const ParseOptions& options) {
    RowOutcome out;
    auto fail = [&](DiagnosticKind kind, std::string msg) {
        out.diagnostics.push_back({line, kind, std::move(msg), false});
        return out;
    };
    for (std::size_t c = 0; c < raw.size(); ++c) {
        if (!raw[c] || raw[c]->empty())
            return fail(DiagnosticKind::MissingField, "missing " + std::string(kRecordColumns[c]));
    }
    BettingRecord r;
    r.tx_hash = *raw[kTx];
    r.event_id = *raw[kEvent];
    r.market_id = *raw[kMarket];
    r.outcome = *raw[kOutcome];
    r.address = *raw[kAddress];
    auto ts = parse_time(*raw[kTs]);
    if (!ts) return fail(DiagnosticKind::BadTimestamp, "unparseable timestamp '" + *raw[kTs] + "'");
    r.timestamp = *ts;
    auto side = parse_side(*raw[kSide]);
    if (!side) return fail(DiagnosticKind::BadSide, "side must be buy or sell, got '" + *raw[kSide] + "'");
    r.side = *side;
    auto shares = parse_double(*raw[kShares]);
    auto price = parse_double(*raw[kPrice]);
    auto usdc = parse_double(*raw[kUsdc]);
    if (!shares || !price || !usdc) return fail(DiagnosticKind::BadNumber, "non-numeric shares/price/usdc_size");
    if (*price < 0.0 || *price > 1.0)
        return fail(DiagnosticKind::PriceOutOfRange, "price " + *raw[kPrice] + " outside [0, 1]");
    if (*shares < 0.0 || *usdc < 0.0) return fail(DiagnosticKind::NegativeAmount, "negative shares or usdc_size");
    r.shares = *shares;
    r.price = *price;
    r.usdc_size = *usdc;
    if (std::abs(r.usdc_size - r.shares * r.price) > options.consistency_epsilon) {
        out.diagnostics.push_back({line, DiagnosticKind::InconsistentSize,
                                   "usdc_size " + format_double(r.usdc_size) + " differs from shares*price " +
                                       format_double(r.shares * r.price),
                                   true});
    }
    out.record = std::move(r);
    return out;
}

std::optional<std::string> json_text(const json& obj, std::string_view key) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (it->is_string()) return it->get<std::string>();
    if (it->is_number_integer() || it->is_number_unsigned()) return it->dump();
    if (it->is_number_float()) return format_double(it->get<double>());
    if (it->is_boolean()) return it->dump();
    return std::nullopt;
}

void append(std::vector<ParseDiagnostic>& dst, std::vector<ParseDiagnostic>&& src) {
    dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
}

std::optional<Timestamp> json_time(const json& v) {
    if (v.is_number_integer() || v.is_number_unsigned()) return v.get<Timestamp>();
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (std::floor(d) == d && std::abs(d) < 9e15) return static_cast<Timestamp>(d);
        return std::nullopt;
    }
    if (v.is_string()) return parse_time(v.get<std::string>());
    return std::nullopt;
}

/// Parses a JSONL line into an object, recording diagnostics on failure.
std::optional<json> parse_object_line(const std::string& line, std::size_t number,
                                      std::vector<ParseDiagnostic>& diags) {
    if (!valid_utf8(line)) {
        diags.push_back({number, DiagnosticKind::InvalidEncoding, "line is not valid UTF-8", false});
        return std::nullopt;
    }
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) {
        diags.push_back({number, DiagnosticKind::MalformedRow, "line is not a JSON object", false});
        return std::nullopt;
    }
    return obj;
}

} // namespace

Parsed<BettingRecord> parse_records(std::istream& in, RecordFormat format, const ParseOptions& options) {
    Parsed<BettingRecord> result;
    LineReader reader(in);
    std::string line;

    if (format == RecordFormat::Csv) {
        std::array<std::optional<std::size_t>, std::size(kRecordColumns)> position;
        bool have_header = false;
        while (!have_header) {
            if (!reader.next(line)) throw Error(ErrorCode::SchemaMismatch, "CSV input has no header row");
            if (blank(line)) continue;
            auto header = valid_utf8(line) ? csv::split(line) : std::nullopt;
            if (!header) throw Error(ErrorCode::SchemaMismatch, "CSV header is malformed");
            for (std::size_t i = 0; i < header->size(); ++i) {
                for (std::size_t c = 0; c < std::size(kRecordColumns); ++c) {
                    if ((*header)[i] == kRecordColumns[c] && !position[c]) position[c] = i;
                }
            }
            for (std::size_t c = 0; c < std::size(kRecordColumns); ++c) {
                if (!position[c])
                    throw Error(ErrorCode::SchemaMismatch, "CSV header lacks column " + std::string(kRecordColumns[c]));
            }
            have_header = true;
        }
        while (reader.next(line)) {
            if (blank(line)) continue;
            if (!valid_utf8(line)) {
                result.diagnostics.push_back(
                    {reader.number(), DiagnosticKind::InvalidEncoding, "line is not valid UTF-8", false});
                continue;
            }
            auto fields = csv::split(line);
            if (!fields) {
                result.diagnostics.push_back({reader.number(), DiagnosticKind::MalformedRow, "bad CSV quoting", false});
                continue;
            }
            RawRow raw;
            for (std::size_t c = 0; c < raw.size(); ++c) {
                if (*position[c] < fields->size()) raw[c] = (*fields)[*position[c]];
            }
            auto row = validate_row(raw, reader.number(), options);
            append(result.diagnostics, std::move(row.diagnostics));
            if (row.record) result.items.push_back(std::move(*row.record));
        }
        return result;
    }

    while (reader.next(line)) {
        if (blank(line)) continue;
        auto obj = parse_object_line(line, reader.number(), result.diagnostics);
        if (!obj) continue;
        RawRow raw;
        for (std::size_t c = 0; c < raw.size(); ++c) raw[c] = json_text(*obj, kRecordColumns[c]);
        auto row = validate_row(raw, reader.number(), options);
        append(result.diagnostics, std::move(row.diagnostics));
        if (row.record) result.items.push_back(std::move(*row.record));
    }
    return result;
}

Parsed<BettingRecord> parse_records(std::string_view bytes, RecordFormat format, const ParseOptions& options) {
    std::istringstream in{std::string(bytes)};
    return parse_records(in, format, options);
}

void write_records(std::ostream& out, std::span<const BettingRecord> records, RecordFormat format) {
    if (format == RecordFormat::Csv) {
        for (std::size_t c = 0; c < std::size(kRecordColumns); ++c) out << (c ? "," : "") << kRecordColumns[c];
        out << '\n';
        for (const auto& r : records) {
            out << csv::escape(r.tx_hash) << ',' << r.timestamp << ',' << csv::escape(r.event_id) << ','
                << csv::escape(r.market_id) << ',' << to_string(r.side) << ',' << csv::escape(r.outcome) << ','
                << format_double(r.shares) << ',' << format_double(r.price) << ',' << format_double(r.usdc_size)
                << ',' << csv::escape(r.address) << '\n';
        }
        return;
    }
    for (const auto& r : records) {
        json obj = {{"tx_hash", r.tx_hash},   {"timestamp", r.timestamp}, {"event_id", r.event_id},
                    {"market_id", r.market_id}, {"side", to_string(r.side)}, {"outcome", r.outcome},
                    {"shares", r.shares},     {"price", r.price},         {"usdc_size", r.usdc_size},
                    {"address", r.address}};
        out << obj.dump() << '\n';
    }
}

Parsed<MarketMeta> parse_markets(std::istream& in) {
    Parsed<MarketMeta> result;
    LineReader reader(in);
    std::string line;
    while (reader.next(line)) {
        if (blank(line)) continue;
        auto obj = parse_object_line(line, reader.number(), result.diagnostics);
        if (!obj) continue;
        const auto n = reader.number();
        MarketMeta m;
        auto id = json_text(*obj, "market_id");
        auto event = json_text(*obj, "event_id");
        if (!id || id->empty() || !event) {
            result.diagnostics.push_back({n, DiagnosticKind::MissingField, "market_id and event_id are required", false});
            continue;
        }
        m.market_id = *id;
        m.event_id = *event;
        m.name = json_text(*obj, "name").value_or("");
        if (auto it = obj->find("category_id"); it != obj->end() && !it->is_null()) {
            if (!it->is_number_integer() && !it->is_number_unsigned()) {
                result.diagnostics.push_back({n, DiagnosticKind::BadNumber, "category_id must be an integer", false});
                continue;
            }
            m.category_id = it->get<std::int64_t>();
            if (*m.category_id < 0) {
                result.diagnostics.push_back({n, DiagnosticKind::NegativeCategory, "negative category_id", false});
                continue;
            }
        }
        if (auto it = obj->find("close_time"); it != obj->end() && !it->is_null()) {
            m.close_time = json_time(*it);
            if (!m.close_time) {
                result.diagnostics.push_back({n, DiagnosticKind::BadTimestamp, "unparseable close_time", false});
                continue;
            }
        }
        m.resolved_outcome = json_text(*obj, "resolved_outcome");
        if (m.resolved_outcome && !m.close_time) {
            result.diagnostics.push_back(
                {n, DiagnosticKind::ResolvedWithoutClose, "resolved_outcome without close_time; resolution dropped", true});
            m.resolved_outcome.reset();
        }
        result.items.push_back(std::move(m));
    }
    return result;
}

void write_markets(std::ostream& out, std::span<const MarketMeta> markets) {
    for (const auto& m : markets) {
        json obj = {{"market_id", m.market_id}, {"event_id", m.event_id}, {"name", m.name}};
        obj["category_id"] = m.category_id ? json(*m.category_id) : json(nullptr);
        obj["close_time"] = m.close_time ? json(*m.close_time) : json(nullptr);
        obj["resolved_outcome"] = m.resolved_outcome ? json(*m.resolved_outcome) : json(nullptr);
        out << obj.dump() << '\n';
    }
}

Parsed<EventMeta> parse_events(std::istream& in) {
    Parsed<EventMeta> result;
    LineReader reader(in);
    std::string line;
    while (reader.next(line)) {
        if (blank(line)) continue;
        auto obj = parse_object_line(line, reader.number(), result.diagnostics);
        if (!obj) continue;
        const auto n = reader.number();
        auto id = json_text(*obj, "event_id");
        auto cat = obj->find("category_id");
        if (!id || id->empty() || cat == obj->end() || cat->is_null()) {
            result.diagnostics.push_back({n, DiagnosticKind::MissingField, "event_id and category_id are required", false});
            continue;
        }
        if (!cat->is_number_integer() && !cat->is_number_unsigned()) {
            result.diagnostics.push_back({n, DiagnosticKind::BadNumber, "category_id must be an integer", false});
            continue;
        }
        EventMeta e{*id, cat->get<std::int64_t>(), json_text(*obj, "name").value_or("")};
        if (e.category_id < 0) {
            result.diagnostics.push_back({n, DiagnosticKind::NegativeCategory, "negative category_id", false});
            continue;
        }
        result.items.push_back(std::move(e));
    }
    return result;
}

void write_events(std::ostream& out, std::span<const EventMeta> events) {
    for (const auto& e : events) {
        json obj = {{"event_id", e.event_id}, {"category_id", e.category_id}, {"name", e.name}};
        out << obj.dump() << '\n';
    }
}

Parsed<std::pair<std::string, std::int64_t>> CategoryMap::parse(std::istream& in) {
    Parsed<std::pair<std::string, std::int64_t>> result;
    LineReader reader(in);
    std::string line;
    std::map<std::string, std::size_t, std::less<>> seen;
    while (reader.next(line)) {
        if (blank(line)) continue;
        auto obj = parse_object_line(line, reader.number(), result.diagnostics);
        if (!obj) continue;
        auto pattern = obj->find("pattern");
        auto cat = obj->find("category_id");
        if (pattern == obj->end() || !pattern->is_string() || pattern->get<std::string>().empty() ||
            cat == obj->end() || !(cat->is_number_integer() || cat->is_number_unsigned())) {
            result.diagnostics.push_back(
                {reader.number(), DiagnosticKind::MissingField, "pattern and integer category_id are required", false});
            continue;
        }
        auto p = pattern->get<std::string>();
        if (seen.contains(p)) {
            result.diagnostics.push_back({reader.number(), DiagnosticKind::DuplicateKey, "duplicate pattern '" + p + "'", false});
            continue;
        }
        seen.emplace(p, reader.number());
        result.items.emplace_back(std::move(p), cat->get<std::int64_t>());
    }
    return result;
}

CategoryMap CategoryMap::from_entries(std::span<const std::pair<std::string, std::int64_t>> entries) {
    CategoryMap map;
    for (const auto& [pattern, id] : entries) map.add(pattern, id);
    return map;
}

bool CategoryMap::add(std::string pattern, std::int64_t category_id) {
    return entries_.emplace(std::move(pattern), category_id).second;
}

std::optional<std::int64_t> CategoryMap::lookup(std::string_view name) const {
    const std::pair<const std::string, std::int64_t>* best = nullptr;
    // entries_ iterates in lexicographic order, so a strict length comparison
    // keeps the lexicographically smallest among equal-length matches.
    for (const auto& entry : entries_) {
        if (name.find(entry.first) == std::string_view::npos) continue;
        if (!best || entry.first.size() > best->first.size()) best = &entry;
    }
    if (!best) return std::nullopt;
    return best->second;
}

FillReport fill_categories(std::vector<MarketMeta> markets, const CategoryMap& map) {
    FillReport report;
    for (auto& m : markets) {
        if (!m.category_id) {
            m.category_id = map.lookup(m.name);
            if (!m.category_id) report.unmatched.push_back(m.market_id);
        }
    }
    report.markets = std::move(markets);
    return report;
}

const MarketMeta* Dataset::market(std::string_view id) const {
    auto it = markets_.find(id);
    return it == markets_.end() ? nullptr : &it->second;
}

const EventMeta* Dataset::event(std::string_view id) const {
    auto it = events_.find(id);
    return it == events_.end() ? nullptr : &it->second;
}

std::vector<BettingRecord> Dataset::select(std::span<const std::size_t> indices) const {
    std::vector<BettingRecord> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(records_[i]);
    return out;
}

std::vector<BettingRecord> Dataset::trades_of_event(std::string_view event_id) const {
    auto it = by_event_.find(event_id);
    if (it == by_event_.end()) return {};
    return select(it->second);
}

std::vector<BettingRecord> Dataset::trades_of_market(std::string_view market_id) const {
    auto it = by_market_.find(market_id);
    if (it == by_market_.end()) return {};
    return select(it->second);
}

bool Dataset::operator==(const Dataset& o) const {
    return records_ == o.records_ && markets_ == o.markets_ && events_ == o.events_ && by_address_ == o.by_address_ &&
           by_market_ == o.by_market_ && by_event_ == o.by_event_ && quarantined_ == o.quarantined_ &&
           diagnostics_ == o.diagnostics_;
}

Dataset build_dataset(std::vector<BettingRecord> records, std::vector<MarketMeta> markets,
                      std::vector<EventMeta> events, bool allow_empty) {
    Dataset ds;
    // Duplicate ids keep the smallest entry under a total order so the result
    // does not depend on input order.
    std::sort(markets.begin(), markets.end(), [](const MarketMeta& a, const MarketMeta& b) {
        return std::tie(a.market_id, a.event_id, a.name, a.category_id, a.close_time, a.resolved_outcome) <
               std::tie(b.market_id, b.event_id, b.name, b.category_id, b.close_time, b.resolved_outcome);
    });
    for (auto& m : markets) {
        if (!ds.markets_.emplace(m.market_id, m).second)
            ds.diagnostics_.push_back({0, DiagnosticKind::DuplicateKey, "duplicate market_id " + m.market_id, false});
    }
    std::sort(events.begin(), events.end(), [](const EventMeta& a, const EventMeta& b) {
        return std::tie(a.event_id, a.category_id, a.name) < std::tie(b.event_id, b.category_id, b.name);
    });
    for (auto& e : events) {
        if (!ds.events_.emplace(e.event_id, e).second)
            ds.diagnostics_.push_back({0, DiagnosticKind::DuplicateKey, "duplicate event_id " + e.event_id, false});
    }

    std::sort(records.begin(), records.end(), record_less);
    ds.records_.reserve(records.size());
    for (auto& r : records) {
        if (!ds.markets_.contains(r.market_id)) {
            ds.diagnostics_.push_back({0, DiagnosticKind::OrphanRecord,
                                       "record " + r.tx_hash + " references unknown market " + r.market_id, false});
            ds.quarantined_.push_back(std::move(r));
            continue;
        }
        ds.records_.push_back(std::move(r));
    }
    if (ds.records_.empty() && !allow_empty) {
        throw Error(ErrorCode::EmptyInput, "no valid records (" + std::to_string(ds.quarantined_.size()) +
                                               " quarantined as orphans)");
    }
    for (std::size_t i = 0; i < ds.records_.size(); ++i) {
        const auto& r = ds.records_[i];
        ds.by_address_[r.address].push_back(i);
        ds.by_market_[r.market_id].push_back(i);
        ds.by_event_[r.event_id].push_back(i);
    }
    return ds;
}

namespace {

template <typename Fn>
auto parse_file(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::UnreadableSource, "cannot open " + path.string());
    return fn(in);
}

} // namespace

Dataset load_dataset(const std::filesystem::path& dir, const ParseOptions& options) {
    namespace fs = std::filesystem;
    Parsed<BettingRecord> records;
    if (fs::exists(dir / "records.csv")) {
        records = parse_file(dir / "records.csv", [&](std::istream& in) {
            return parse_records(in, RecordFormat::Csv, options);
        });
    } else {
        records = parse_file(dir / "records.jsonl", [&](std::istream& in) {
            return parse_records(in, RecordFormat::Jsonl, options);
        });
    }
    auto markets = parse_file(dir / "markets.jsonl", [](std::istream& in) { return parse_markets(in); });
    Parsed<EventMeta> events;
    if (fs::exists(dir / "events.jsonl"))
        events = parse_file(dir / "events.jsonl", [](std::istream& in) { return parse_events(in); });
    return build_dataset(std::move(records.items), std::move(markets.items), std::move(events.items));
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    std::ostringstream rec, mk, ev;
    write_records(rec, dataset.records(), RecordFormat::Csv);
    std::vector<MarketMeta> markets;
    for (const auto& [_, m] : dataset.markets()) markets.push_back(m);
    write_markets(mk, markets);
    std::vector<EventMeta> events;
    for (const auto& [_, e] : dataset.events()) events.push_back(e);
    write_events(ev, events);
    io::write_file_atomic(dir / "records.csv", rec.str());
    io::write_file_atomic(dir / "markets.jsonl", mk.str());
    io::write_file_atomic(dir / "events.jsonl", ev.str());
}

} // namespace polylean::ingest
