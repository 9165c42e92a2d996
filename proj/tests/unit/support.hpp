#pragma once

#include "polylean/ingest.hpp"

#include <filesystem>
#include <string>

namespace polylean::test {

inline ingest::BettingRecord trade(std::string tx, Timestamp t, std::string address, std::string outcome,
                                   ingest::Side side, double shares, double price,
                                   std::string market = "m1", std::string event = "e1") {
    ingest::BettingRecord r;
    r.tx_hash = std::move(tx);
    r.timestamp = t;
    r.event_id = std::move(event);
    r.market_id = std::move(market);
    r.side = side;
    r.outcome = std::move(outcome);
    r.shares = shares;
    r.price = price;
    r.usdc_size = shares * price;
    r.address = std::move(address);
    return r;
}

inline ingest::MarketMeta market(std::string id, std::string event, std::optional<std::int64_t> category = {},
                                 std::optional<std::string> resolved = {}, std::optional<Timestamp> close = {}) {
    ingest::MarketMeta m;
    m.market_id = std::move(id);
    m.event_id = std::move(event);
    m.category_id = category;
    m.resolved_outcome = std::move(resolved);
    m.close_time = close;
    if (m.resolved_outcome && !m.close_time) m.close_time = 4'000'000'000;
    m.name = m.market_id;
    return m;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("polylean-" + tag + "-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace polylean::test
