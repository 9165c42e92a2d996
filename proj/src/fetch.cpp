#include "polylean/fetch.hpp"

#include "polylean/error.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <thread>

namespace polylean::ingest {

namespace {

struct SplitUrl {
    std::string origin; // scheme://host[:port]
    std::string path;   // path plus any query
};

SplitUrl split_url(std::string_view url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos) throw Error(ErrorCode::NetworkError, "endpoint must be an absolute URL");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string_view::npos) return {std::string(url), "/"};
    return {std::string(url.substr(0, path_start)), std::string(url.substr(path_start))};
}

bool retryable(int status) { return status == 429 || status >= 500; }

} // namespace

FetchResult fetch_paginated(std::string_view endpoint, const FetchOptions& options) {
    if (options.page_size == 0) throw Error(ErrorCode::NetworkError, "page size must be positive");
    const auto url = split_url(endpoint);
    httplib::Client client(url.origin);
    client.set_connection_timeout(options.timeout);
    client.set_read_timeout(options.timeout);
    client.set_follow_location(true);
    auto sleep = options.sleep ? options.sleep : [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };

    FetchResult result;
    const char sep = url.path.find('?') == std::string::npos ? '?' : '&';
    for (std::size_t offset = 0;; offset += options.page_size) {
        const auto target = url.path + sep + "offset=" + std::to_string(offset) +
                            "&limit=" + std::to_string(options.page_size);
        std::string body;
        for (int attempt = 0;; ++attempt) {
            ++result.requests;
            auto res = client.Get(target);
            std::string failure;
            if (!res) {
                failure = "request failed: " + httplib::to_string(res.error());
            } else if (res->status == 200) {
                body = std::move(res->body);
                break;
            } else if (!retryable(res->status)) {
                throw Error(ErrorCode::NetworkError, "HTTP " + std::to_string(res->status) + " for " + target);
            } else {
                failure = "HTTP " + std::to_string(res->status);
            }
            if (attempt >= options.max_retries)
                throw Error(ErrorCode::NetworkError, failure + " after " + std::to_string(attempt) + " retries");
            ++result.retries;
            sleep(options.backoff_base * (1LL << std::min(attempt, 20)));
        }
        auto page = nlohmann::json::parse(body, nullptr, false);
        if (page.is_discarded() || !page.is_array())
            throw Error(ErrorCode::MalformedPage, "page at offset " + std::to_string(offset) + " is not a JSON array");
        for (const auto& item : page) {
            result.jsonl += item.dump();
            result.jsonl += '\n';
        }
        result.items += page.size();
        if (page.size() < options.page_size) break;
    }
    return result;
}

} // namespace polylean::ingest
