#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <string>
#include <string_view>

namespace polylean::ingest {

struct FetchOptions {
    std::size_t page_size = 100;
    int max_retries = 3;
    std::chrono::milliseconds backoff_base{200};
    std::chrono::seconds timeout{30};
    /// Replaceable for tests; defaults to std::this_thread::sleep_for.
    std::function<void(std::chrono::milliseconds)> sleep;
};

struct FetchResult {
    std::string jsonl;
    std::size_t requests = 0;
    std::size_t retries = 0;
    std::size_t items = 0;
};

/// Pulls every page of a JSON-array endpoint using `offset`/`limit` query
/// parameters and concatenates the items as JSONL. Stops at the first page
/// shorter than `page_size`. Connection failures, 5xx and 429 responses are
/// retried with exponential backoff (base * 2^attempt).
///
/// Throws NetworkError once retries are exhausted (or on a non-retryable
/// status) and MalformedPage when a body is not a JSON array.
FetchResult fetch_paginated(std::string_view endpoint, const FetchOptions& options = {});

} // namespace polylean::ingest
