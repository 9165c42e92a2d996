#include "polylean/time_util.hpp"

#include "polylean/numeric.hpp"

#include <chrono>
#include <cstdio>

namespace polylean {

namespace {

std::optional<int> digits(std::string_view s, std::size_t pos, std::size_t count) {
    if (pos + count > s.size()) return std::nullopt;
    int v = 0;
    for (std::size_t i = pos; i < pos + count; ++i) {
        if (s[i] < '0' || s[i] > '9') return std::nullopt;
        v = v * 10 + (s[i] - '0');
    }
    return v;
}

} // namespace

std::optional<Timestamp> parse_time(std::string_view s) {
    if (s.size() < 10 || s[4] != '-') {
        if (auto epoch = parse_int(s)) return static_cast<Timestamp>(*epoch);
        return std::nullopt;
    }
    auto y = digits(s, 0, 4), mo = digits(s, 5, 2), d = digits(s, 8, 2);
    if (!y || !mo || !d || s[7] != '-') return std::nullopt;
    const std::chrono::year_month_day ymd{std::chrono::year{*y}, std::chrono::month{static_cast<unsigned>(*mo)},
                                          std::chrono::day{static_cast<unsigned>(*d)}};
    if (!ymd.ok()) return std::nullopt;
    Timestamp t = std::chrono::sys_days{ymd}.time_since_epoch().count() * kSecondsPerDay;
    std::size_t pos = 10;
    if (pos == s.size()) return t;
    if (s[pos] != 'T' && s[pos] != ' ') return std::nullopt;
    ++pos;
    auto hh = digits(s, pos, 2), mm = digits(s, pos + 3, 2);
    if (!hh || !mm || s.size() < pos + 5 || s[pos + 2] != ':' || *hh > 23 || *mm > 59) return std::nullopt;
    t += *hh * 3600 + *mm * 60;
    pos += 5;
    if (pos < s.size() && s[pos] == ':') {
        auto ss = digits(s, pos + 1, 2);
        if (!ss || *ss > 60) return std::nullopt;
        t += *ss;
        pos += 3;
    }
    if (pos == s.size()) return t;
    if (s[pos] == 'Z' && pos + 1 == s.size()) return t;
    if ((s[pos] == '+' || s[pos] == '-') && s.size() == pos + 6 && s[pos + 3] == ':') {
        auto oh = digits(s, pos + 1, 2), om = digits(s, pos + 4, 2);
        if (!oh || !om) return std::nullopt;
        const Timestamp offset = *oh * 3600 + *om * 60;
        return s[pos] == '+' ? t - offset : t + offset;
    }
    return std::nullopt;
}

std::string format_time(Timestamp t) {
    const Timestamp day = floor_to_day(t);
    const Timestamp secs = t - day;
    const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{day / kSecondsPerDay}}};
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lldZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long long>(secs / 3600), static_cast<long long>((secs / 60) % 60),
                  static_cast<long long>(secs % 60));
    return buf;
}

Timestamp floor_to_day(Timestamp t) {
    Timestamp q = t / kSecondsPerDay;
    if (t % kSecondsPerDay < 0) --q;
    return q * kSecondsPerDay;
}

} // namespace polylean
