#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>

namespace polylean {

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    CompensatedSum& operator+=(double x) {
        add(x);
        return *this;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// Shortest decimal text that parses back to exactly `x`.
std::string format_double(double x);

/// Strict full-string parse; nullopt on any trailing garbage or overflow.
std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

} // namespace polylean
