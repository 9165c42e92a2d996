#include "polylean/csv.hpp"
#include "polylean/error.hpp"
#include "polylean/io.hpp"
#include "polylean/numeric.hpp"
#include "polylean/parallel.hpp"
#include "polylean/rng.hpp"
#include "polylean/time_util.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

using namespace polylean;

TEST_CASE("rng streams are reproducible and distinct") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next();
        CHECK(x == b.next());
        CHECK(x != c.next());
    }
    auto d0 = Rng::derive(42, 0);
    auto d1 = Rng::derive(42, 1);
    auto d0_again = Rng::derive(42, 0);
    CHECK(d0.next() == d0_again.next());
    CHECK(d0.next() != d1.next());
}

TEST_CASE("rng uniform and integer stay in range") {
    Rng r(7);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const auto k = r.integer(-3, 3);
        CHECK(k >= -3);
        CHECK(k <= 3);
        CHECK(r.below(5) < 5u);
    }
}

TEST_CASE("rng distribution moments") {
    Rng r(11);
    constexpr int n = 200000;
    double sum = 0.0, sq = 0.0, pois = 0.0, expo = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        sum += z;
        sq += z * z;
        pois += static_cast<double>(r.poisson(3.5));
        expo += r.exponential(2.0);
    }
    CHECK(sum / n == doctest::Approx(0.0).epsilon(0.01).scale(1.0));
    CHECK(sq / n == doctest::Approx(1.0).epsilon(0.01));
    CHECK(pois / n == doctest::Approx(3.5).epsilon(0.01));
    CHECK(expo / n == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("rng weighted index follows the weights") {
    Rng r(5);
    const std::vector<double> cumulative{1.0, 1.0, 4.0};
    std::array<int, 3> counts{};
    for (int i = 0; i < 40000; ++i) ++counts[r.weighted_index(cumulative)];
    CHECK(counts[1] == 0);
    CHECK(static_cast<double>(counts[0]) / 40000.0 == doctest::Approx(0.25).epsilon(0.03));
}

TEST_CASE("time parsing accepts the documented forms") {
    CHECK(parse_time("2022-11-08") == 1667865600);
    CHECK(parse_time("2024-01-04T00:00:00Z") == 1704326400);
    CHECK(parse_time("2024-01-04T01:00:00+01:00") == 1704326400);
    CHECK(parse_time("2024-01-04T00:00") == 1704326400);
    CHECK(parse_time("1704326400") == 1704326400);
    CHECK_FALSE(parse_time("2024-13-01").has_value());
    CHECK_FALSE(parse_time("yesterday").has_value());
    CHECK(format_time(1704326400) == "2024-01-04T00:00:00Z");
    CHECK(floor_to_day(1704326400 + 3600) == 1704326400);
    CHECK(floor_to_day(-1) == -kSecondsPerDay);
}

TEST_CASE("format_double round-trips") {
    Rng r(3);
    for (int i = 0; i < 1000; ++i) {
        const double x = r.normal(0.0, 1e6) * r.uniform();
        CHECK(parse_double(format_double(x)) == x);
    }
    CHECK(format_double(0.1) == "0.1");
    CHECK_FALSE(parse_double("1.5x").has_value());
    CHECK_FALSE(parse_int("12.0").has_value());
    CHECK(parse_int("-12") == -12);
}

TEST_CASE("compensated sum recovers cancelled digits") {
    CompensatedSum s;
    s += 1e16;
    for (int i = 0; i < 1000; ++i) s += 1.0;
    s += -1e16;
    CHECK(s.value() == 1000.0);
}

TEST_CASE("csv split and escape") {
    auto f = csv::split(R"(a,"b,c","d""e",)");
    REQUIRE(f.has_value());
    CHECK(*f == std::vector<std::string>{"a", "b,c", "d\"e", ""});
    CHECK_FALSE(csv::split(R"(a,"unterminated)").has_value());
    CHECK(csv::escape("plain") == "plain");
    CHECK(csv::escape("x,y") == "\"x,y\"");
    CHECK(*csv::split(csv::escape("q\"uote,")) == std::vector<std::string>{"q\"uote,"});
}

TEST_CASE("atomic write replaces content") {
    test::TempDir dir("io");
    const auto p = dir.path() / "nested" / "file.txt";
    io::write_file_atomic(p, "one");
    io::write_file_atomic(p, "two");
    CHECK(io::read_file(p) == "two");
    CHECK_THROWS_AS(io::read_file(dir.path() / "missing"), Error);
}

TEST_CASE("parallel_for covers every index and rethrows the lowest failure") {
    std::vector<int> out(1000, 0);
    parallel_for(out.size(), 4, [&](std::size_t i) { out[i] = static_cast<int>(i); });
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == static_cast<int>(i));
    try {
        parallel_for(100, 4, [](std::size_t i) {
            if (i == 17 || i == 60) throw std::runtime_error(std::to_string(i));
        });
        FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()) == "17");
    }
}
