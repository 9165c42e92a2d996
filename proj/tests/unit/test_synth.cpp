#include "polylean/casestudy.hpp"
#include "polylean/error.hpp"
#include "polylean/io.hpp"
#include "polylean/pbls.hpp"
#include "polylean/synth.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace polylean;

namespace {

synth::SynthConfig small(std::uint64_t seed, std::size_t agents = 80) {
    synth::SynthConfig c;
    c.n_agents = agents;
    c.n_days = 20;
    c.seed = seed;
    return c;
}

pbls::EventScores score(const synth::Generated& g, const synth::SynthConfig& c) {
    pbls::WeightConfig w;
    w.party_map = g.party_map;
    return pbls::score_event(g.dataset, c.political_event, w);
}

} // namespace

TEST_CASE("synth config parsing") {
    const auto c = synth::parse_synth_config(R"({"n_agents": 12, "n_days": 5, "profit_weight": [0.1, 0.3],
                                                 "price_series": {"Democratic": [0.6, 0.61, 0.62, 0.6, 0.59]}})");
    CHECK(c.n_agents == 12);
    CHECK(c.profit_weight_lo == 0.1);
    CHECK(c.profit_weight_hi == 0.3);
    CHECK(c.price_series.at("Democratic").size() == 5);
    CHECK(synth::parse_synth_config(R"({"profit_weight": 0})").profit_weight_hi == 0.0);
    CHECK_THROWS_AS(synth::parse_synth_config(R"({"price_series": {"Democratic": [1.5]}, "n_days": 1})"), Error);
    CHECK_THROWS_AS(synth::parse_synth_config(R"({"n_agents": 0})"), Error);
    CHECK_THROWS_AS(synth::parse_synth_config(R"({"leaning": [-2, 1]})"), Error);

    const auto series = synth::default_dem_series(100);
    CHECK(series.size() == 100);
    for (double p : series) {
        CHECK(p >= 0.52);
        CHECK(p <= 0.9);
    }
}

TEST_CASE("generation is deterministic and honours agent bounds") {
    const auto c = small(7);
    const auto a = synth::generate(c);
    const auto b = synth::generate(c);
    CHECK(a.agents == b.agents);
    CHECK(a.dataset.records() == b.dataset.records());
    CHECK(a.agents.size() == c.n_agents);
    CHECK_FALSE(synth::generate(small(8)).dataset.records() == a.dataset.records());
    const Timestamp end = c.start + c.n_days * kSecondsPerDay;
    for (const auto& agent : a.agents) {
        CHECK(agent.latent_leaning >= -1.0);
        CHECK(agent.latent_leaning <= 1.0);
        CHECK(agent.profit_weight == 0.5);
    }
    for (const auto& r : a.dataset.records()) {
        CHECK(r.timestamp >= c.start);
        CHECK(r.timestamp < end);
        CHECK(r.price >= 0.0);
        CHECK(r.price <= 1.0);
        CHECK(r.usdc_size > 0.0);
    }
    CHECK(a.dataset.quarantined().empty());
    CHECK(a.party_map.at("Democratic") == 1);
    CHECK(a.party_map.at("Republican") == -1);
}

TEST_CASE("pure-belief agents only back their own party") {
    auto c = small(3);
    c.profit_weight_lo = c.profit_weight_hi = 0.0;
    c.leaning_lo = c.leaning_hi = 1.0;
    const auto g = synth::generate(c);
    std::size_t political = 0;
    for (const auto& r : g.dataset.records()) {
        if (r.event_id != c.political_event) continue;
        ++political;
        CHECK(r.outcome == "Democratic");
        CHECK(r.side == ingest::Side::Buy);
    }
    CHECK(political > 0);
}

TEST_CASE("zero activity produces no trades") {
    auto c = small(4);
    c.activity_lo = c.activity_hi = 0.0;
    const auto g = synth::generate(c);
    CHECK(g.dataset.records().empty());
    CHECK(g.agents.size() == c.n_agents);
}

TEST_CASE("generated files parse back without diagnostics") {
    test::TempDir dir("synth");
    const auto g = synth::generate(small(11, 500));
    synth::save_generated(g, dir.path());
    for (auto name : {"records.csv", "markets.jsonl", "events.jsonl", "agents.jsonl", "party_map.json"})
        CHECK(std::filesystem::exists(dir.path() / name));
    std::ifstream records(dir.path() / "records.csv");
    const auto parsed = ingest::parse_records(records, ingest::RecordFormat::Csv);
    CHECK(parsed.diagnostics.empty());
    CHECK(parsed.items.size() == g.dataset.records().size());
    const auto loaded = ingest::load_dataset(dir.path());
    CHECK(loaded.diagnostics().empty());
    CHECK(loaded.records() == g.dataset.records());
    std::ifstream agents(dir.path() / "agents.jsonl");
    CHECK(synth::read_agents(agents) == g.agents);
    CHECK(pbls::parse_party_map(io::read_file(dir.path() / "party_map.json")) == g.party_map);
}

TEST_CASE("agents round-trip") {
    std::vector<synth::AgentSpec> agents{{"0xabc", -0.25, 0.125, 3.5, 2.0, 0.75}, {"0xdef", 1.0, 0.0, 0.0, 3.0, 1.0}};
    std::ostringstream os;
    synth::write_agents(os, agents);
    std::istringstream is(os.str());
    CHECK(synth::read_agents(is) == agents);
}

TEST_CASE("recovery report") {
    std::vector<synth::AgentSpec> agents;
    std::vector<pbls::LeaningScore> scores;
    for (int i = 0; i < 20; ++i) {
        synth::AgentSpec a;
        a.address = "a" + std::to_string(i);
        a.latent_leaning = (i - 10) / 10.0;
        agents.push_back(a);
        pbls::LeaningScore s;
        s.address = a.address;
        s.pbls = std::pow(a.latent_leaning, 3);
        scores.push_back(s);
    }
    const auto r = synth::recovery_report(agents, scores);
    CHECK(r.matched == 20);
    REQUIRE(r.spearman_rho.has_value());
    CHECK(*r.spearman_rho == doctest::Approx(1.0).epsilon(1e-15));
    REQUIRE(r.sign_accuracy.has_value());
    CHECK(*r.sign_accuracy == 1.0);
    CHECK(r.strong == 15);

    for (auto& a : agents) a.latent_leaning = 0.0;
    const auto flat = synth::recovery_report(agents, scores);
    CHECK_FALSE(flat.sign_accuracy.has_value());
    CHECK_FALSE(flat.spearman_rho.has_value());
    try {
        synth::recovery_report(std::span(agents).first(9), scores);
        FAIL("expected InsufficientAgents");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InsufficientAgents);
    }
}

TEST_CASE("pure-belief scores recover every strong sign") {
    auto c = small(21, 200);
    c.profit_weight_lo = c.profit_weight_hi = 0.0;
    const auto g = synth::generate(c);
    const auto r = synth::recovery_report(g.agents, score(g, c).scores);
    REQUIRE(r.sign_accuracy.has_value());
    CHECK(*r.sign_accuracy == 1.0);
}

TEST_CASE("random-effects oracle data") {
    synth::ReOracleOptions o;
    o.entities = 50;
    o.periods = 6;
    o.seed = 3;
    const auto rows = synth::re_oracle_data(o);
    REQUIRE(rows.size() == 300);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].dem_price >= 0.3);
        CHECK(rows[i].dem_price <= 0.8);
        // Prices are shared by every entity in a period.
        CHECK(rows[i].dem_price == rows[i % 6].dem_price);
    }
    CHECK(rows == synth::re_oracle_data(o));

    // Null model: every coefficient sits within 4 standard errors of zero.
    const auto fit = casestudy::random_effects(casestudy::make_design(rows, casestudy::Side::Democratic));
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(fit.coefficients[j]) <= 4 * fit.std_errors[j]);

    o.theta = {1, 2, 3, 4};
    o.sigma_delta = 0.0;
    o.demean_noise = true;
    const auto clean = casestudy::make_design(synth::re_oracle_data(o), casestudy::Side::Democratic);
    const auto re = casestudy::random_effects(clean);
    CHECK(re.sigma_delta2 == 0.0);
    const Eigen::VectorXd beta = (clean.x.transpose() * clean.x).ldlt().solve(clean.x.transpose() * clean.y);
    for (int j = 0; j < 4; ++j) CHECK(re.coefficients[static_cast<std::size_t>(j)] == doctest::Approx(beta(j)).epsilon(1e-6));
}
