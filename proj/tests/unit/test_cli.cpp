#include "polylean/cli.hpp"
#include "polylean/io.hpp"
#include "polylean/pbls.hpp"
#include "support.hpp"

#include <doctest.h>

#include <sstream>

using namespace polylean;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "polylean");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Run r;
    r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string p(const std::filesystem::path& path) { return path.string(); }

} // namespace

TEST_CASE("version and help") {
    const auto v = run({"--version"});
    CHECK(v.code == cli::kExitOk);
    CHECK(v.out.find("0.1.0") != std::string::npos);
    const auto h = run({"pbls", "--help"});
    CHECK(h.code == cli::kExitOk);
    CHECK(h.out.find("--dataset") != std::string::npos);
    CHECK(run({}).code == cli::kExitValidation);
    CHECK(run({"frobnicate"}).code == cli::kExitValidation);
}

TEST_CASE("synth then pbls end to end") {
    test::TempDir dir("cli");
    const auto config = dir.path() / "config.json";
    io::write_file_atomic(config, R"({"synth": {"n_agents": 60, "n_days": 10}})");
    const auto data = dir.path() / "data";
    const auto s = run({"--config", p(config), "synth", "--seed", "5", "--out", p(data)});
    REQUIRE(s.code == cli::kExitOk);
    CHECK(std::filesystem::exists(data / "records.csv"));

    const auto scores = dir.path() / "scores.jsonl";
    const auto b = run({"pbls", "--dataset", p(data), "--event", "evt-election", "--party-map",
                        p(data / "party_map.json"), "--out", p(scores)});
    REQUIRE(b.code == cli::kExitOk);
    std::istringstream in(io::read_file(scores));
    const auto parsed = pbls::read_scores(in);
    CHECK(parsed.size() > 10);

    // Reruns are byte-identical.
    const auto again = dir.path() / "again.jsonl";
    REQUIRE(run({"pbls", "--dataset", p(data), "--event", "evt-election", "--party-map", p(data / "party_map.json"),
                 "--out", p(again), "--jobs", "3"})
                .code == cli::kExitOk);
    CHECK(io::read_file(again) == io::read_file(scores));
    const auto data2 = dir.path() / "data2";
    REQUIRE(run({"--config", p(config), "synth", "--seed", "5", "--out", p(data2)}).code == cli::kExitOk);
    CHECK(io::read_file(data2 / "records.csv") == io::read_file(data / "records.csv"));
    CHECK(io::read_file(data2 / "agents.jsonl") == io::read_file(data / "agents.jsonl"));
}

TEST_CASE("validation failures exit with status 1") {
    test::TempDir dir("cli-err");
    const auto missing = run({"pbls", "--event", "e", "--out", p(dir.path() / "x.jsonl")});
    CHECK(missing.code == cli::kExitValidation);
    CHECK(missing.err.find("dataset") != std::string::npos);
    CHECK(missing.err.find("--help") != std::string::npos);

    const auto unreadable = run({"pbls", "--dataset", p(dir.path() / "nope"), "--event", "e", "--party-map",
                                 p(dir.path() / "nope.json"), "--out", p(dir.path() / "x.jsonl")});
    CHECK(unreadable.code == cli::kExitValidation);
    CHECK(unreadable.err.rfind("error: ", 0) == 0);

    // Stochastic subcommands need a seed.
    CHECK(run({"synth", "--out", p(dir.path() / "s")}).code == cli::kExitValidation);

    const auto bad_config = dir.path() / "bad.json";
    io::write_file_atomic(bad_config, "{not json");
    CHECK(run({"--config", p(bad_config), "synth", "--seed", "1", "--out", p(dir.path() / "s")}).code ==
          cli::kExitValidation);
}

TEST_CASE("outputs stay inside the configured output directory") {
    test::TempDir dir("cli-out");
    const auto root = dir.path() / "results";
    const auto config = dir.path() / "config.json";
    io::write_file_atomic(config, R"({"output_dir": ")" + p(root) + R"(", "seed": 3, "synth": {"n_agents": 20, "n_days": 5}})");
    CHECK(run({"--config", p(config), "synth", "--out", "run1"}).code == cli::kExitOk);
    CHECK(std::filesystem::exists(root / "run1" / "records.csv"));
    const auto escape = run({"--config", p(config), "synth", "--out", "../outside"});
    CHECK(escape.code == cli::kExitValidation);
    CHECK(escape.err.find("outside") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(dir.path() / "outside"));
    CHECK(run({"--config", p(config), "synth", "--out", p(dir.path() / "abs")}).code == cli::kExitValidation);
}
