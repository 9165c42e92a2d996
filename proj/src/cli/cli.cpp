#include "polylean/cli.hpp"

#include "polylean/accuracy.hpp"
#include "polylean/casestudy.hpp"
#include "polylean/csv.hpp"
#include "polylean/error.hpp"
#include "polylean/features.hpp"
#include "polylean/fetch.hpp"
#include "polylean/ingest.hpp"
#include "polylean/io.hpp"
#include "polylean/numeric.hpp"
#include "polylean/pbls.hpp"
#include "polylean/predictor.hpp"
#include "polylean/synth.hpp"
#include "polylean/validation.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

namespace polylean::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr std::string_view kVersion = "0.1.0";

Error config_error(const std::string& message) { return Error(ErrorCode::ConfigInvalid, message); }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

Timestamp require_time(const std::string& text, const char* what) {
    auto t = parse_time(text);
    if (!t) throw config_error(std::string(what) + " '" + text + "' is not a valid time");
    return *t;
}

/// Shared state: the parsed config document plus global flags.
struct Context {
    std::string config_path;
    unsigned jobs = 1;
    json config = json::object();
    std::optional<fs::path> output_dir;

    void load() {
        if (config_path.empty()) return;
        auto text = io::read_file(config_path);
        config = json::parse(text, nullptr, false);
        if (config.is_discarded() || !config.is_object()) throw config_error("config file must hold a JSON object");
        if (config.contains("output_dir")) {
            if (!config["output_dir"].is_string()) throw config_error("output_dir must be a string");
            output_dir = fs::path(config["output_dir"].get<std::string>());
        }
        if (config.contains("jobs") && jobs == 1) {
            if (!config["jobs"].is_number_unsigned()) throw config_error("jobs must be a positive integer");
            jobs = config["jobs"].get<unsigned>();
        }
    }

    std::optional<std::string> string_key(const char* key) const {
        if (!config.contains(key)) return std::nullopt;
        if (!config[key].is_string()) throw config_error(std::string(key) + " must be a string");
        return config[key].get<std::string>();
    }

    std::string require_path(const std::string& flag, const char* key, const char* name) const {
        if (!flag.empty()) return flag;
        if (auto v = string_key(key)) return *v;
        throw config_error(std::string("missing ") + name + " (flag or config key '" + key + "')");
    }

    std::uint64_t require_seed(const std::optional<std::uint64_t>& flag) const {
        if (flag) return *flag;
        if (config.contains("seed")) {
            if (!config["seed"].is_number_unsigned()) throw config_error("seed must be a nonnegative integer");
            return config["seed"].get<std::uint64_t>();
        }
        throw config_error("a seed is required (--seed or config key 'seed')");
    }

    /// Section `key` of the config if present, otherwise the whole document.
    std::string section(const char* key) const {
        if (config.contains(key)) {
            if (!config[key].is_object()) throw config_error(std::string(key) + " must be an object");
            return config[key].dump();
        }
        return config.dump();
    }

    /// Output paths resolve under output_dir when configured and may not escape it.
    fs::path output(const std::string& path) const {
        if (path.empty()) throw config_error("an output path is required");
        if (!output_dir) return fs::path(path);
        const fs::path root = fs::weakly_canonical(fs::absolute(*output_dir));
        fs::path p(path);
        if (p.is_relative()) p = root / p;
        p = fs::weakly_canonical(fs::absolute(p));
        auto rel = p.lexically_relative(root);
        if (rel.empty() || *rel.begin() == "..")
            throw config_error("output path '" + path + "' is outside the configured output directory");
        return p;
    }

    void write(const std::string& path, std::string_view content) const {
        const auto p = output(path);
        io::write_file_atomic(p, content);
        spdlog::info("wrote {}", p.string());
    }
};

ingest::Dataset load_dataset(const std::string& dir) {
    auto ds = ingest::load_dataset(dir);
    for (const auto& d : ds.diagnostics())
        spdlog::warn("dataset line {}: {} {}", d.line, ingest::to_string(d.kind), d.message);
    return ds;
}

std::vector<pbls::LeaningScore> load_scores(const std::string& path) {
    std::istringstream in(io::read_file(path));
    return pbls::read_scores(in);
}

pbls::WeightConfig weight_config(const Context& ctx, const std::string& party_map_flag, std::optional<double> theta,
                                 std::optional<double> half_life, const std::string& t_end) {
    pbls::WeightConfig w;
    if (ctx.config.contains("weights")) {
        const auto& section = ctx.config["weights"];
        try {
            w.theta = section.value("theta", w.theta);
            w.half_life_days = section.value("half_life_days", w.half_life_days);
            if (section.contains("t_end")) w.t_end = require_time(section["t_end"].get<std::string>(), "t_end");
        } catch (const json::exception& e) {
            throw config_error(std::string("weights section is malformed: ") + e.what());
        }
    }
    if (theta) w.theta = *theta;
    if (half_life) w.half_life_days = *half_life;
    if (!t_end.empty()) w.t_end = require_time(t_end, "t_end");
    w.party_map = pbls::parse_party_map(io::read_file(ctx.require_path(party_map_flag, "party_map", "party map")));
    w.validate();
    return w;
}

json diagnostics_json(std::span<const ingest::ParseDiagnostic> diags) {
    json arr = json::array();
    for (const auto& d : diags)
        arr.push_back({{"line", d.line}, {"kind", ingest::to_string(d.kind)}, {"message", d.message}, {"warning", d.warning}});
    return arr;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
    auto logger = std::make_shared<spdlog::logger>("polylean", sink);
    logger->set_pattern("[%l] %v");
    logger->set_level(spdlog::level::warn);
    if (const char* level = std::getenv("POLYLEAN_LOG")) logger->set_level(spdlog::level::from_str(level));
    auto previous = spdlog::default_logger();
    spdlog::set_default_logger(logger);
    struct Restore {
        std::shared_ptr<spdlog::logger> logger;
        ~Restore() { spdlog::set_default_logger(logger); }
    } restore{previous};

    Context ctx;
    CLI::App app{"Political-leaning analytics over prediction-market betting logs", "polylean"};
    app.set_version_flag("--version", std::string(kVersion));
    app.add_option("--config", ctx.config_path, "JSON config document")->check(CLI::ExistingFile);
    app.add_option("--jobs", ctx.jobs, "Worker threads")->check(CLI::PositiveNumber);
    app.require_subcommand(1);
    app.fallthrough();

    std::function<void()> action;

    // ingest
    struct {
        std::string records, markets, events, categories, records_url, markets_url, events_url, out, format = "csv";
        std::size_t page_size = 100;
    } ing;
    auto* c_ingest = app.add_subcommand("ingest", "Parse and validate raw logs into a dataset directory");
    c_ingest->add_option("--records", ing.records, "Records file (.csv or .jsonl)");
    c_ingest->add_option("--markets", ing.markets, "Markets JSONL");
    c_ingest->add_option("--events", ing.events, "Events JSONL");
    c_ingest->add_option("--categories", ing.categories, "Name-pattern category map JSONL");
    c_ingest->add_option("--records-url", ing.records_url, "Paginated records endpoint");
    c_ingest->add_option("--markets-url", ing.markets_url, "Paginated markets endpoint");
    c_ingest->add_option("--events-url", ing.events_url, "Paginated events endpoint");
    c_ingest->add_option("--page-size", ing.page_size, "Page size for endpoints")->check(CLI::PositiveNumber);
    c_ingest->add_option("--format", ing.format, "Records input format when fetched")->check(CLI::IsMember({"csv", "jsonl"}));
    c_ingest->add_option("--out", ing.out, "Output dataset directory")->required();
    c_ingest->callback([&] {
        action = [&] {
            std::vector<ingest::ParseDiagnostic> diags;
            auto collect = [&](auto parsed, std::string_view source) {
                for (auto& d : parsed.diagnostics) {
                    d.message = std::string(source) + ": " + d.message;
                    diags.push_back(d);
                }
                return std::move(parsed.items);
            };
            ingest::FetchOptions fo;
            fo.page_size = ing.page_size;
            auto fetched = [&](const std::string& url) {
                auto r = ingest::fetch_paginated(url, fo);
                spdlog::info("fetched {} items from {} in {} requests", r.items, url, r.requests);
                return r.jsonl;
            };
            std::vector<ingest::BettingRecord> records;
            if (!ing.records_url.empty()) {
                records = collect(ingest::parse_records(fetched(ing.records_url), ingest::RecordFormat::Jsonl), "records");
            } else if (!ing.records.empty()) {
                const auto fmt = fs::path(ing.records).extension() == ".jsonl" ? ingest::RecordFormat::Jsonl
                                                                              : ingest::RecordFormat::Csv;
                records = collect(ingest::parse_records(io::read_file(ing.records), fmt), "records");
            } else {
                throw config_error("ingest needs --records or --records-url");
            }
            auto meta_stream = [&](const std::string& file, const std::string& url) -> std::optional<std::string> {
                if (!url.empty()) return fetched(url);
                if (!file.empty()) return io::read_file(file);
                return std::nullopt;
            };
            auto market_text = meta_stream(ing.markets, ing.markets_url);
            if (!market_text) throw config_error("ingest needs --markets or --markets-url");
            std::istringstream ms(*market_text);
            auto markets = collect(ingest::parse_markets(ms), "markets");
            std::vector<ingest::EventMeta> events;
            if (auto text = meta_stream(ing.events, ing.events_url)) {
                std::istringstream es(*text);
                events = collect(ingest::parse_events(es), "events");
            }
            json unmatched = json::array();
            if (!ing.categories.empty()) {
                std::istringstream cs(io::read_file(ing.categories));
                auto entries = collect(ingest::CategoryMap::parse(cs), "categories");
                auto report = ingest::fill_categories(std::move(markets), ingest::CategoryMap::from_entries(entries));
                markets = std::move(report.markets);
                for (const auto& id : report.unmatched) unmatched.push_back(id);
            }
            auto ds = ingest::build_dataset(std::move(records), std::move(markets), std::move(events));
            const auto dir = ctx.output(ing.out);
            ingest::save_dataset(ds, dir);
            json quarantined = json::array();
            for (const auto& r : ds.quarantined()) quarantined.push_back(r.tx_hash);
            diags.insert(diags.end(), ds.diagnostics().begin(), ds.diagnostics().end());
            json report = {{"schema", "polylean.ingest/1"},
                           {"records", ds.records().size()},
                           {"markets", ds.markets().size()},
                           {"events", ds.events().size()},
                           {"addresses", ds.by_address().size()},
                           {"quarantined", quarantined},
                           {"uncategorized_markets", unmatched},
                           {"diagnostics", diagnostics_json(diags)}};
            io::write_file_atomic(dir / "ingest_report.json", dump(report));
            for (const auto& d : diags)
                spdlog::warn("{} line {}: {}", ingest::to_string(d.kind), d.line, d.message);
        };
    });

    // accuracy
    struct {
        std::string dataset, out, plot_data;
        std::optional<std::int64_t> category;
        double decay = 0.95;
    } acc;
    auto* c_acc = app.add_subcommand("accuracy", "Score resolved markets with the discrete log score");
    c_acc->add_option("--dataset", acc.dataset, "Dataset directory");
    c_acc->add_option("--category", acc.category, "Restrict to a category id");
    c_acc->add_option("--decay", acc.decay, "EWMA decay per market");
    c_acc->add_option("--plot-data", acc.plot_data, "CSV of (resolution_time, ewma)");
    c_acc->add_option("--out", acc.out, "Report JSONL path")->required();
    c_acc->callback([&] {
        action = [&] {
            const auto ds = load_dataset(ctx.require_path(acc.dataset, "dataset", "dataset"));
            accuracy::ScoreOptions so;
            so.category = acc.category;
            const auto report = accuracy::score_markets(ds, so);
            std::ostringstream lines;
            std::ostringstream plot;
            plot << "resolution_time,ewma\n";
            json summary = {{"type", "summary"}, {"schema", "polylean.accuracy/1"}, {"decay", acc.decay},
                            {"markets", report.markets.size()}, {"skipped", report.skipped}, {"mean_dls", nullptr},
                            {"regression", nullptr}};
            if (!report.markets.empty()) {
                std::vector<std::pair<Timestamp, double>> series;
                CompensatedSum total;
                for (const auto& m : report.markets) {
                    series.emplace_back(m.resolution_time, m.dls);
                    total += m.dls;
                }
                summary["mean_dls"] = total.value() / static_cast<double>(report.markets.size());
                const auto ewma = accuracy::ewma_series(series, acc.decay);
                std::vector<accuracy::AccuracyPoint> points;
                for (std::size_t i = 0; i < report.markets.size(); ++i) {
                    const auto& m = report.markets[i];
                    json row = {{"type", "market"},
                                {"market_id", m.market_id},
                                {"resolution_time", format_time(m.resolution_time)},
                                {"final_probability", m.final_probability},
                                {"dls", m.dls},
                                {"ewma", ewma[i].ewma},
                                {"participants", m.participants},
                                {"volume", m.volume}};
                    lines << row.dump() << '\n';
                    plot << format_time(m.resolution_time) << ',' << format_double(ewma[i].ewma) << '\n';
                    points.push_back({ewma[i].ewma, static_cast<double>(m.participants), m.volume});
                }
                try {
                    const auto r = accuracy::accuracy_regression(points);
                    summary["regression"] = {{"intercept", r.intercept},
                                             {"coef_volume", r.coef_volume},
                                             {"coef_participants", r.coef_participants},
                                             {"r2", r.r2},
                                             {"n", r.n}};
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::InsufficientData && e.code() != ErrorCode::DegenerateDesign) throw;
                    summary["regression_error"] = e.what();
                }
            }
            lines << summary.dump() << '\n';
            ctx.write(acc.out, lines.str());
            if (!acc.plot_data.empty()) ctx.write(acc.plot_data, plot.str());
        };
    });

    // pbls
    struct {
        std::string dataset, event, party_map, t_end, out, summary;
        std::optional<double> theta, half_life;
        bool with_weights = false;
    } pb;
    auto* c_pbls = app.add_subcommand("pbls", "Compute leaning scores for one event");
    c_pbls->add_option("--dataset", pb.dataset, "Dataset directory");
    c_pbls->add_option("--event", pb.event, "Event id");
    c_pbls->add_option("--party-map", pb.party_map, "JSON map of outcome label to +1/-1");
    c_pbls->add_option("--theta", pb.theta, "Price-distance threshold");
    c_pbls->add_option("--half-life", pb.half_life, "Time-decay half-life in days");
    c_pbls->add_option("--t-end", pb.t_end, "Reference time (defaults to the last trade)");
    c_pbls->add_flag("--with-weights", pb.with_weights, "Include per-trade weights");
    c_pbls->add_option("--summary", pb.summary, "Summary JSON path");
    c_pbls->add_option("--out", pb.out, "Scores JSONL path")->required();
    c_pbls->callback([&] {
        action = [&] {
            const auto ds = load_dataset(ctx.require_path(pb.dataset, "dataset", "dataset"));
            const auto w = weight_config(ctx, pb.party_map, pb.theta, pb.half_life, pb.t_end);
            const auto event = ctx.require_path(pb.event, "event", "event id");
            const auto result = pbls::score_event(ds, event, w, ctx.jobs);
            std::ostringstream os;
            pbls::write_scores(os, result.scores, pb.with_weights);
            ctx.write(pb.out, os.str());
            if (result.excluded_future > 0) spdlog::warn("{} trades after t_end were excluded", result.excluded_future);
            if (!pb.summary.empty()) {
                CompensatedSum sum;
                std::size_t dem = 0, rep = 0, neutral = 0, degenerate = 0;
                for (const auto& s : result.scores) {
                    sum += s.pbls;
                    switch (pbls::classify_leaning(s)) {
                    case pbls::Leaning::Democratic: ++dem; break;
                    case pbls::Leaning::Republican: ++rep; break;
                    case pbls::Leaning::Neutral: ++neutral; break;
                    }
                    if (s.degenerate) ++degenerate;
                }
                const double n = static_cast<double>(result.scores.size());
                const double mean = n > 0 ? sum.value() / n : std::nan("");
                CompensatedSum ss;
                for (const auto& s : result.scores) ss += (s.pbls - mean) * (s.pbls - mean);
                const double sd = n > 1 ? std::sqrt(ss.value() / (n - 1.0)) : std::nan("");
                json doc = {{"schema", "polylean.pbls-summary/1"},
                            {"event", event},
                            {"t_end", format_time(result.t_end)},
                            {"scored", result.scores.size()},
                            {"unscored", result.unscored.size()},
                            {"excluded_future", result.excluded_future},
                            {"mean", number_or_null(mean)},
                            {"std", number_or_null(sd)},
                            {"democratic", dem},
                            {"republican", rep},
                            {"neutral", neutral},
                            {"degenerate", degenerate}};
                ctx.write(pb.summary, dump(doc));
            }
        };
    });

    // validate
    struct {
        std::string scores_a, scores_b, scores, polls, out, statistic = "mean-of-ratios";
        std::optional<std::uint64_t> seed;
        std::size_t replicates = 1000;
        double level = 0.95;
    } val;
    auto* c_val = app.add_subcommand("validate", "Internal and external validation of scores");
    c_val->require_subcommand(1);
    auto* c_int = c_val->add_subcommand("internal", "Compare two score sets");
    c_int->add_option("--scores-a", val.scores_a, "First scores JSONL")->required();
    c_int->add_option("--scores-b", val.scores_b, "Second scores JSONL")->required();
    c_int->add_option("--out", val.out, "Report JSON path")->required();
    c_int->callback([&] {
        action = [&] {
            const auto a = load_scores(val.scores_a);
            const auto b = load_scores(val.scores_b);
            std::vector<double> va, vb;
            for (const auto& s : a) va.push_back(s.pbls);
            for (const auto& s : b) vb.push_back(s.pbls);
            const auto ks = validation::ks_two_sample(va, vb);
            std::map<std::string_view, double> of_b;
            for (const auto& s : b) of_b.emplace(s.address, s.pbls);
            std::vector<double> xa, xb;
            for (const auto& s : a) {
                auto it = of_b.find(s.address);
                if (it == of_b.end()) continue;
                xa.push_back(s.pbls);
                xb.push_back(it->second);
            }
            json doc = {{"schema", "polylean.validate-internal/1"},
                        {"ks", {{"D", ks.statistic}, {"p", ks.p_value}, {"n_a", va.size()}, {"n_b", vb.size()}}},
                        {"paired", xa.size()}};
            try {
                const auto p = validation::pearson(xa, xb);
                const auto s = validation::spearman(xa, xb);
                doc["pearson"] = {{"r", p.coefficient}, {"p", p.p_value}, {"n", p.n}};
                doc["spearman"] = {{"rho", s.coefficient}, {"p", s.p_value}, {"n", s.n}};
            } catch (const Error& e) {
                if (e.code() != ErrorCode::InsufficientData && e.code() != ErrorCode::ZeroVariance) throw;
                doc["pearson"] = nullptr;
                doc["spearman"] = nullptr;
                doc["correlation_error"] = e.what();
            }
            ctx.write(val.out, dump(doc));
        };
    });
    auto* c_ext = c_val->add_subcommand("external", "Compare the support ratio with polls");
    c_ext->add_option("--scores", val.scores, "Scores JSONL")->required();
    c_ext->add_option("--polls", val.polls, "Polls CSV")->required();
    c_ext->add_option("--seed", val.seed, "Bootstrap seed");
    c_ext->add_option("--replicates", val.replicates, "Bootstrap replicates")->check(CLI::PositiveNumber);
    c_ext->add_option("--level", val.level, "Confidence level");
    c_ext->add_option("--statistic", val.statistic, "Replicate statistic")
        ->check(CLI::IsMember({"mean-of-ratios", "ratio-of-means"}));
    c_ext->add_option("--out", val.out, "Report JSON path")->required();
    c_ext->callback([&] {
        action = [&] {
            const auto scores = load_scores(val.scores);
            std::istringstream ps(io::read_file(val.polls));
            const auto polls = validation::read_polls(ps);
            validation::BootstrapOptions bo;
            bo.seed = ctx.require_seed(val.seed);
            bo.replicates = val.replicates;
            bo.level = val.level;
            bo.jobs = ctx.jobs;
            bo.statistic = val.statistic == "ratio-of-means" ? validation::BootstrapStatistic::RatioOfMeans
                                                             : validation::BootstrapStatistic::MeanOfRatios;
            const double ratio = validation::support_ratio(scores);
            const auto b = validation::weighted_bootstrap_ci(polls, bo);
            json doc = {{"schema", "polylean.validate-external/1"},
                        {"support_ratio", ratio},
                        {"bootstrap",
                         {{"point_estimate", b.point_estimate},
                          {"ci_low", b.ci_low},
                          {"ci_high", b.ci_high},
                          {"median", b.median},
                          {"replicates", b.replicates},
                          {"level", val.level},
                          {"seed", b.seed},
                          {"statistic", val.statistic},
                          {"algorithm", b.algorithm}}},
                        {"polls", polls.size()},
                        {"inside_ci", ratio >= b.ci_low && ratio <= b.ci_high}};
            ctx.write(val.out, dump(doc));
        };
    });

    // features
    struct {
        std::string dataset, catalog, out;
        bool hhi_squared = false;
    } fe;
    auto* c_feat = app.add_subcommand("features", "Build the per-address feature matrix");
    c_feat->add_option("--dataset", fe.dataset, "Dataset directory");
    c_feat->add_option("--catalog", fe.catalog, "Catalog config JSON");
    c_feat->add_flag("--hhi-squared", fe.hhi_squared, "Concentration as sum of squared shares");
    c_feat->add_option("--out", fe.out, "Matrix CSV path")->required();
    c_feat->callback([&] {
        action = [&] {
            const auto ds = load_dataset(ctx.require_path(fe.dataset, "dataset", "dataset"));
            features::CatalogConfig cat;
            if (!fe.catalog.empty()) {
                cat = features::parse_catalog_config(io::read_file(fe.catalog));
            } else if (ctx.config.contains("catalog")) {
                const auto& c = ctx.config["catalog"];
                cat = features::parse_catalog_config(c.is_string() ? io::read_file(c.get<std::string>()) : c.dump());
            }
            if (fe.catalog.empty() && !ctx.config.contains("catalog") && ctx.config.contains("anchors")) {
                json a = {{"anchors", ctx.config["anchors"]}};
                cat.anchors = features::parse_catalog_config(a.dump()).anchors;
            }
            if (fe.hhi_squared) cat.hhi_squared = true;
            const auto m = features::build_feature_matrix(ds, cat, ctx.jobs);
            std::ostringstream os;
            features::write_matrix(os, m);
            ctx.write(fe.out, os.str());
        };
    });

    // correlate
    struct {
        std::string matrix, scores, out;
    } co;
    auto* c_corr = app.add_subcommand("correlate", "Spearman screening of features against scores");
    c_corr->add_option("--matrix", co.matrix, "Matrix CSV")->required();
    c_corr->add_option("--scores", co.scores, "Scores JSONL")->required();
    c_corr->add_option("--out", co.out, "Correlations CSV path")->required();
    c_corr->callback([&] {
        action = [&] {
            std::istringstream ms(io::read_file(co.matrix));
            const auto m = features::read_matrix(ms);
            const auto rows = features::correlate_with_pbls(m, load_scores(co.scores), ctx.jobs);
            std::ostringstream os;
            features::write_correlations(os, rows);
            ctx.write(co.out, os.str());
        };
    });

    // predict
    struct {
        std::string matrix, scores, out, model_out, model_in;
        std::optional<std::uint64_t> seed;
    } pr;
    auto* c_pred = app.add_subcommand("predict", "Train the score predictor and fill unscored addresses");
    c_pred->add_option("--matrix", pr.matrix, "Matrix CSV")->required();
    c_pred->add_option("--scores", pr.scores, "Computed scores JSONL")->required();
    c_pred->add_option("--seed", pr.seed, "Pipeline seed");
    c_pred->add_option("--model", pr.model_in, "Use a saved model instead of training");
    c_pred->add_option("--model-out", pr.model_out, "Write the trained model JSON");
    c_pred->add_option("--out", pr.out, "Scores JSONL with predictions")->required();
    c_pred->callback([&] {
        action = [&] {
            std::istringstream ms(io::read_file(pr.matrix));
            const auto m = features::read_matrix(ms);
            const auto scores = load_scores(pr.scores);
            predictor::TrainedModel model;
            if (!pr.model_in.empty()) {
                model = predictor::model_from_json(io::read_file(pr.model_in));
            } else {
                auto cfg = predictor::parse_model_config(ctx.section("model"));
                cfg.seed = ctx.require_seed(pr.seed);
                model = predictor::train(m, scores, cfg, ctx.jobs);
                spdlog::info("test MSE {} R2 {}", model.metrics.test_mse, model.metrics.test_r2);
            }
            std::map<std::string_view, const pbls::LeaningScore*> scored;
            for (const auto& s : scores) scored.emplace(s.address, &s);
            features::FeatureMatrix unscored;
            unscored.columns = m.columns;
            for (std::size_t r = 0; r < m.addresses.size(); ++r) {
                if (scored.contains(m.addresses[r])) continue;
                unscored.addresses.push_back(m.addresses[r]);
                unscored.values.push_back(m.values[r]);
            }
            auto predicted = predictor::predict_all(model, unscored);
            std::vector<pbls::LeaningScore> all(scores.begin(), scores.end());
            all.insert(all.end(), predicted.begin(), predicted.end());
            std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.address < b.address; });
            std::ostringstream os;
            pbls::write_scores(os, all);
            ctx.write(pr.out, os.str());
            if (!pr.model_out.empty()) ctx.write(pr.model_out, predictor::model_to_json(model));
        };
    });

    // casestudy
    struct {
        std::string dataset, event, scores, winner = "Democratic", split, end, start, out;
        std::int64_t interval = kSecondsPerDay;
    } cs;
    auto* c_case = app.add_subcommand("casestudy", "P&L, panel and random-effects analysis of one event");
    c_case->add_option("--dataset", cs.dataset, "Dataset directory");
    c_case->add_option("--event", cs.event, "Event id");
    c_case->add_option("--scores", cs.scores, "Scores JSONL")->required();
    c_case->add_option("--winner", cs.winner, "Winning outcome label")->check(CLI::IsMember({"Democratic", "Republican"}));
    c_case->add_option("--split", cs.split, "Split time between sub-periods")->required();
    c_case->add_option("--end", cs.end, "Last panel time point")->required();
    c_case->add_option("--start", cs.start, "Earliest panel time point");
    c_case->add_option("--interval", cs.interval, "Seconds between panel points")->check(CLI::PositiveNumber);
    c_case->add_option("--out", cs.out, "Output directory")->required();
    c_case->callback([&] {
        action = [&] {
            const auto ds = load_dataset(ctx.require_path(cs.dataset, "dataset", "dataset"));
            const auto event = ctx.require_path(cs.event, "event", "event id");
            const auto trades = ds.trades_of_event(event);
            if (trades.empty()) throw Error(ErrorCode::NoTrades, "event " + event + " has no trades");
            const auto scores = load_scores(cs.scores);
            const std::string_view labels[] = {casestudy::kDemocratic, casestudy::kRepublican};
            const auto records = casestudy::pnl(casestudy::cash_flows(trades, labels), cs.winner);
            const auto dir = ctx.output(cs.out);

            std::ostringstream pnl_csv;
            pnl_csv << "address,cash_flow,final_cash_flow,pnl\n";
            for (const auto& r : records)
                pnl_csv << csv::escape(r.address) << ',' << format_double(r.cash_flow) << ','
                        << format_double(r.final_cash_flow) << ',' << format_double(r.pnl) << '\n';
            io::write_file_atomic(dir / "pnl.csv", pnl_csv.str());

            json reg_doc = {{"schema", "polylean.pnl-regression/1"}};
            try {
                const auto r = casestudy::pnl_regression(records, scores);
                reg_doc.update({{"beta0", r.beta0}, {"beta1", r.beta1}, {"beta1_se", r.beta1_se},
                                {"ci_low", r.ci_low}, {"ci_high", r.ci_high}, {"p_value", r.p_value},
                                {"level", r.level}, {"n", r.n}});
            } catch (const Error& e) {
                if (e.code() != ErrorCode::InsufficientData && e.code() != ErrorCode::ZeroVariance) throw;
                reg_doc["error"] = e.what();
            }
            io::write_file_atomic(dir / "pnl_regression.json", dump(reg_doc));

            casestudy::PanelOptions po;
            po.split = require_time(cs.split, "split");
            po.end = require_time(cs.end, "end");
            if (!cs.start.empty()) po.start = require_time(cs.start, "start");
            po.interval = cs.interval;
            const auto panel = casestudy::build_panel(trades, scores, po);
            std::ostringstream panel_csv;
            panel_csv << "address,time,dem_price,rep_price,dem_holding,rep_holding,pbls,period\n";
            for (const auto& o : panel)
                panel_csv << csv::escape(o.address) << ',' << format_time(o.time) << ',' << format_double(o.dem_price)
                          << ',' << format_double(o.rep_price) << ',' << format_double(o.dem_holding) << ','
                          << format_double(o.rep_holding) << ',' << format_double(o.pbls) << ','
                          << (o.after_split ? "after" : "before") << '\n';
            io::write_file_atomic(dir / "panel.csv", panel_csv.str());

            for (auto period : {casestudy::Period::Total, casestudy::Period::Before, casestudy::Period::After}) {
                for (auto side : {casestudy::Side::Democratic, casestudy::Side::Republican}) {
                    json doc = {{"schema", "polylean.re-fit/1"},
                                {"period", casestudy::to_string(period)},
                                {"side", casestudy::to_string(side)},
                                {"estimator", "random-effects/swamy-arora"},
                                {"covariance", "unadjusted"}};
                    try {
                        const auto fit = casestudy::random_effects(casestudy::make_design(panel, side, period));
                        json coefs = json::array();
                        for (std::size_t k = 0; k < fit.names.size(); ++k)
                            coefs.push_back({{"name", fit.names[k]},
                                             {"estimate", fit.coefficients[k]},
                                             {"std_error", number_or_null(fit.std_errors[k])},
                                             {"t_stat", number_or_null(fit.t_stats[k])},
                                             {"p_value", number_or_null(fit.p_values[k])}});
                        doc.update({{"coefficients", coefs},
                                    {"sigma_delta2", fit.sigma_delta2},
                                    {"sigma_eps2", fit.sigma_eps2},
                                    {"r2", fit.r2},
                                    {"r2_overall", fit.r2_overall},
                                    {"r2_within", fit.r2_within},
                                    {"r2_between", fit.r2_between},
                                    {"observations", fit.n_obs},
                                    {"entities", fit.n_entities},
                                    {"min_obs", fit.min_obs},
                                    {"max_obs", fit.max_obs}});
                    } catch (const Error& e) {
                        if (e.code() != ErrorCode::InsufficientPanel && e.code() != ErrorCode::SingularGLS) throw;
                        doc["error"] = e.what();
                        spdlog::warn("{} {} fit skipped: {}", casestudy::to_string(period), casestudy::to_string(side), e.what());
                    }
                    const auto name = "re_fit_" + std::string(casestudy::to_string(period)) + "_" +
                                      std::string(casestudy::to_string(side)) + ".json";
                    io::write_file_atomic(dir / name, dump(doc));
                }
            }
        };
    });

    // synth
    struct {
        std::string out;
        std::optional<std::uint64_t> seed;
    } sy;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic dataset with known leanings");
    c_synth->add_option("--seed", sy.seed, "Generator seed");
    c_synth->add_option("--out", sy.out, "Output directory")->required();
    c_synth->callback([&] {
        action = [&] {
            auto cfg = synth::parse_synth_config(ctx.section("synth"));
            cfg.seed = ctx.require_seed(sy.seed);
            const auto g = synth::generate(cfg);
            synth::save_generated(g, ctx.output(sy.out));
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        ctx.load();
        if (action) action();
        return kExitOk;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        if (e.code() == ErrorCode::ConfigInvalid) err << "run 'polylean " << app.get_subcommands().front()->get_name() << " --help' for usage\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
}

} // namespace polylean::cli
