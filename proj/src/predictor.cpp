#include "polylean/predictor.hpp"

#include "polylean/error.hpp"
#include "polylean/numeric.hpp"
#include "polylean/parallel.hpp"
#include "polylean/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace polylean::predictor {

using nlohmann::json;

namespace {

// Substream identifiers under the configured seed.
constexpr std::uint64_t kSplitStream = 1;
constexpr std::uint64_t kAugmentStream = 2;
constexpr std::uint64_t kRfeStream = 3;
constexpr std::uint64_t kSearchStream = 4;
constexpr std::uint64_t kFoldStream = 5;
constexpr std::uint64_t kFitStream = 6;
constexpr std::uint64_t kFoldAugmentBase = 1000;
constexpr std::uint64_t kDrawFitBase = 100000;

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream) { return Rng::derive(seed, stream).next(); }

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& x, std::span<const std::size_t> cols) {
    Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(cols[j]));
    return out;
}

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& x, std::span<const std::size_t> rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

Eigen::VectorXd select_rows(const Eigen::VectorXd& y, std::span<const std::size_t> rows) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(rows[i]));
    return out;
}

double mse(const Eigen::VectorXd& y, const Eigen::VectorXd& pred) {
    CompensatedSum s;
    for (Eigen::Index i = 0; i < y.size(); ++i) s += (y(i) - pred(i)) * (y(i) - pred(i));
    return s.value() / static_cast<double>(y.size());
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed, std::uint64_t stream) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    Rng rng = Rng::derive(seed, stream);
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
    return p;
}

} // namespace

void ModelConfig::validate() const {
    auto bad = [](const std::string& msg) { return Error(ErrorCode::InvalidConfig, msg); };
    if (n_estimators.lo < 1 || n_estimators.hi < n_estimators.lo) throw bad("n_estimators range is invalid");
    if (!(learning_rate.lo > 0.0) || learning_rate.hi < learning_rate.lo) throw bad("learning_rate range is invalid");
    if (max_depth.lo < 1 || max_depth.hi < max_depth.lo) throw bad("max_depth range is invalid");
    if (!(subsample.lo > 0.0) || subsample.hi > 1.0 || subsample.hi < subsample.lo) throw bad("subsample range must lie in (0, 1]");
    if (!(l2_reg.lo >= 0.0) || l2_reg.hi < l2_reg.lo) throw bad("l2_reg range is invalid");
    if (search_draws < 1) throw bad("search_draws must be at least 1");
    if (cv_folds < 2) throw bad("cv_folds must be at least 2");
    if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) throw bad("noise_scale must be finite and nonnegative");
    if (rfe_target_features < 1) throw bad("rfe_target_features must be at least 1");
    if (!(rfe_step > 0.0 && rfe_step <= 1.0)) throw bad("rfe_step must lie in (0, 1]");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw bad("test_fraction must lie in [0, 1)");
}

ModelConfig parse_model_config(std::string_view text) {
    auto doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw Error(ErrorCode::InvalidConfig, "model config must be a JSON object");
    ModelConfig cfg;
    try {
        auto range = [&](const char* key, auto& r) {
            if (!doc.contains(key)) return;
            const auto& a = doc[key];
            if (!a.is_array() || a.size() != 2) throw Error(ErrorCode::InvalidConfig, std::string(key) + " must be [lo, hi]");
            using T = decltype(r.lo);
            r.lo = a[0].get<T>();
            r.hi = a[1].get<T>();
        };
        range("n_estimators", cfg.n_estimators);
        range("learning_rate", cfg.learning_rate);
        range("max_depth", cfg.max_depth);
        range("subsample", cfg.subsample);
        range("l2_reg", cfg.l2_reg);
        cfg.search_draws = doc.value("search_draws", cfg.search_draws);
        cfg.cv_folds = doc.value("cv_folds", cfg.cv_folds);
        cfg.noise_scale = doc.value("noise_scale", cfg.noise_scale);
        cfg.rfe_target_features = doc.value("rfe_target_features", cfg.rfe_target_features);
        cfg.rfe_step = doc.value("rfe_step", cfg.rfe_step);
        cfg.test_fraction = doc.value("test_fraction", cfg.test_fraction);
        cfg.seed = doc.value("seed", cfg.seed);
        if (doc.contains("rfe_params")) {
            const auto& p = doc["rfe_params"];
            cfg.rfe_params.n_estimators = p.value("n_estimators", cfg.rfe_params.n_estimators);
            cfg.rfe_params.learning_rate = p.value("learning_rate", cfg.rfe_params.learning_rate);
            cfg.rfe_params.max_depth = p.value("max_depth", cfg.rfe_params.max_depth);
            cfg.rfe_params.subsample = p.value("subsample", cfg.rfe_params.subsample);
            cfg.rfe_params.l2_reg = p.value("l2_reg", cfg.rfe_params.l2_reg);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("model config has a wrongly typed value: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

Standardized standardize(const Eigen::MatrixXd& x, std::span<const std::string> names) {
    if (static_cast<Eigen::Index>(names.size()) != x.cols())
        throw Error(ErrorCode::LengthMismatch, "column names do not match the matrix");
    if (x.rows() == 0) throw Error(ErrorCode::EmptyInput, "cannot standardize an empty matrix");
    Standardized out;
    std::vector<Eigen::Index> kept;
    const double n = static_cast<double>(x.rows());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        CompensatedSum s;
        for (Eigen::Index i = 0; i < x.rows(); ++i) s += x(i, j);
        const double mean = s.value() / n;
        CompensatedSum ss;
        for (Eigen::Index i = 0; i < x.rows(); ++i) ss += (x(i, j) - mean) * (x(i, j) - mean);
        const double sd = std::sqrt(ss.value() / n);
        const auto& name = names[static_cast<std::size_t>(j)];
        if (!(sd > 0.0)) {
            out.dropped.push_back(name);
            continue;
        }
        kept.push_back(j);
        out.params.names.push_back(name);
        out.params.mean.push_back(mean);
        out.params.stddev.push_back(sd);
    }
    if (kept.empty()) throw Error(ErrorCode::AllColumnsConstant, "every feature column is constant");
    out.values.resize(x.rows(), static_cast<Eigen::Index>(kept.size()));
    for (std::size_t j = 0; j < kept.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        out.values.col(jj) = (x.col(kept[j]).array() - out.params.mean[j]) / out.params.stddev[j];
    }
    return out;
}

Eigen::MatrixXd apply_standardization(const Eigen::MatrixXd& x, const Standardization& params) {
    if (static_cast<std::size_t>(x.cols()) != params.names.size())
        throw Error(ErrorCode::LengthMismatch, "matrix width does not match the standardization");
    Eigen::MatrixXd z(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const auto k = static_cast<std::size_t>(j);
        z.col(j) = (x.col(j).array() - params.mean[k]) / params.stddev[k];
    }
    return z;
}

Eigen::MatrixXd invert_standardization(const Eigen::MatrixXd& z, const Standardization& params) {
    if (static_cast<std::size_t>(z.cols()) != params.names.size())
        throw Error(ErrorCode::LengthMismatch, "matrix width does not match the standardization");
    Eigen::MatrixXd x(z.rows(), z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const auto k = static_cast<std::size_t>(j);
        x.col(j) = z.col(j).array() * params.stddev[k] + params.mean[k];
    }
    return x;
}

Augmented augment_noise(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double scale, std::uint64_t seed) {
    if (x.rows() != y.size()) throw Error(ErrorCode::LengthMismatch, "labels do not match the matrix");
    Augmented out;
    const Eigen::Index n = x.rows();
    out.x.resize(2 * n, x.cols());
    out.y.resize(2 * n);
    out.x.topRows(n) = x;
    out.y.head(n) = y;
    out.y.tail(n) = y;
    Rng rng(seed);
    // Row-major draw order keeps the stream independent of storage layout.
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) out.x(n + i, j) = x(i, j) + scale * rng.normal();
    return out;
}

double Tree::predict(const double* row, Eigen::Index stride) const {
    std::size_t at = 0;
    while (nodes[at].feature >= 0) {
        const auto& node = nodes[at];
        at = static_cast<std::size_t>(row[node.feature * stride] < node.threshold ? node.left : node.right);
    }
    return nodes[at].value;
}

double Booster::predict_row(const Eigen::MatrixXd& x, Eigen::Index row) const {
    double sum = 0.0;
    const double* start = x.data() + row;
    for (const auto& t : trees) sum += t.predict(start, x.rows());
    return base_score + learning_rate * sum;
}

Eigen::VectorXd Booster::predict(const Eigen::MatrixXd& x) const {
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = predict_row(x, i);
    return out;
}

Booster gbt_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const HyperParams& params, std::uint64_t seed) {
    const Eigen::Index n = x.rows();
    const Eigen::Index nf = x.cols();
    if (n < 2) throw Error(ErrorCode::DegenerateInput, "boosting needs at least 2 rows");
    if (y.size() != n) throw Error(ErrorCode::LengthMismatch, "labels do not match the matrix");
    if (nf < 1) throw Error(ErrorCode::DegenerateInput, "boosting needs at least one feature");
    if (!x.allFinite() || !y.allFinite()) throw Error(ErrorCode::DegenerateInput, "features and labels must be finite");
    if (params.n_estimators < 0 || params.max_depth < 1 || !(params.learning_rate > 0.0) ||
        !(params.subsample > 0.0 && params.subsample <= 1.0) || !(params.l2_reg >= 0.0))
        throw Error(ErrorCode::DegenerateInput, "invalid boosting hyperparameters");

    Booster b;
    b.learning_rate = params.learning_rate;
    b.importance.assign(static_cast<std::size_t>(nf), 0.0);
    CompensatedSum ysum;
    for (Eigen::Index i = 0; i < n; ++i) ysum += y(i);
    b.base_score = ysum.value() / static_cast<double>(n);

    const auto un = static_cast<std::size_t>(n);
    std::vector<std::vector<std::uint32_t>> order(static_cast<std::size_t>(nf));
    for (Eigen::Index f = 0; f < nf; ++f) {
        auto& o = order[static_cast<std::size_t>(f)];
        o.resize(un);
        std::iota(o.begin(), o.end(), 0u);
        std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t c) { return x(a, f) < x(c, f); });
    }

    const double lambda = params.l2_reg;
    auto score = [lambda](double g, double c) { return g * g / (c + lambda); };
    std::vector<double> pred(un, b.base_score);
    std::vector<double> resid(un);
    std::vector<int> node_of(un);
    const std::size_t sample_size =
        params.subsample >= 1.0 ? un : std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(params.subsample * static_cast<double>(n))));

    for (int t = 0; t < params.n_estimators; ++t) {
        for (std::size_t i = 0; i < un; ++i) resid[i] = y(static_cast<Eigen::Index>(i)) - pred[i];
        if (sample_size == un) {
            std::fill(node_of.begin(), node_of.end(), 0);
        } else {
            std::fill(node_of.begin(), node_of.end(), -1);
            std::vector<std::size_t> idx(un);
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(t));
            for (std::size_t k = 0; k < sample_size; ++k) {
                std::swap(idx[k], idx[k + rng.below(un - k)]);
                node_of[idx[k]] = 0;
            }
        }

        Tree tree;
        tree.nodes.emplace_back();
        std::vector<int> active{0};
        for (int depth = 0; depth < params.max_depth && !active.empty(); ++depth) {
            const std::size_t nodes = tree.nodes.size();
            std::vector<int> slot(nodes, -1);
            for (std::size_t s = 0; s < active.size(); ++s) slot[static_cast<std::size_t>(active[s])] = static_cast<int>(s);
            const std::size_t na = active.size();
            std::vector<double> g_tot(na, 0.0), c_tot(na, 0.0);
            for (std::size_t i = 0; i < un; ++i) {
                if (node_of[i] < 0) continue;
                const int s = slot[static_cast<std::size_t>(node_of[i])];
                if (s < 0) continue;
                g_tot[static_cast<std::size_t>(s)] += resid[i];
                c_tot[static_cast<std::size_t>(s)] += 1.0;
            }
            std::vector<double> best_gain(na, 0.0), best_thr(na, 0.0);
            std::vector<int> best_feat(na, -1);
            std::vector<double> gl(na), cl(na), last(na);
            for (Eigen::Index f = 0; f < nf; ++f) {
                std::fill(gl.begin(), gl.end(), 0.0);
                std::fill(cl.begin(), cl.end(), 0.0);
                for (std::uint32_t i : order[static_cast<std::size_t>(f)]) {
                    if (node_of[i] < 0) continue;
                    const int si = slot[static_cast<std::size_t>(node_of[i])];
                    if (si < 0) continue;
                    const auto s = static_cast<std::size_t>(si);
                    const double v = x(i, f);
                    if (cl[s] > 0.0 && v != last[s]) {
                        const double gr = g_tot[s] - gl[s];
                        const double cr = c_tot[s] - cl[s];
                        const double gain = score(gl[s], cl[s]) + score(gr, cr) - score(g_tot[s], c_tot[s]);
                        if (gain > best_gain[s]) {
                            best_gain[s] = gain;
                            best_feat[s] = static_cast<int>(f);
                            double mid = last[s] + (v - last[s]) / 2.0;
                            if (!(mid > last[s])) mid = v;
                            best_thr[s] = mid;
                        }
                    }
                    gl[s] += resid[i];
                    cl[s] += 1.0;
                    last[s] = v;
                }
            }
            std::vector<int> next;
            std::vector<int> left_of(nodes, -1), right_of(nodes, -1);
            for (std::size_t s = 0; s < na; ++s) {
                if (best_feat[s] < 0 || !(best_gain[s] > 1e-12 * (1.0 + score(g_tot[s], c_tot[s])))) continue;
                const auto id = static_cast<std::size_t>(active[s]);
                const int l = static_cast<int>(tree.nodes.size());
                tree.nodes.emplace_back();
                tree.nodes.emplace_back();
                tree.nodes[id].feature = best_feat[s];
                tree.nodes[id].threshold = best_thr[s];
                tree.nodes[id].left = l;
                tree.nodes[id].right = l + 1;
                left_of[id] = l;
                right_of[id] = l + 1;
                b.importance[static_cast<std::size_t>(best_feat[s])] += best_gain[s];
                next.push_back(l);
                next.push_back(l + 1);
            }
            for (std::size_t i = 0; i < un; ++i) {
                if (node_of[i] < 0) continue;
                const auto id = static_cast<std::size_t>(node_of[i]);
                if (left_of[id] < 0) continue;
                const auto& node = tree.nodes[id];
                node_of[i] = x(static_cast<Eigen::Index>(i), node.feature) < node.threshold ? left_of[id] : right_of[id];
            }
            active = std::move(next);
        }

        std::vector<double> g(tree.nodes.size(), 0.0), c(tree.nodes.size(), 0.0);
        for (std::size_t i = 0; i < un; ++i) {
            if (node_of[i] < 0) continue;
            g[static_cast<std::size_t>(node_of[i])] += resid[i];
            c[static_cast<std::size_t>(node_of[i])] += 1.0;
        }
        for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
            if (tree.nodes[k].feature >= 0) continue;
            tree.nodes[k].value = c[k] + lambda > 0.0 ? g[k] / (c[k] + lambda) : 0.0;
        }
        for (std::size_t i = 0; i < un; ++i)
            pred[i] += params.learning_rate * tree.predict(x.data() + static_cast<Eigen::Index>(i), n);
        b.trees.push_back(std::move(tree));
    }
    return b;
}

std::vector<std::size_t> rfe_select(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::size_t target,
                                    const HyperParams& params, double step, std::uint64_t seed) {
    const auto total = static_cast<std::size_t>(x.cols());
    if (target < 1 || target > total) throw Error(ErrorCode::InvalidConfig, "RFE target must lie in [1, feature count]");
    if (!(step > 0.0 && step <= 1.0)) throw Error(ErrorCode::InvalidConfig, "RFE step must lie in (0, 1]");
    std::vector<std::size_t> remaining(total);
    std::iota(remaining.begin(), remaining.end(), std::size_t{0});
    std::uint64_t round = 0;
    while (remaining.size() > target) {
        const auto booster = gbt_fit(select_columns(x, remaining), y, params, sub_seed(seed, round++));
        auto drop = static_cast<std::size_t>(std::ceil(step * static_cast<double>(remaining.size()) - 1e-9));
        drop = std::clamp<std::size_t>(drop, 1, remaining.size() - target);
        std::vector<std::size_t> rank(remaining.size());
        std::iota(rank.begin(), rank.end(), std::size_t{0});
        // Lowest importance first; among ties the later column goes first.
        std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
            if (booster.importance[a] != booster.importance[b]) return booster.importance[a] < booster.importance[b];
            return a > b;
        });
        std::vector<bool> gone(remaining.size(), false);
        for (std::size_t k = 0; k < drop; ++k) gone[rank[k]] = true;
        std::vector<std::size_t> next;
        for (std::size_t k = 0; k < remaining.size(); ++k)
            if (!gone[k]) next.push_back(remaining[k]);
        remaining = std::move(next);
    }
    return remaining;
}

std::vector<int> fold_assignment(std::size_t rows, int folds, std::uint64_t seed) {
    if (folds < 2) throw Error(ErrorCode::InvalidConfig, "need at least 2 folds");
    const auto perm = permutation(rows, seed, kFoldStream);
    std::vector<int> fold(rows);
    for (std::size_t k = 0; k < rows; ++k) fold[perm[k]] = static_cast<int>(k % static_cast<std::size_t>(folds));
    return fold;
}

SearchResult random_search_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ModelConfig& cfg,
                              unsigned jobs) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(x.rows());
    const auto k = static_cast<std::size_t>(cfg.cv_folds);
    if (n < 2 * k) throw Error(ErrorCode::InsufficientData, "too few rows for the requested folds");

    SearchResult result;
    Rng rng = Rng::derive(cfg.seed, kSearchStream);
    for (int d = 0; d < cfg.search_draws; ++d) {
        HyperParams p;
        p.n_estimators = static_cast<int>(rng.integer(cfg.n_estimators.lo, cfg.n_estimators.hi));
        p.learning_rate = rng.uniform(cfg.learning_rate.lo, cfg.learning_rate.hi);
        p.max_depth = static_cast<int>(rng.integer(cfg.max_depth.lo, cfg.max_depth.hi));
        p.subsample = rng.uniform(cfg.subsample.lo, cfg.subsample.hi);
        p.l2_reg = rng.uniform(cfg.l2_reg.lo, cfg.l2_reg.hi);
        result.draws.push_back(p);
    }

    const auto fold = fold_assignment(n, cfg.cv_folds, cfg.seed);
    std::vector<std::vector<std::size_t>> train_rows(k), test_rows(k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < k; ++f) (static_cast<std::size_t>(fold[i]) == f ? test_rows : train_rows)[f].push_back(i);
    }
    struct FoldData {
        Eigen::MatrixXd xtr, xte;
        Eigen::VectorXd ytr, yte;
    };
    std::vector<FoldData> data(k);
    for (std::size_t f = 0; f < k; ++f) {
        auto xtr = select_rows(x, train_rows[f]);
        auto ytr = select_rows(y, train_rows[f]);
        if (cfg.noise_scale > 0.0) {
            auto aug = augment_noise(xtr, ytr, cfg.noise_scale, sub_seed(cfg.seed, kFoldAugmentBase + f));
            data[f].xtr = std::move(aug.x);
            data[f].ytr = std::move(aug.y);
        } else {
            data[f].xtr = std::move(xtr);
            data[f].ytr = std::move(ytr);
        }
        data[f].xte = select_rows(x, test_rows[f]);
        data[f].yte = select_rows(y, test_rows[f]);
    }

    const std::size_t draws = result.draws.size();
    std::vector<double> fold_mse(draws * k);
    parallel_for(draws * k, jobs, [&](std::size_t task) {
        const std::size_t d = task / k;
        const std::size_t f = task % k;
        const auto booster = gbt_fit(data[f].xtr, data[f].ytr, result.draws[d], sub_seed(cfg.seed, kDrawFitBase + d));
        fold_mse[task] = mse(data[f].yte, booster.predict(data[f].xte));
    });
    result.scores.resize(draws);
    for (std::size_t d = 0; d < draws; ++d) {
        CompensatedSum s;
        for (std::size_t f = 0; f < k; ++f) s += -fold_mse[d * k + f];
        result.scores[d] = s.value() / static_cast<double>(k);
        if (d == 0 || result.scores[d] > result.cv_score) {
            result.cv_score = result.scores[d];
            result.best = result.draws[d];
        }
    }
    return result;
}

namespace {

struct Expanded {
    Eigen::MatrixXd x;
    std::vector<std::string> names;
};

Expanded expand(const features::FeatureMatrix& matrix, std::span<const std::size_t> rows, const Imputation& imp) {
    std::vector<std::size_t> source;
    for (const auto& c : imp.columns) {
        const auto idx = matrix.column_index(c);
        if (idx == std::string::npos) throw Error(ErrorCode::MissingFeatureColumn, "feature column '" + c + "' is missing");
        source.push_back(idx);
    }
    Expanded e;
    e.names = imp.columns;
    for (std::size_t c = 0; c < imp.columns.size(); ++c)
        if (imp.indicator[c]) e.names.push_back(imp.columns[c] + "__missing");
    e.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(e.names.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = matrix.values[rows[r]];
        const auto ri = static_cast<Eigen::Index>(r);
        Eigen::Index extra = static_cast<Eigen::Index>(imp.columns.size());
        for (std::size_t c = 0; c < imp.columns.size(); ++c) {
            const double v = row[source[c]];
            const bool missing = std::isnan(v);
            e.x(ri, static_cast<Eigen::Index>(c)) = missing ? imp.medians[c] : v;
            if (imp.indicator[c]) e.x(ri, extra++) = missing ? 1.0 : 0.0;
        }
    }
    return e;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 == 1 ? v[m] : (v[m - 1] + v[m]) / 2.0;
}

} // namespace

TrainedModel train(const features::FeatureMatrix& matrix, std::span<const pbls::LeaningScore> scores,
                   const ModelConfig& cfg, unsigned jobs) {
    cfg.validate();
    std::map<std::string_view, double, std::less<>> score_of;
    for (const auto& s : scores) score_of.emplace(s.address, s.pbls);
    std::vector<std::size_t> scored;
    std::vector<double> labels;
    for (std::size_t r = 0; r < matrix.addresses.size(); ++r) {
        auto it = score_of.find(matrix.addresses[r]);
        if (it == score_of.end()) continue;
        scored.push_back(r);
        labels.push_back(it->second);
    }
    const std::size_t n = scored.size();
    const auto n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(n)));
    if (n < n_test + 2 * static_cast<std::size_t>(cfg.cv_folds))
        throw Error(ErrorCode::InsufficientData, "too few scored addresses to train");

    const auto perm = permutation(n, cfg.seed, kSplitStream);
    std::vector<std::size_t> test_pos(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train_pos(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
    std::sort(test_pos.begin(), test_pos.end());
    std::sort(train_pos.begin(), train_pos.end());
    std::vector<std::size_t> train_rows, test_rows;
    Eigen::VectorXd ytr(static_cast<Eigen::Index>(train_pos.size())), yte(static_cast<Eigen::Index>(test_pos.size()));
    for (std::size_t i = 0; i < train_pos.size(); ++i) {
        train_rows.push_back(scored[train_pos[i]]);
        ytr(static_cast<Eigen::Index>(i)) = labels[train_pos[i]];
    }
    for (std::size_t i = 0; i < test_pos.size(); ++i) {
        test_rows.push_back(scored[test_pos[i]]);
        yte(static_cast<Eigen::Index>(i)) = labels[test_pos[i]];
    }

    TrainedModel model;
    model.seed = cfg.seed;
    for (std::size_t c = 0; c < matrix.columns.size(); ++c) {
        std::vector<double> present;
        for (auto r : train_rows)
            if (!std::isnan(matrix.values[r][c])) present.push_back(matrix.values[r][c]);
        if (present.empty()) continue;
        model.imputation.columns.push_back(matrix.columns[c]);
        model.imputation.indicator.push_back(present.size() < train_rows.size());
        model.imputation.medians.push_back(median(std::move(present)));
    }
    if (model.imputation.columns.empty()) throw Error(ErrorCode::AllColumnsConstant, "no feature has training data");

    const auto raw_train = expand(matrix, train_rows, model.imputation);
    auto std_train = standardize(raw_train.x, raw_train.names);
    model.standardization = std_train.params;
    const auto aug = augment_noise(std_train.values, ytr, cfg.noise_scale, sub_seed(cfg.seed, kAugmentStream));

    const std::size_t width = model.standardization.names.size();
    const std::size_t target = std::min(cfg.rfe_target_features, width);
    const auto selected = rfe_select(aug.x, aug.y, target, cfg.rfe_params, cfg.rfe_step, sub_seed(cfg.seed, kRfeStream));
    for (auto j : selected) model.selected.push_back(model.standardization.names[j]);

    const auto search = random_search_cv(select_columns(std_train.values, selected), ytr, cfg, jobs);
    model.params = search.best;
    model.metrics.cv_score = search.cv_score;
    model.booster = gbt_fit(select_columns(aug.x, selected), aug.y, model.params, sub_seed(cfg.seed, kFitStream));
    model.metrics.train_rows = train_rows.size();
    model.metrics.test_rows = test_rows.size();
    if (!test_rows.empty()) {
        const auto xte = transform(model, matrix);
        const auto pred = model.booster.predict(select_rows(xte, test_rows));
        model.metrics.test_mse = mse(yte, pred);
        const double mean = yte.mean();
        const double sst = (yte.array() - mean).square().sum();
        model.metrics.test_r2 = sst > 0.0 ? 1.0 - model.metrics.test_mse * static_cast<double>(yte.size()) / sst
                                          : std::numeric_limits<double>::quiet_NaN();
    } else {
        model.metrics.test_mse = std::numeric_limits<double>::quiet_NaN();
        model.metrics.test_r2 = std::numeric_limits<double>::quiet_NaN();
    }
    return model;
}

Eigen::MatrixXd transform(const TrainedModel& model, const features::FeatureMatrix& matrix) {
    std::vector<std::size_t> rows(matrix.addresses.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const auto e = expand(matrix, rows, model.imputation);
    std::map<std::string_view, Eigen::Index> col_of;
    for (std::size_t j = 0; j < e.names.size(); ++j) col_of.emplace(e.names[j], static_cast<Eigen::Index>(j));
    std::map<std::string_view, std::size_t> std_of;
    for (std::size_t j = 0; j < model.standardization.names.size(); ++j) std_of.emplace(model.standardization.names[j], j);
    Eigen::MatrixXd z(e.x.rows(), static_cast<Eigen::Index>(model.selected.size()));
    for (std::size_t j = 0; j < model.selected.size(); ++j) {
        const auto& name = model.selected[j];
        auto c = col_of.find(name);
        auto s = std_of.find(name);
        if (c == col_of.end() || s == std_of.end())
            throw Error(ErrorCode::MissingFeatureColumn, "model feature '" + name + "' cannot be reconstructed");
        z.col(static_cast<Eigen::Index>(j)) =
            (e.x.col(c->second).array() - model.standardization.mean[s->second]) / model.standardization.stddev[s->second];
    }
    return z;
}

std::vector<pbls::LeaningScore> predict_all(const TrainedModel& model, const features::FeatureMatrix& matrix) {
    const auto z = transform(model, matrix);
    const auto pred = model.booster.predict(z);
    std::vector<pbls::LeaningScore> out;
    out.reserve(matrix.addresses.size());
    for (std::size_t r = 0; r < matrix.addresses.size(); ++r) {
        pbls::LeaningScore s;
        s.address = matrix.addresses[r];
        s.pbls = pred(static_cast<Eigen::Index>(r));
        s.provenance = pbls::Provenance::Predicted;
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

json params_json(const HyperParams& p) {
    return {{"n_estimators", p.n_estimators},
            {"learning_rate", p.learning_rate},
            {"max_depth", p.max_depth},
            {"subsample", p.subsample},
            {"l2_reg", p.l2_reg}};
}

} // namespace

std::string model_to_json(const TrainedModel& model) {
    json trees = json::array();
    for (const auto& t : model.booster.trees) {
        json feature = json::array(), threshold = json::array(), left = json::array(), right = json::array(),
             value = json::array();
        for (const auto& n : t.nodes) {
            feature.push_back(n.feature);
            threshold.push_back(n.threshold);
            left.push_back(n.left);
            right.push_back(n.right);
            value.push_back(n.value);
        }
        trees.push_back({{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"value", value}});
    }
    json doc = {
        {"format", "polylean.gbt"},
        {"version", TrainedModel::kVersion},
        {"seed", model.seed},
        {"imputation",
         {{"columns", model.imputation.columns},
          {"medians", model.imputation.medians},
          {"indicator", model.imputation.indicator}}},
        {"standardization",
         {{"names", model.standardization.names},
          {"mean", model.standardization.mean},
          {"stddev", model.standardization.stddev}}},
        {"selected_features", model.selected},
        {"hyperparameters", params_json(model.params)},
        {"base_score", model.booster.base_score},
        {"learning_rate", model.booster.learning_rate},
        {"importance", model.booster.importance},
        {"trees", trees},
        {"metrics",
         {{"test_mse", number_or_null(model.metrics.test_mse)},
          {"test_r2", number_or_null(model.metrics.test_r2)},
          {"cv_score", number_or_null(model.metrics.cv_score)},
          {"train_rows", model.metrics.train_rows},
          {"test_rows", model.metrics.test_rows}}},
    };
    return doc.dump(2) + "\n";
}

TrainedModel model_from_json(std::string_view text) {
    auto doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw Error(ErrorCode::SchemaMismatch, "model file is not a JSON object");
    if (doc.value("format", std::string()) != "polylean.gbt" || doc.value("version", 0) != TrainedModel::kVersion)
        throw Error(ErrorCode::SchemaMismatch, "unsupported model format or version");
    TrainedModel m;
    try {
        m.seed = doc.at("seed").get<std::uint64_t>();
        const auto& imp = doc.at("imputation");
        m.imputation.columns = imp.at("columns").get<std::vector<std::string>>();
        m.imputation.medians = imp.at("medians").get<std::vector<double>>();
        m.imputation.indicator = imp.at("indicator").get<std::vector<bool>>();
        const auto& st = doc.at("standardization");
        m.standardization.names = st.at("names").get<std::vector<std::string>>();
        m.standardization.mean = st.at("mean").get<std::vector<double>>();
        m.standardization.stddev = st.at("stddev").get<std::vector<double>>();
        m.selected = doc.at("selected_features").get<std::vector<std::string>>();
        const auto& hp = doc.at("hyperparameters");
        m.params = {hp.at("n_estimators").get<int>(), hp.at("learning_rate").get<double>(), hp.at("max_depth").get<int>(),
                    hp.at("subsample").get<double>(), hp.at("l2_reg").get<double>()};
        m.booster.base_score = doc.at("base_score").get<double>();
        m.booster.learning_rate = doc.at("learning_rate").get<double>();
        m.booster.importance = doc.at("importance").get<std::vector<double>>();
        for (const auto& t : doc.at("trees")) {
            const auto feature = t.at("feature").get<std::vector<int>>();
            const auto threshold = t.at("threshold").get<std::vector<double>>();
            const auto left = t.at("left").get<std::vector<int>>();
            const auto right = t.at("right").get<std::vector<int>>();
            const auto value = t.at("value").get<std::vector<double>>();
            const auto size = feature.size();
            if (threshold.size() != size || left.size() != size || right.size() != size || value.size() != size || size == 0)
                throw Error(ErrorCode::SchemaMismatch, "tree arrays disagree in length");
            Tree tree;
            for (std::size_t k = 0; k < size; ++k) {
                if (feature[k] >= 0) {
                    const bool ok = feature[k] < static_cast<int>(m.selected.size()) && left[k] > static_cast<int>(k) &&
                                    right[k] > static_cast<int>(k) && left[k] < static_cast<int>(size) &&
                                    right[k] < static_cast<int>(size);
                    if (!ok) throw Error(ErrorCode::SchemaMismatch, "tree node references are out of range");
                }
                tree.nodes.push_back({feature[k], threshold[k], left[k], right[k], value[k]});
            }
            m.booster.trees.push_back(std::move(tree));
        }
        const auto& mt = doc.at("metrics");
        m.metrics.test_mse = number_from(mt.at("test_mse"));
        m.metrics.test_r2 = number_from(mt.at("test_r2"));
        m.metrics.cv_score = number_from(mt.at("cv_score"));
        m.metrics.train_rows = mt.at("train_rows").get<std::size_t>();
        m.metrics.test_rows = mt.at("test_rows").get<std::size_t>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaMismatch, std::string("model file is malformed: ") + e.what());
    }
    if (m.imputation.medians.size() != m.imputation.columns.size() ||
        m.imputation.indicator.size() != m.imputation.columns.size() ||
        m.standardization.mean.size() != m.standardization.names.size() ||
        m.standardization.stddev.size() != m.standardization.names.size())
        throw Error(ErrorCode::SchemaMismatch, "model parameter arrays disagree in length");
    return m;
}

} // namespace polylean::predictor
