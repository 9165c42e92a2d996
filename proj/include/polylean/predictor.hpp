#pragma once

#include "polylean/features.hpp"
#include "polylean/pbls.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace polylean::predictor {

template <typename T>
struct Range {
    T lo{};
    T hi{};
};

struct HyperParams {
    int n_estimators = 100;
    double learning_rate = 0.1;
    int max_depth = 3;
    double subsample = 1.0;
    double l2_reg = 1.0;

    bool operator==(const HyperParams&) const = default;
};

struct ModelConfig {
    Range<int> n_estimators{50, 300};
    Range<double> learning_rate{0.02, 0.3};
    Range<int> max_depth{2, 6};
    Range<double> subsample{0.6, 1.0};
    Range<double> l2_reg{0.0, 10.0};
    int search_draws = 50;
    int cv_folds = 5;
    double noise_scale = 0.01;
    std::size_t rfe_target_features = 20;
    double rfe_step = 0.1;       // fraction of remaining features dropped per round
    HyperParams rfe_params{};    // model used to rank features during elimination
    double test_fraction = 0.2;
    std::uint64_t seed = 0;

    /// Throws InvalidConfig on empty or out-of-domain ranges.
    void validate() const;
};

/// JSON object; every key optional. Ranges are two-element arrays.
ModelConfig parse_model_config(std::string_view json_text);

struct Standardization {
    std::vector<std::string> names;
    std::vector<double> mean;
    std::vector<double> stddev; // population standard deviation, always > 0
};

struct Standardized {
    Eigen::MatrixXd values;
    Standardization params;
    std::vector<std::string> dropped; // constant columns
};

/// Centres and scales each column; constant columns are dropped.
/// Throws AllColumnsConstant when nothing remains.
Standardized standardize(const Eigen::MatrixXd& x, std::span<const std::string> names);
/// `x` columns must follow `params.names`.
Eigen::MatrixXd apply_standardization(const Eigen::MatrixXd& x, const Standardization& params);
Eigen::MatrixXd invert_standardization(const Eigen::MatrixXd& z, const Standardization& params);

struct Augmented {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
};

/// Original rows followed by one copy of each with i.i.d. N(0, scale^2) noise.
Augmented augment_noise(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double scale, std::uint64_t seed);

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0; // x < threshold goes left
    int left = -1;
    int right = -1;
    double value = 0.0; // leaf output before shrinkage

    bool operator==(const TreeNode&) const = default;
};

struct Tree {
    std::vector<TreeNode> nodes; // root at 0

    double predict(const double* row, Eigen::Index stride) const;
    bool operator==(const Tree&) const = default;
};

struct Booster {
    double base_score = 0.0;
    double learning_rate = 0.1;
    std::vector<Tree> trees;
    std::vector<double> importance; // cumulative split gain per feature

    double predict_row(const Eigen::MatrixXd& x, Eigen::Index row) const;
    Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
    bool operator==(const Booster&) const = default;
};

/// Gradient-boosted regression trees on squared error. Splits are exact over
/// sorted values with midpoint thresholds; trees grow level by level. Each
/// tree fits on a row subsample drawn without replacement from substream
/// (seed, tree). Throws DegenerateInput for fewer than 2 rows, non-finite
/// data or invalid parameters.
Booster gbt_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const HyperParams& params, std::uint64_t seed);

/// Recursive feature elimination: refit, then drop the ceil(step * remaining)
/// lowest-importance features (never below the target) until `target` remain.
/// Returned in original column order.
std::vector<std::size_t> rfe_select(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::size_t target,
                                    const HyperParams& params, double step, std::uint64_t seed);

struct SearchResult {
    HyperParams best;
    double cv_score = 0.0; // mean negative MSE over folds
    std::vector<HyperParams> draws;
    std::vector<double> scores;
};

/// Random search with k-fold CV. Training folds are noise-augmented when
/// cfg.noise_scale > 0. Ties keep the earliest draw.
SearchResult random_search_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ModelConfig& cfg,
                              unsigned jobs = 1);

/// Seeded fold index per row, balanced to within one row.
std::vector<int> fold_assignment(std::size_t rows, int folds, std::uint64_t seed);

struct Imputation {
    std::vector<std::string> columns;
    std::vector<double> medians;
    std::vector<bool> indicator; // adds `<column>__missing`
};

struct Metrics {
    double test_mse = 0.0;
    double test_r2 = 0.0;
    double cv_score = 0.0;
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
};

struct TrainedModel {
    static constexpr int kVersion = 1;
    Imputation imputation;
    Standardization standardization;
    std::vector<std::string> selected; // booster feature order
    Booster booster;
    HyperParams params;
    Metrics metrics;
    std::uint64_t seed = 0;
};

/// Split, impute, standardize, augment, eliminate, search, fit and evaluate.
/// Rows are the matrix addresses that have a score.
TrainedModel train(const features::FeatureMatrix& matrix, std::span<const pbls::LeaningScore> scores,
                   const ModelConfig& cfg, unsigned jobs = 1);

/// Rows of `matrix` transformed into the model's selected feature space.
/// Throws MissingFeatureColumn.
Eigen::MatrixXd transform(const TrainedModel& model, const features::FeatureMatrix& matrix);

/// Predicted scores for every row of `matrix`.
std::vector<pbls::LeaningScore> predict_all(const TrainedModel& model, const features::FeatureMatrix& matrix);

std::string model_to_json(const TrainedModel& model);
TrainedModel model_from_json(std::string_view text);

} // namespace polylean::predictor
