#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace geoprobe::model {

inline constexpr int kNumClasses = 3;

struct RidgeConfig {
    double lambda = 1.0;
    bool standardize = true;
    bool fit_intercept = true;
    // When set, lambda is chosen from lambda_grid by mean AP on an internal
    // validation split, then the model is refit on all training rows.
    bool select_lambda = false;
    std::vector<double> lambda_grid{1e-4, 1e-2, 1.0, 1e2, 1e4};
    double val_fraction = 0.2;
    std::uint64_t selection_seed = 0;

    void validate() const;
};

struct ModelWeights {
    Eigen::MatrixXd W;              // d x 3, in standardized feature space
    Eigen::VectorXd intercept;      // 3
    Eigen::VectorXd feature_means;  // d (zeros when standardize = false)
    Eigen::VectorXd feature_sds;    // d (ones when standardize = false)
    double trained_lambda = 0.0;
    std::string featurizer_tag;     // provenance echo, may be empty

    Eigen::Index dim() const { return W.rows(); }
};

// Column c holds +1 where label == c, -1 elsewhere.
Eigen::MatrixXd encode_targets(std::span<const int> labels);

// One-vs-all ridge: optionally standardize columns with training statistics
// (zero-variance columns get sd = 1 and end up with zero weight), center,
// solve (Z'Z + lambda I) W = Z'Y through one Cholesky factorization (the
// n x n dual form when d > n), intercept fitted unpenalized. lambda = 0 on a
// singular system is an error suggesting lambda > 0.
ModelWeights train_ridge_ova(const Eigen::MatrixXd& X, std::span<const int> labels,
                             const RidgeConfig& cfg);

// scores = standardized(X) * W + intercept, one column per class.
Eigen::MatrixXd predict_scores(const Eigen::MatrixXd& X, const ModelWeights& weights);

// Row-wise argmax; ties go to the lowest class index.
std::vector<int> predict_class(const Eigen::MatrixXd& scores);

// One JSON header line (dimensions, lambda, feature statistics) followed by
// the binary weight block.
void save_model(const std::filesystem::path& path, const ModelWeights& weights);
ModelWeights load_model(const std::filesystem::path& path);

nlohmann::json ridge_config_to_json(const RidgeConfig& cfg);
RidgeConfig ridge_config_from_json(const nlohmann::json& j);

}  // namespace geoprobe::model
