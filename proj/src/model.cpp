#include "geoprobe/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "geoprobe/errors.hpp"
#include "geoprobe/eval.hpp"
#include "geoprobe/fmat.hpp"
#include "geoprobe/rng.hpp"

namespace geoprobe::model {

namespace {

void check_labels(std::span<const int> labels, Eigen::Index n_rows) {
    if (static_cast<Eigen::Index>(labels.size()) != n_rows)
        throw DataError("label count " + std::to_string(labels.size()) +
                        " does not match row count " + std::to_string(n_rows));
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || labels[i] >= kNumClasses)
            throw DataError("label out of range at row " + std::to_string(i));
}

void check_finite(const Eigen::MatrixXd& X) {
    if (!X.allFinite()) throw DataError("non-finite feature values");
}

// Core fit at a fixed lambda. Weights come back in standardized space.
ModelWeights fit(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const RidgeConfig& cfg,
                 double lambda) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();

    ModelWeights w;
    w.feature_means = Eigen::VectorXd::Zero(d);
    w.feature_sds = Eigen::VectorXd::Ones(d);
    if (cfg.standardize) {
        w.feature_means = X.colwise().mean();
        for (Eigen::Index j = 0; j < d; ++j) {
            const double var = (X.col(j).array() - w.feature_means(j)).square().sum() / n;
            const double sd = std::sqrt(var);
            w.feature_sds(j) = sd > 0.0 ? sd : 1.0;
        }
    }

    // With standardize = false the means/sds are 0/1, so this is a copy.
    Eigen::MatrixXd Z = (X.rowwise() - w.feature_means.transpose()).array().rowwise() /
                        w.feature_sds.transpose().array();

    Eigen::RowVectorXd z_mean = Eigen::RowVectorXd::Zero(d);
    Eigen::RowVectorXd y_mean = Eigen::RowVectorXd::Zero(kNumClasses);
    Eigen::MatrixXd Yc = Y;
    if (cfg.fit_intercept) {
        z_mean = Z.colwise().mean();
        y_mean = Y.colwise().mean();
        Z.rowwise() -= z_mean;
        Yc.rowwise() -= y_mean;
    }

    if (lambda == 0.0 && d > n)
        throw DataError("ridge system is singular at lambda = 0 (d > n); use lambda > 0");

    if (d <= n) {
        Eigen::MatrixXd gram = Z.transpose() * Z;
        gram.diagonal().array() += lambda;
        const Eigen::MatrixXd rhs = Z.transpose() * Yc;
        const Eigen::LLT<Eigen::MatrixXd> llt(gram);
        if (llt.info() != Eigen::Success)
            throw DataError("ridge system is singular at lambda = " + std::to_string(lambda) +
                            "; use lambda > 0");
        w.W = llt.solve(rhs);
        if (lambda == 0.0) {
            const double residual = (gram * w.W - rhs).norm();
            if (!(residual <= 1e-6 * std::max(1.0, rhs.norm())))
                throw DataError("ridge system is singular at lambda = 0; use lambda > 0");
        }
    } else {
        Eigen::MatrixXd kernel = Z * Z.transpose();
        kernel.diagonal().array() += lambda;
        const Eigen::LLT<Eigen::MatrixXd> llt(kernel);
        if (llt.info() != Eigen::Success)
            throw DataError("ridge system is singular at lambda = " + std::to_string(lambda) +
                            "; use lambda > 0");
        w.W = Z.transpose() * llt.solve(Yc);
    }

    w.intercept = (y_mean - z_mean * w.W).transpose();
    w.trained_lambda = lambda;
    if (!w.W.allFinite() || !w.intercept.allFinite())
        throw DataError("ridge fit produced non-finite weights");
    return w;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<std::size_t>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(idx[i]));
    return out;
}

// Mean AP over the classes that have positives in the validation labels.
double selection_score(const Eigen::MatrixXd& scores, const std::vector<int>& labels) {
    double total = 0.0;
    int classes = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        std::vector<bool> positives(labels.size());
        bool any = false;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            positives[i] = labels[i] == c;
            any = any || positives[i];
        }
        if (!any) continue;
        std::vector<double> col(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i)
            col[i] = scores(static_cast<Eigen::Index>(i), c);
        total += eval::average_precision(col, positives);
        ++classes;
    }
    return total / classes;
}

double select_lambda(const Eigen::MatrixXd& X, std::span<const int> labels,
                     const RidgeConfig& cfg) {
    const std::size_t n = static_cast<std::size_t>(X.rows());
    const std::size_t val_n = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(n))), 1,
        n - 1);

    rng::Stream stream(rng::stream_key(cfg.selection_seed, "ridge.val"));
    const auto drawn = rng::draw_without_replacement(n, val_n, stream);
    std::vector<bool> is_val(n, false);
    for (const std::size_t i : drawn) is_val[i] = true;

    std::vector<std::size_t> train_idx, val_idx;
    std::vector<int> train_labels, val_labels;
    for (std::size_t i = 0; i < n; ++i) {
        if (is_val[i]) {
            val_idx.push_back(i);
            val_labels.push_back(labels[i]);
        } else {
            train_idx.push_back(i);
            train_labels.push_back(labels[i]);
        }
    }

    const Eigen::MatrixXd X_train = take_rows(X, train_idx);
    const Eigen::MatrixXd X_val = take_rows(X, val_idx);
    const Eigen::MatrixXd Y_train = encode_targets(train_labels);

    RidgeConfig fixed = cfg;
    fixed.select_lambda = false;
    double best_lambda = cfg.lambda_grid.front();
    double best_score = -1.0;
    for (const double lambda : cfg.lambda_grid) {
        const ModelWeights w = fit(X_train, Y_train, fixed, lambda);
        const double score = selection_score(predict_scores(X_val, w), val_labels);
        if (score > best_score) {
            best_score = score;
            best_lambda = lambda;
        }
    }
    return best_lambda;
}

}  // namespace

void RidgeConfig::validate() const {
    if (!std::isfinite(lambda) || lambda < 0.0)
        throw ConfigError("ridge: lambda must be finite and >= 0");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw ConfigError("ridge: val_fraction must be in (0, 1)");
    if (select_lambda) {
        if (lambda_grid.empty()) throw ConfigError("ridge: lambda grid is empty");
        for (const double l : lambda_grid)
            if (!std::isfinite(l) || l < 0.0)
                throw ConfigError("ridge: lambda grid entries must be finite and >= 0");
    }
}

Eigen::MatrixXd encode_targets(std::span<const int> labels) {
    check_labels(labels, static_cast<Eigen::Index>(labels.size()));
    Eigen::MatrixXd Y =
        Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(labels.size()), kNumClasses, -1.0);
    for (std::size_t i = 0; i < labels.size(); ++i)
        Y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    return Y;
}

ModelWeights train_ridge_ova(const Eigen::MatrixXd& X, std::span<const int> labels,
                             const RidgeConfig& cfg) {
    cfg.validate();
    if (X.rows() < 2) throw DataError("ridge: need at least 2 training rows");
    check_labels(labels, X.rows());
    check_finite(X);

    const double lambda = cfg.select_lambda ? select_lambda(X, labels, cfg) : cfg.lambda;
    return fit(X, encode_targets(labels), cfg, lambda);
}

Eigen::MatrixXd predict_scores(const Eigen::MatrixXd& X, const ModelWeights& weights) {
    if (X.cols() != weights.dim())
        throw DataError("predict: feature count " + std::to_string(X.cols()) +
                        " does not match model dimension " + std::to_string(weights.dim()));
    const Eigen::MatrixXd Z = (X.rowwise() - weights.feature_means.transpose()).array().rowwise() /
                              weights.feature_sds.transpose().array();
    Eigen::MatrixXd scores = Z * weights.W;
    scores.rowwise() += weights.intercept.transpose();
    return scores;
}

std::vector<int> predict_class(const Eigen::MatrixXd& scores) {
    if (scores.cols() != kNumClasses) throw DataError("predict_class: expected 3 score columns");
    std::vector<int> labels(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        int best = 0;
        for (int c = 1; c < kNumClasses; ++c)
            if (scores(i, c) > scores(i, best)) best = c;
        labels[static_cast<std::size_t>(i)] = best;
    }
    return labels;
}

void save_model(const std::filesystem::path& path, const ModelWeights& weights) {
    nlohmann::json header{{"format_version", 1},
                          {"d", weights.dim()},
                          {"n_classes", kNumClasses},
                          {"lambda", weights.trained_lambda},
                          {"featurizer_tag", weights.featurizer_tag},
                          {"intercept", std::vector<double>(weights.intercept.data(),
                                                            weights.intercept.data() + kNumClasses)},
                          {"feature_means",
                           std::vector<double>(weights.feature_means.data(),
                                               weights.feature_means.data() + weights.dim())},
                          {"feature_sds",
                           std::vector<double>(weights.feature_sds.data(),
                                               weights.feature_sds.data() + weights.dim())}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << header.dump() << '\n';

    fmat::Block block;
    block.rows = static_cast<std::uint64_t>(weights.dim());
    block.cols = kNumClasses;
    block.values.resize(static_cast<std::size_t>(weights.dim()) * kNumClasses);
    for (Eigen::Index i = 0; i < weights.dim(); ++i)
        for (int c = 0; c < kNumClasses; ++c)
            block.values[static_cast<std::size_t>(i) * kNumClasses + c] =
                static_cast<float>(weights.W(i, c));
    fmat::write_block(out, block);
    if (!out) throw DataError("write failed for " + path.string());
}

ModelWeights load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("missing model header in " + path.string());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad model header in " + path.string() + ": " + e.what());
    }

    ModelWeights w;
    try {
        const auto d = header.at("d").get<Eigen::Index>();
        w.trained_lambda = header.at("lambda").get<double>();
        w.featurizer_tag = header.value("featurizer_tag", "");
        const auto intercept = header.at("intercept").get<std::vector<double>>();
        const auto means = header.at("feature_means").get<std::vector<double>>();
        const auto sds = header.at("feature_sds").get<std::vector<double>>();
        if (intercept.size() != kNumClasses || means.size() != static_cast<std::size_t>(d) ||
            sds.size() != static_cast<std::size_t>(d))
            throw DataError("model header dimensions disagree in " + path.string());
        w.intercept = Eigen::Map<const Eigen::VectorXd>(intercept.data(), kNumClasses);
        w.feature_means = Eigen::Map<const Eigen::VectorXd>(means.data(), d);
        w.feature_sds = Eigen::Map<const Eigen::VectorXd>(sds.data(), d);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad model header in " + path.string() + ": " + e.what());
    }

    const auto block = fmat::read_block(in);
    if (block.cols != kNumClasses ||
        block.rows != static_cast<std::uint64_t>(w.feature_means.size()))
        throw DataError("model weight block dimensions disagree in " + path.string());
    w.W.resize(static_cast<Eigen::Index>(block.rows), kNumClasses);
    for (Eigen::Index i = 0; i < w.W.rows(); ++i)
        for (int c = 0; c < kNumClasses; ++c)
            w.W(i, c) = block.values[static_cast<std::size_t>(i) * kNumClasses + c];
    return w;
}

nlohmann::json ridge_config_to_json(const RidgeConfig& cfg) {
    return {{"lambda", cfg.lambda},
            {"standardize", cfg.standardize},
            {"fit_intercept", cfg.fit_intercept},
            {"select_lambda", cfg.select_lambda},
            {"lambda_grid", cfg.lambda_grid},
            {"val_fraction", cfg.val_fraction}};
}

RidgeConfig ridge_config_from_json(const nlohmann::json& j) {
    RidgeConfig cfg;
    try {
        cfg.lambda = j.value("lambda", cfg.lambda);
        cfg.standardize = j.value("standardize", cfg.standardize);
        cfg.fit_intercept = j.value("fit_intercept", cfg.fit_intercept);
        cfg.select_lambda = j.value("select_lambda", cfg.select_lambda);
        if (j.contains("lambda_grid")) cfg.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
        cfg.val_fraction = j.value("val_fraction", cfg.val_fraction);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad ridge config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

}  // namespace geoprobe::model
