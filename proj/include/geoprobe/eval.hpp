#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace geoprobe::eval {

// One sweep cell's metrics plus provenance.
struct EvalReport {
    std::array<double, 3> per_class_ap{0.0, 0.0, 0.0};
    double map = 0.0;
    std::size_t n_test = 0;
    std::size_t n_train_effective = 0;
    std::array<double, 3> class_prevalence{0.0, 0.0, 0.0};

    std::string scheme;
    std::string featurizer;
    std::size_t n_requested = 0;
    std::uint64_t seed = 0;

    bool operator==(const EvalReport&) const = default;
};

// Area under the precision-recall step curve: rank by descending score (ties
// broken by ascending input index), AP = (1/P) * sum over positive ranks k of
// precision@k. Rows must already be in canonical (tile id) order so the index
// tie rule is stable. Throws DataError when there are no positives.
double average_precision(const std::vector<double>& scores, const std::vector<bool>& positives);

// Per-class one-vs-all AP using score column c with positives (label == c);
// map is the unweighted mean. Every class must appear in labels.
EvalReport mean_average_precision(const Eigen::MatrixXd& scores, const std::vector<int>& labels);

// Class prevalence, the first-order AP of an uninformative ranking. Requires
// all three classes present.
std::array<double, 3> no_skill_baseline(const std::vector<int>& labels);

}  // namespace geoprobe::eval
