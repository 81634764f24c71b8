#include "geoprobe/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geoprobe/errors.hpp"

namespace geoprobe::eval {

double average_precision(const std::vector<double>& scores, const std::vector<bool>& positives) {
    if (scores.size() != positives.size())
        throw DataError("average_precision: scores/positives length mismatch");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (bool p : positives) n_pos += p ? 1 : 0;
    if (n_pos == 0)
        throw DataError("average_precision: undefined with zero positives");

    std::vector<std::size_t> rank(n);
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];  // stable keeps ascending index on ties
    });

    double sum_precision = 0.0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (positives[rank[k]]) {
            ++hits;
            sum_precision += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
    }
    return sum_precision / static_cast<double>(n_pos);
}

EvalReport mean_average_precision(const Eigen::MatrixXd& scores, const std::vector<int>& labels) {
    const std::size_t n = labels.size();
    if (static_cast<std::size_t>(scores.rows()) != n || scores.cols() != 3)
        throw DataError("mean_average_precision: scores must be n x 3 aligned with labels");

    std::array<std::size_t, 3> counts{0, 0, 0};
    for (int label : labels) {
        if (label < 0 || label > 2) throw DataError("mean_average_precision: label out of range");
        ++counts[static_cast<std::size_t>(label)];
    }
    for (int c = 0; c < 3; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0)
            throw DataError("mean_average_precision: class " + std::to_string(c) +
                            " absent from test labels");
    }

    EvalReport report;
    report.n_test = n;
    std::vector<double> col(n);
    std::vector<bool> pos(n);
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            col[i] = scores(static_cast<Eigen::Index>(i), c);
            pos[i] = labels[i] == c;
        }
        report.per_class_ap[static_cast<std::size_t>(c)] = average_precision(col, pos);
        report.class_prevalence[static_cast<std::size_t>(c)] =
            static_cast<double>(counts[static_cast<std::size_t>(c)]) / static_cast<double>(n);
    }
    report.map = (report.per_class_ap[0] + report.per_class_ap[1] + report.per_class_ap[2]) / 3.0;
    return report;
}

std::array<double, 3> no_skill_baseline(const std::vector<int>& labels) {
    std::array<std::size_t, 3> counts{0, 0, 0};
    for (int label : labels) {
        if (label < 0 || label > 2) throw DataError("no_skill_baseline: label out of range");
        ++counts[static_cast<std::size_t>(label)];
    }
    for (int c = 0; c < 3; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0)
            throw DataError("no_skill_baseline: class " + std::to_string(c) + " absent");
    }
    const double n = static_cast<double>(labels.size());
    return {counts[0] / n, counts[1] / n, counts[2] / n};
}

}  // namespace geoprobe::eval
