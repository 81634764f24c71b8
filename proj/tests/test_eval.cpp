#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "geoprobe/errors.hpp"
#include "geoprobe/eval.hpp"

using namespace geoprobe;

namespace {

// Independent AP: materialize the ranking explicitly as (score desc, index
// asc) pairs with std::sort, then walk the precision-recall step curve.
double step_curve_ap(const std::vector<double>& scores, const std::vector<bool>& positives) {
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t i = 0; i < scores.size(); ++i) order.emplace_back(scores[i], i);
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::size_t n_pos = 0;
    for (const bool p : positives) n_pos += p ? 1 : 0;
    std::size_t hits = 0;
    double sum_precision = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (positives[order[k].second]) {
            ++hits;
            sum_precision += double(hits) / double(k + 1);
        }
    }
    return sum_precision / double(n_pos);
}

}  // namespace

TEST_CASE("the worked three-row example") {
    const std::vector<double> scores{0.9, 0.8, 0.7};
    const std::vector<bool> positives{true, false, true};
    // precision 1/1 at rank 1 and 2/3 at rank 3, averaged over 2 positives
    CHECK(eval::average_precision(scores, positives) ==
          doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-15));
}

TEST_CASE("perfect rankings and all-positive sets score 1") {
    CHECK(eval::average_precision({0.9, 0.5, 0.1}, {true, true, false}) == 1.0);
    CHECK(eval::average_precision({0.1, 0.5, 0.9}, {false, true, true}) == 1.0);
    CHECK(eval::average_precision({0.3, 0.3, 0.3}, {true, true, true}) == 1.0);
}

TEST_CASE("score ties break toward the earlier row") {
    // If ties broke the other way the positive would rank first and AP = 1.
    CHECK(eval::average_precision({0.5, 0.5}, {false, true}) == 0.5);
    CHECK(eval::average_precision({0.5, 0.5}, {true, false}) == 1.0);
}

TEST_CASE("average precision needs at least one positive") {
    CHECK_THROWS_AS(eval::average_precision({0.1, 0.2}, {false, false}), DataError);
    CHECK_THROWS_AS(eval::average_precision({}, {}), DataError);
    CHECK_THROWS_AS(eval::average_precision({0.1}, {true, false}), DataError);
}

TEST_CASE("bit equality with the step-curve oracle on a thousand random instances") {
    std::mt19937_64 gen(202);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 1'000; ++trial) {
        const std::size_t n = 1 + gen() % 12;
        std::vector<double> scores;
        std::vector<bool> positives;
        const bool constant = trial % 7 == 0;
        const double c = unit(gen);
        for (std::size_t i = 0; i < n; ++i) {
            scores.push_back(constant ? c : unit(gen));
            // quantize some scores so exact ties happen regularly
            if (!constant && trial % 3 == 0) scores.back() = std::round(scores.back() * 4) / 4;
            positives.push_back(gen() % 2 == 0);
        }
        if (std::none_of(positives.begin(), positives.end(), [](bool b) { return b; }))
            positives[gen() % n] = true;
        const double got = eval::average_precision(scores, positives);
        const double want = step_curve_ap(scores, positives);
        CHECK(got == want);  // bitwise, not approximate
        CHECK(got > 0.0);
        CHECK(got <= 1.0);
    }
}

TEST_CASE("ap is invariant under strictly increasing score transforms") {
    std::mt19937_64 gen(33);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> scores;
    std::vector<bool> positives;
    for (int i = 0; i < 50; ++i) {
        scores.push_back(unit(gen));
        positives.push_back(gen() % 3 == 0);
    }
    positives[0] = true;
    const double base = eval::average_precision(scores, positives);

    auto affine = scores;
    for (auto& s : affine) s = 2.0 * s + 3.0;
    CHECK(eval::average_precision(affine, positives) == base);

    auto squashed = scores;
    for (auto& s : squashed) s = std::tanh(s);
    CHECK(eval::average_precision(squashed, positives) == base);
}

TEST_CASE("mean_average_precision fills the report and averages exactly") {
    Eigen::MatrixXd scores(6, 3);
    scores << 0.9, 0.1, 0.0,  //
        0.8, 0.3, 0.1,        //
        0.2, 0.7, 0.1,        //
        0.1, 0.6, 0.2,        //
        0.0, 0.2, 0.9,        //
        0.1, 0.1, 0.8;
    const std::vector<int> labels{0, 0, 1, 1, 2, 2};
    const auto report = eval::mean_average_precision(scores, labels);

    CHECK(report.n_test == 6);
    CHECK(report.per_class_ap[0] == 1.0);
    CHECK(report.per_class_ap[1] == 1.0);
    CHECK(report.per_class_ap[2] == 1.0);
    CHECK(report.map == 1.0);
    CHECK(report.class_prevalence[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(report.class_prevalence[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(report.class_prevalence[2] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    // column c is scored against positives (label == c) and map is the mean
    Eigen::MatrixXd shuffled(6, 3);
    std::mt19937_64 gen(4);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (Eigen::Index i = 0; i < 6; ++i)
        for (Eigen::Index j = 0; j < 3; ++j) shuffled(i, j) = unit(gen);
    const auto r2 = eval::mean_average_precision(shuffled, labels);
    std::vector<bool> pos0{true, true, false, false, false, false};
    std::vector<double> col0(shuffled.col(0).data(), shuffled.col(0).data() + 6);
    CHECK(r2.per_class_ap[0] == eval::average_precision(col0, pos0));
    CHECK(r2.map ==
          doctest::Approx((r2.per_class_ap[0] + r2.per_class_ap[1] + r2.per_class_ap[2]) / 3.0)
              .epsilon(1e-15));
}

TEST_CASE("mean_average_precision requires every class present") {
    Eigen::MatrixXd scores = Eigen::MatrixXd::Random(4, 3);
    CHECK_THROWS_AS(eval::mean_average_precision(scores, {0, 0, 1, 1}), DataError);
    CHECK_THROWS_AS(eval::mean_average_precision(scores, {0, 1}), DataError);
}

TEST_CASE("the no-skill baseline is the class prevalence") {
    const auto b = eval::no_skill_baseline({0, 1, 2, 0, 1, 2});
    CHECK(b[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(b[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(b[2] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    const auto skew = eval::no_skill_baseline({0, 0, 0, 1, 2});
    CHECK(skew[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK_THROWS_AS(eval::no_skill_baseline({0, 1, 1}), DataError);
}
