#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "relapse/rng.hpp"
#include "relapse/thresholds.hpp"

using namespace relapse;
using Catch::Matchers::WithinAbs;

namespace {

// Brute-force F_beta maximum over a dense threshold grid.
double dense_grid_max(const std::vector<double>& values, const std::vector<int>& labels,
                      double beta, ThresholdDomain domain, const KappaBounds& bounds) {
    double best = -1.0;
    const int n = 10000;
    for (int i = 0; i <= n; ++i) {
        double t;
        if (domain == ThresholdDomain::theta_unit_interval)
            t = static_cast<double>(i) / n;
        else
            t = bounds.low + (bounds.high - bounds.low) * static_cast<double>(i) / n;
        const ConfusionCounts c = domain == ThresholdDomain::theta_unit_interval
                                      ? confusion_at_theta(values, labels, t)
                                      : confusion_at_kappa(values, labels, t, bounds);
        best = std::max(best, f_beta_score(c.precision(), c.recall(), beta));
    }
    return best;
}

}  // namespace

TEST_CASE("f_beta hand-evaluated values") {
    REQUIRE_THAT(f_beta_score(0.5, 1.0, 1.0), WithinAbs(2.0 / 3.0, 1e-12));
    REQUIRE_THAT(f_beta_score(0.5, 1.0, 2.0), WithinAbs(5.0 * 0.5 / 3.0, 1e-12));
    REQUIRE_THAT(f_beta_score(0.5, 1.0, 0.5), WithinAbs(0.625 / 1.125, 1e-12));
    REQUIRE(f_beta_score(0.0, 0.0, 1.0) == 0.0);
}

TEST_CASE("f_beta equals p when precision and recall agree") {
    for (double beta : {0.0, 0.3, 1.0, 2.0, 7.0})
        for (double p : {0.1, 0.35, 0.8, 1.0})
            REQUIRE_THAT(f_beta_score(p, p, beta), WithinAbs(p, 1e-12));
}

TEST_CASE("f_beta approaches recall and precision in the beta limits") {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const double p = rng.uniform(0.1, 1.0);
        const double r = rng.uniform(0.1, 1.0);
        REQUIRE_THAT(f_beta_score(p, r, 100.0), WithinAbs(r, 1e-2));
        REQUIRE_THAT(f_beta_score(p, r, 0.01), WithinAbs(p, 1e-2));
    }
}

TEST_CASE("f_beta is monotone in precision and recall") {
    for (double beta : {0.5, 1.0, 2.0}) {
        double prev = -1.0;
        for (double p = 0.05; p <= 1.0; p += 0.05) {
            const double f = f_beta_score(p, 0.6, beta);
            REQUIRE(f >= prev);
            prev = f;
        }
        prev = -1.0;
        for (double r = 0.05; r <= 1.0; r += 0.05) {
            const double f = f_beta_score(0.6, r, beta);
            REQUIRE(f >= prev);
            prev = f;
        }
    }
}

TEST_CASE("confusion_at_theta enumerated example and boundaries") {
    const std::vector<double> scores{0.1, 0.3, 0.6, 0.9};
    const std::vector<int> labels{0, 0, 1, 1};

    const ConfusionCounts c = confusion_at_theta(scores, labels, 0.5);
    REQUIRE(c.tp == 2);
    REQUIRE(c.tn == 2);
    REQUIRE(c.fp == 0);
    REQUIRE(c.fn == 0);

    const ConfusionCounts hi = confusion_at_theta(scores, labels, 1.0);
    REQUIRE(hi.tp == 0);
    REQUIRE(hi.fn == 2);

    const ConfusionCounts lo = confusion_at_theta(scores, labels, 0.0);
    REQUIRE(lo.tp + lo.fp == 4); // all scores > 0 predicted positive

    REQUIRE_THROWS_AS(confusion_at_theta(scores, {0, 1}, 0.5), shape_error);
}

TEST_CASE("confusion partitions the dataset at every threshold") {
    Rng rng(14);
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 100; ++i) {
        scores.push_back(rng.uniform01());
        labels.push_back(rng.bernoulli(0.4) ? 1 : 0);
    }
    const std::size_t pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    for (double t : {0.0, 0.2, 0.5, 0.9, 1.0}) {
        const ConfusionCounts c = confusion_at_theta(scores, labels, t);
        REQUIRE(c.tp + c.fn == pos);
        REQUIRE(c.tn + c.fp == labels.size() - pos);
        REQUIRE(c.total() == labels.size());
    }
}

TEST_CASE("confusion_at_kappa is inclusive at kappa and range-checked") {
    const std::vector<double> pred{1000.0, 2000.0};
    const std::vector<int> labels{1, 0};
    const ConfusionCounts c = confusion_at_kappa(pred, labels, 1642.0);
    REQUIRE(c.tp == 1);
    REQUIRE(c.tn == 1);

    const ConfusionCounts at = confusion_at_kappa({1700.0, 1700.0}, labels, 1700.0);
    REQUIRE(at.tp == 1); // exactly kappa counts as relapse
    REQUIRE(at.fp == 1);

    REQUIRE_THROWS_AS(confusion_at_kappa(pred, labels, 1600.0), argument_error);
    REQUIRE_THROWS_AS(confusion_at_kappa(pred, labels, 1900.0), argument_error);
}

TEST_CASE("sweep picks the smallest maximizer on separated scores") {
    const std::vector<double> scores{0.1, 0.2, 0.8, 0.9};
    const std::vector<int> labels{0, 0, 1, 1};
    const ThresholdReport rep =
        sweep_threshold(scores, labels, 1.0, ThresholdDomain::theta_unit_interval);
    REQUIRE(rep.scores[rep.chosen_index] == 1.0);
    REQUIRE(rep.chosen == 0.5); // midpoint between the classes
    for (std::size_t i = 0; i < rep.chosen_index; ++i) REQUIRE(rep.scores[i] < 1.0);
}

TEST_CASE("sweep attains the dense-grid optimum") {
    Rng rng(8);
    for (int inst = 0; inst < 60; ++inst) {
        const std::size_t n = 5 + rng.below(25);
        std::vector<double> scores;
        std::vector<int> labels;
        bool has0 = false, has1 = false;
        for (std::size_t i = 0; i < n; ++i) {
            // duplicated scores exercise tie handling
            scores.push_back(std::round(rng.uniform01() * 10.0) / 10.0);
            const int l = rng.bernoulli(0.5) ? 1 : 0;
            labels.push_back(l);
            (l ? has1 : has0) = true;
        }
        if (!has0 || !has1) continue;
        const double beta = std::vector<double>{0.5, 1.0, 2.0}[inst % 3];
        const ThresholdReport rep =
            sweep_threshold(scores, labels, beta, ThresholdDomain::theta_unit_interval);
        const double dense =
            dense_grid_max(scores, labels, beta, ThresholdDomain::theta_unit_interval, {});
        REQUIRE(rep.scores[rep.chosen_index] >= dense - 1e-12);
        for (std::size_t i = 0; i < rep.chosen_index; ++i)
            REQUIRE(rep.scores[i] < rep.scores[rep.chosen_index]);
    }
}

TEST_CASE("kappa sweep selects kappa_low under a tie") {
    // Perfect separation: every kappa in range yields the same confusion, so
    // the tie-break lands on the lowest grid point.
    const std::vector<double> pred{500.0, 900.0, 2000.0, 2400.0};
    const std::vector<int> labels{1, 1, 0, 0};
    const ThresholdReport rep =
        sweep_threshold(pred, labels, 1.0, ThresholdDomain::kappa_days);
    REQUIRE(rep.scores[rep.chosen_index] == 1.0);
    REQUIRE(rep.chosen == 1642.0);
}

TEST_CASE("kappa sweep attains the dense-grid optimum") {
    Rng rng(31);
    const KappaBounds bounds;
    for (int inst = 0; inst < 40; ++inst) {
        const std::size_t n = 6 + rng.below(20);
        std::vector<double> pred;
        std::vector<int> labels;
        bool has0 = false, has1 = false;
        for (std::size_t i = 0; i < n; ++i) {
            pred.push_back(rng.uniform(800.0, 2555.0));
            const int l = rng.bernoulli(0.5) ? 1 : 0;
            labels.push_back(l);
            (l ? has1 : has0) = true;
        }
        if (!has0 || !has1) continue;
        const ThresholdReport rep =
            sweep_threshold(pred, labels, 1.0, ThresholdDomain::kappa_days, bounds);
        const double dense = dense_grid_max(pred, labels, 1.0, ThresholdDomain::kappa_days, bounds);
        REQUIRE(rep.scores[rep.chosen_index] >= dense - 1e-12);
        REQUIRE(rep.chosen >= bounds.low);
        REQUIRE(rep.chosen <= bounds.high);
    }
}

TEST_CASE("sweep optimum is invariant under monotone score transforms") {
    Rng rng(77);
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) {
        scores.push_back(rng.uniform01());
        labels.push_back(rng.bernoulli(0.35) ? 1 : 0);
    }
    const ThresholdReport a =
        sweep_threshold(scores, labels, 1.0, ThresholdDomain::theta_unit_interval);
    std::vector<double> squared;
    for (double s : scores) squared.push_back(s * s); // strictly monotone on [0,1]
    const ThresholdReport b =
        sweep_threshold(squared, labels, 1.0, ThresholdDomain::theta_unit_interval);
    REQUIRE_THAT(a.scores[a.chosen_index], WithinAbs(b.scores[b.chosen_index], 1e-12));
    const ConfusionCounts ca = confusion_at_theta(scores, labels, a.chosen);
    const ConfusionCounts cb = confusion_at_theta(squared, labels, b.chosen);
    REQUIRE(ca.tp == cb.tp);
    REQUIRE(ca.fp == cb.fp);
}

TEST_CASE("sweep rejects single-class labels") {
    REQUIRE_THROWS_AS(
        sweep_threshold({0.2, 0.4}, {1, 1}, 1.0, ThresholdDomain::theta_unit_interval),
        metric_error);
    REQUIRE_THROWS_AS(
        sweep_threshold({0.2, 0.4}, {0, 0}, 1.0, ThresholdDomain::theta_unit_interval),
        metric_error);
}
