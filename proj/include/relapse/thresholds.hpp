#pragma once
#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "relapse/errors.hpp"
#include "relapse/synth.hpp"

namespace relapse {

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const { return tp + fp + tn + fn; }
    double precision() const { return tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp); }
    double recall() const { return tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn); }
    double sensitivity() const { return recall(); }
    double specificity() const { return tn + fp == 0 ? 0.0 : double(tn) / double(tn + fp); }
};

// F_beta = (1+b^2) P R / (b^2 P + R); recall-weighted for beta > 1,
// precision-weighted for beta < 1. The 0/0 case evaluates to 0.
inline double f_beta_score(double precision, double recall, double beta) {
    if (beta < 0.0) throw argument_error("f_beta_score: beta must be >= 0");
    const double b2 = beta * beta;
    const double denom = b2 * precision + recall;
    if (denom == 0.0) return 0.0;
    return (1.0 + b2) * precision * recall / denom;
}

// Classifier-score rule: outcomes above theta count as relapses (strict >).
inline ConfusionCounts confusion_at_theta(const std::vector<double>& scores,
                                          const std::vector<int>& labels, double theta) {
    if (scores.size() != labels.size())
        throw shape_error("confusion_at_theta: scores and labels differ in length");
    ConfusionCounts c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] > theta;
        if (labels[i] == 1)
            pred ? ++c.tp : ++c.fn;
        else
            pred ? ++c.fp : ++c.tn;
    }
    return c;
}

struct KappaBounds {
    double low = kKappaLowDays;
    double high = kKappaHighDays;
};

// Regression-output rule: predicted RFS times <= kappa count as relapses
// (inclusive). kappa must lie within [low, high].
inline ConfusionCounts confusion_at_kappa(const std::vector<double>& pred_rfs,
                                          const std::vector<int>& labels, double kappa,
                                          const KappaBounds& bounds = {}) {
    if (pred_rfs.size() != labels.size())
        throw shape_error("confusion_at_kappa: predictions and labels differ in length");
    if (kappa < bounds.low || kappa > bounds.high)
        throw argument_error("confusion_at_kappa: kappa outside [kappa_low, kappa_high]");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred_rfs.size(); ++i) {
        const bool pred = pred_rfs[i] <= kappa;
        if (labels[i] == 1)
            pred ? ++c.tp : ++c.fn;
        else
            pred ? ++c.fp : ++c.tn;
    }
    return c;
}

enum class ThresholdDomain { theta_unit_interval, kappa_days };
enum class TieBreakRule { lowest_argmax };

struct ThresholdReport {
    double beta = 1.0;
    std::vector<double> grid;
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<double> scores; // F_beta per grid point
    double chosen = 0.0;
    std::size_t chosen_index = 0;
    TieBreakRule rule = TieBreakRule::lowest_argmax;
    ThresholdDomain domain = ThresholdDomain::theta_unit_interval;
};

namespace detail {

inline std::vector<double> sorted_unique(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

}  // namespace detail

// Sweeps F_beta over a data-derived grid and picks the smallest maximizing
// threshold. The grid is built from midpoints between adjacent unique values,
// so every achievable confusion matrix (within the allowed range) is hit.
inline ThresholdReport sweep_threshold(const std::vector<double>& values,
                                       const std::vector<int>& labels, double beta,
                                       ThresholdDomain domain, const KappaBounds& bounds = {}) {
    if (values.size() != labels.size())
        throw shape_error("sweep_threshold: values and labels differ in length");
    if (values.empty()) throw argument_error("sweep_threshold: empty input");
    const std::size_t n_pos = static_cast<std::size_t>(
        std::count(labels.begin(), labels.end(), 1));
    if (n_pos == 0 || n_pos == labels.size())
        throw metric_error("sweep_threshold: undefined optimum with single-class labels");

    ThresholdReport rep;
    rep.beta = beta;
    rep.domain = domain;

    const auto uniq = detail::sorted_unique(values);
    if (domain == ThresholdDomain::theta_unit_interval) {
        for (double v : values)
            if (v < 0.0 || v > 1.0)
                throw argument_error("sweep_threshold: classifier scores must lie in [0,1]");
        rep.grid.push_back(0.0);
        for (std::size_t i = 0; i + 1 < uniq.size(); ++i)
            rep.grid.push_back(0.5 * (uniq[i] + uniq[i + 1]));
        rep.grid.push_back(1.0);
    } else {
        rep.grid.push_back(bounds.low);
        for (std::size_t i = 0; i + 1 < uniq.size(); ++i) {
            const double mid = 0.5 * (uniq[i] + uniq[i + 1]);
            if (mid >= bounds.low && mid <= bounds.high) rep.grid.push_back(mid);
        }
        rep.grid.push_back(bounds.high);
        rep.grid = detail::sorted_unique(rep.grid);
    }

    for (double t : rep.grid) {
        const ConfusionCounts c = domain == ThresholdDomain::theta_unit_interval
                                      ? confusion_at_theta(values, labels, t)
                                      : confusion_at_kappa(values, labels, t, bounds);
        rep.precision.push_back(c.precision());
        rep.recall.push_back(c.recall());
        rep.scores.push_back(f_beta_score(c.precision(), c.recall(), beta));
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < rep.scores.size(); ++i)
        if (rep.scores[i] > rep.scores[best]) best = i; // grid ascending: first max wins
    rep.chosen_index = best;
    rep.chosen = rep.grid[best];
    return rep;
}

}  // namespace relapse
