#pragma once
#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "relapse/errors.hpp"
#include "relapse/thresholds.hpp"

namespace relapse {

// ROC AUC as the Mann-Whitney rank statistic: the fraction of
// (positive, negative) pairs ranked correctly, with half credit for ties.
// Computed via average ranks in O(n log n); exactly equal to the pairwise
// enumeration because tie credits are dyadic.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw shape_error("roc_auc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int l : labels) n_pos += (l == 1);
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw metric_error("roc_auc: undefined with single-class labels");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        // ranks are 1-based; tied block [i, j) shares the average rank
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos -
                     0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

enum class CIndexMode { all, relapses_only };

// Harrell-style concordance. A pair (i, j) is comparable when the shorter
// true time belongs to an observed event (and, in relapses_only mode, the
// longer one does too). Concordant when the predicted times order the same
// way; prediction ties earn half credit.
inline double c_index(const std::vector<double>& pred_times,
                      const std::vector<double>& true_times, const std::vector<int>& events,
                      CIndexMode mode = CIndexMode::all) {
    const std::size_t n = pred_times.size();
    if (true_times.size() != n || events.size() != n)
        throw shape_error("c_index: input lengths differ");
    if (mode == CIndexMode::relapses_only) {
        std::size_t n_events = 0;
        for (int e : events) n_events += (e == 1);
        if (n_events < 2)
            throw metric_error("c_index: relapses_only needs at least 2 events");
    }
    double concordant = 0.0;
    std::size_t comparable = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (events[i] != 1) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            if (!(true_times[i] < true_times[j])) continue;
            if (mode == CIndexMode::relapses_only && events[j] != 1) continue;
            ++comparable;
            if (pred_times[i] < pred_times[j])
                concordant += 1.0;
            else if (pred_times[i] == pred_times[j])
                concordant += 0.5;
        }
    }
    if (comparable == 0) throw metric_error("c_index: no comparable pairs");
    return concordant / static_cast<double>(comparable);
}

struct EvalReport {
    std::string task;    // "classify" | "regress"
    std::string variant; // "tabular_only" | "vision_only" | "multimodal"
    double auc = 0.0;
    double f1 = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    std::optional<double> c_index;
    std::optional<double> c_index_relapses;
    double threshold_used = 0.0;
    std::size_t n_test = 0;
    ConfusionCounts confusion;
};

}  // namespace relapse
