#pragma once
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "relapse/errors.hpp"
#include "relapse/metrics.hpp"
#include "relapse/model.hpp"
#include "relapse/text.hpp"
#include "relapse/thresholds.hpp"
#include "relapse/train.hpp"

namespace relapse {

// Test-set evaluation for Task 1. theta must have been fixed on the train
// split beforehand.
inline EvalReport evaluate_classifier(const FusionModelParams& params,
                                      const PreparedCohort& test, double theta) {
    if (params.config.task != Task::classify)
        throw argument_error("evaluate_classifier: model is not a classifier");
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& rec : test.records) {
        scores.push_back(forward(params, rec.volume, rec.features).output);
        labels.push_back(rec.src->relapse ? 1 : 0);
    }
    EvalReport rep;
    rep.task = to_string(Task::classify);
    rep.variant = to_string(params.config.modality);
    rep.auc = roc_auc(scores, labels);
    rep.confusion = confusion_at_theta(scores, labels, theta);
    rep.f1 = f_beta_score(rep.confusion.precision(), rep.confusion.recall(), 1.0);
    rep.sensitivity = rep.confusion.sensitivity();
    rep.specificity = rep.confusion.specificity();
    rep.threshold_used = theta;
    rep.n_test = test.records.size();
    return rep;
}

// Test-set evaluation for Task 2 plus the subsequent kappa-classification.
// Records without ground-truth RFS enter the survival metrics with the
// substitute time kappa_low/2. The relapse score for AUC is the negated
// predicted RFS (shorter predicted survival = higher risk).
inline EvalReport evaluate_regressor(const FusionModelParams& params, const PreparedCohort& test,
                                     double kappa, const KappaBounds& bounds = {}) {
    if (params.config.task != Task::regress)
        throw argument_error("evaluate_regressor: model is not a regressor");
    std::vector<double> pred_days, true_days, neg_pred;
    std::vector<int> labels;
    for (const auto& rec : test.records) {
        const double pred = predicted_rfs_days(params, rec, test.rfs_cap);
        pred_days.push_back(pred);
        neg_pred.push_back(-pred);
        labels.push_back(rec.src->relapse ? 1 : 0);
        true_days.push_back(rec.src->rfs_days ? *rec.src->rfs_days : 0.5 * bounds.low);
    }
    EvalReport rep;
    rep.task = to_string(Task::regress);
    rep.variant = to_string(params.config.modality);
    rep.c_index = c_index(pred_days, true_days, labels, CIndexMode::all);
    rep.c_index_relapses = c_index(pred_days, true_days, labels, CIndexMode::relapses_only);
    rep.auc = roc_auc(neg_pred, labels);
    rep.confusion = confusion_at_kappa(pred_days, labels, kappa, bounds);
    rep.f1 = f_beta_score(rep.confusion.precision(), rep.confusion.recall(), 1.0);
    rep.sensitivity = rep.confusion.sensitivity();
    rep.specificity = rep.confusion.specificity();
    rep.threshold_used = kappa;
    rep.n_test = test.records.size();
    return rep;
}

// key: value serialization; every numeric field round-trips exactly.
inline void write_eval_report(const std::string& path, const EvalReport& rep) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot write eval report: " + path);
    os << "task: " << rep.task << "\n";
    os << "variant: " << rep.variant << "\n";
    os << "auc: " << detail::fmt_double(rep.auc) << "\n";
    os << "f1: " << detail::fmt_double(rep.f1) << "\n";
    os << "sensitivity: " << detail::fmt_double(rep.sensitivity) << "\n";
    os << "specificity: " << detail::fmt_double(rep.specificity) << "\n";
    if (rep.c_index) os << "c_index: " << detail::fmt_double(*rep.c_index) << "\n";
    if (rep.c_index_relapses)
        os << "c_index_relapses: " << detail::fmt_double(*rep.c_index_relapses) << "\n";
    os << "threshold_used: " << detail::fmt_double(rep.threshold_used) << "\n";
    os << "n_test: " << rep.n_test << "\n";
    os << "tp: " << rep.confusion.tp << "\n";
    os << "fp: " << rep.confusion.fp << "\n";
    os << "tn: " << rep.confusion.tn << "\n";
    os << "fn: " << rep.confusion.fn << "\n";
}

inline EvalReport read_eval_report(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot read eval report: " + path);
    EvalReport rep;
    std::string line;
    while (std::getline(is, line)) {
        const auto colon = line.find(": ");
        if (colon == std::string::npos) continue;
        const std::string key = line.substr(0, colon);
        const std::string val = line.substr(colon + 2);
        if (key == "task") rep.task = val;
        else if (key == "variant") rep.variant = val;
        else if (key == "auc") rep.auc = std::strtod(val.c_str(), nullptr);
        else if (key == "f1") rep.f1 = std::strtod(val.c_str(), nullptr);
        else if (key == "sensitivity") rep.sensitivity = std::strtod(val.c_str(), nullptr);
        else if (key == "specificity") rep.specificity = std::strtod(val.c_str(), nullptr);
        else if (key == "c_index") rep.c_index = std::strtod(val.c_str(), nullptr);
        else if (key == "c_index_relapses")
            rep.c_index_relapses = std::strtod(val.c_str(), nullptr);
        else if (key == "threshold_used") rep.threshold_used = std::strtod(val.c_str(), nullptr);
        else if (key == "n_test") rep.n_test = std::strtoull(val.c_str(), nullptr, 10);
        else if (key == "tp") rep.confusion.tp = std::strtoull(val.c_str(), nullptr, 10);
        else if (key == "fp") rep.confusion.fp = std::strtoull(val.c_str(), nullptr, 10);
        else if (key == "tn") rep.confusion.tn = std::strtoull(val.c_str(), nullptr, 10);
        else if (key == "fn") rep.confusion.fn = std::strtoull(val.c_str(), nullptr, 10);
        else throw io_error("eval report " + path + ": unknown key " + key);
    }
    return rep;
}

}  // namespace relapse
