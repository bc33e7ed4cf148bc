#pragma once
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relapse/checkpoint.hpp"
#include "relapse/cohort_io.hpp"
#include "relapse/config.hpp"
#include "relapse/evaluate.hpp"
#include "relapse/interpret.hpp"
#include "relapse/text.hpp"
#include "relapse/train.hpp"

namespace relapse {

namespace fs = std::filesystem;

// Artifact layout: the cohort lives under data_dir; everything tied to one
// (task, variant) pair lives under model_dir/<task>_<variant>; evaluation
// and interpretability outputs land in report_dir.
struct PipelinePaths {
    fs::path data_dir, variant_dir, report_dir;
    std::string tag; // "<task>_<variant>"

    static PipelinePaths of(const RunConfig& c) {
        PipelinePaths p;
        p.tag = std::string(to_string(c.run.task)) + "_" + to_string(c.run.variant);
        p.data_dir = c.paths.data_dir;
        p.variant_dir = fs::path(c.paths.model_dir) / p.tag;
        p.report_dir = c.paths.report_dir;
        return p;
    }

    fs::path synth_meta() const { return data_dir / "synth.meta.json"; }
    fs::path checkpoint() const { return variant_dir / "model.ckpt"; }
    fs::path history() const { return variant_dir / "history.csv"; }
    fs::path split() const { return variant_dir / "split.json"; }
    fs::path prep() const { return variant_dir / "prep.json"; }
    fs::path baseline_volume() const { return variant_dir / "baseline_volume.vol"; }
    fs::path train_meta() const { return variant_dir / "train.meta.json"; }
    fs::path threshold() const { return variant_dir / "threshold.json"; }
    fs::path sweep_curve() const { return variant_dir / "sweep_curve.csv"; }
    fs::path threshold_meta() const { return variant_dir / "threshold.meta.json"; }
    fs::path eval_report() const { return report_dir / ("eval_" + tag + ".txt"); }
    fs::path eval_meta() const { return report_dir / ("eval_" + tag + ".meta.json"); }
    fs::path contribution() const { return report_dir / ("contribution_" + tag + ".csv"); }
    fs::path contribution_relative() const {
        return report_dir / ("contribution_relative_" + tag + ".csv");
    }
    fs::path explain_meta() const { return report_dir / ("explain_" + tag + ".meta.json"); }
    fs::path saliency_dir() const { return report_dir / ("saliency_" + tag); }
};

namespace pipe_detail {

inline void write_json(const fs::path& path, const Json& j) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot write " + path.string());
    os << j.dump(2) << "\n";
}

inline Json read_json(const fs::path& path, const std::string& needed_by) {
    std::ifstream is(path);
    if (!is)
        throw data_error("missing prerequisite " + path.string() + "; run '" + needed_by +
                         "' first");
    try {
        return Json::parse(is);
    } catch (const Json::parse_error& e) {
        throw io_error("corrupt artifact " + path.string() + ": " + e.what());
    }
}

inline void write_meta(const fs::path& path, const std::string& stage, const RunConfig& cfg) {
    Json j{{"stage", stage},
           {"hashes", SectionHashes::of(cfg).to_json()},
           {"seeds",
            {{"synth", cfg.synth.seed},
             {"split", cfg.select.split_seed},
             {"train", cfg.train.seed}}}};
    write_json(path, j);
}

// Rejects stale artifacts: every named section hash recorded in the
// artifact's meta must equal the current effective config's hash.
inline void check_meta(const fs::path& path, const RunConfig& cfg,
                       const std::vector<std::string>& sections, const std::string& needed_by) {
    const Json meta = read_json(path, needed_by);
    const Json own = SectionHashes::of(cfg).to_json();
    for (const auto& s : sections) {
        const std::string recorded = meta.at("hashes").at(s).get<std::string>();
        const std::string current = own.at(s).get<std::string>();
        if (recorded != current)
            throw config_error("config hash mismatch for section '" + s + "' between " +
                               path.string() + " and the current config; regenerate upstream "
                               "artifacts or restore the config");
    }
}

inline void log_stage(const std::string& stage, const RunConfig& cfg) {
    std::cout << "[" << stage << "] seeds: synth=" << cfg.synth.seed
              << " split=" << cfg.select.split_seed << " train=" << cfg.train.seed << "\n";
    std::cout << "[" << stage << "] config: " << config_to_json(cfg).dump() << "\n";
}

inline const std::vector<std::string> kTrainSections{"synth", "select", "model", "train", "run"};
inline const std::vector<std::string> kSharedSections{"synth", "select", "model", "train"};

struct LoadedSplit {
    Cohort cohort; // selected cohort, ownership of records
    std::vector<std::size_t> train_idx, test_idx;
};

// Reloads the cohort, re-applies selection and resolves the persisted split
// ids against it.
inline LoadedSplit load_split(const RunConfig& cfg, const PipelinePaths& paths,
                              bool with_volumes) {
    LoadedSplit out;
    Cohort full = load_cohort(paths.data_dir.string(), with_volumes, false);
    out.cohort = select_cohort(full.records, cfg.select);
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < out.cohort.records.size(); ++i)
        by_id[out.cohort.records[i].id] = i;
    const Json split = read_json(paths.split(), "train");
    for (const auto& id : split.at("train")) {
        const auto it = by_id.find(id.get<std::string>());
        if (it == by_id.end())
            throw data_error("split id " + id.get<std::string>() + " not in selected cohort");
        out.train_idx.push_back(it->second);
    }
    for (const auto& id : split.at("test")) {
        const auto it = by_id.find(id.get<std::string>());
        if (it == by_id.end())
            throw data_error("split id " + id.get<std::string>() + " not in selected cohort");
        out.test_idx.push_back(it->second);
    }
    return out;
}

struct PrepArtifacts {
    AgeStats age_stats;
    VolumeStats volume_stats;
    Baselines baselines;
};

inline PrepArtifacts load_prep(const PipelinePaths& paths, bool with_volume_baseline) {
    const Json j = read_json(paths.prep(), "train");
    PrepArtifacts p;
    p.age_stats.mu = j.at("age_mu").get<double>();
    p.age_stats.sigma = j.at("age_sigma").get<double>();
    p.volume_stats.mean = j.at("volume_mean").get<double>();
    p.volume_stats.sd = j.at("volume_sd").get<double>();
    p.baselines.fill_intensity = j.at("fill_intensity").get<double>();
    const auto& fm = j.at("feature_means");
    for (std::size_t i = 0; i < FeatureVector::kDim; ++i)
        p.baselines.feature_means[i] = fm.at(i).get<double>();
    if (with_volume_baseline && j.at("has_volume_baseline").get<bool>())
        p.baselines.volume_mean = read_volume(paths.baseline_volume().string());
    return p;
}

inline PreparedCohort prepare_subset(const LoadedSplit& split,
                                     const std::vector<std::size_t>& idx,
                                     const PrepArtifacts& prep, bool with_volumes,
                                     double rfs_cap) {
    Cohort sub;
    sub.records.reserve(idx.size());
    for (std::size_t i : idx) sub.records.push_back(split.cohort.records[i]);
    return prepare_cohort(std::move(sub), prep.age_stats, prep.volume_stats, with_volumes,
                          rfs_cap);
}

}  // namespace pipe_detail

inline void run_synth(const RunConfig& cfg) {
    pipe_detail::log_stage("synth", cfg);
    const PipelinePaths paths = PipelinePaths::of(cfg);
    const Cohort cohort = synth_cohort(cfg.synth);
    fs::create_directories(paths.data_dir);
    save_cohort(paths.data_dir.string(), cohort);
    pipe_detail::write_meta(paths.synth_meta(), "synth", cfg);
    std::cout << "[synth] wrote " << cohort.records.size() << " records to " << paths.data_dir
              << "\n";
}

inline void run_train(const RunConfig& cfg) {
    using namespace pipe_detail;
    log_stage("train", cfg);
    const PipelinePaths paths = PipelinePaths::of(cfg);
    check_meta(paths.synth_meta(), cfg, {"synth"}, "synth");

    const bool with_volumes = cfg.model.has_vision();
    Cohort full = load_cohort(paths.data_dir.string(), with_volumes, false);
    Cohort selected = select_cohort(full.records, cfg.select);
    if (selected.records.empty()) throw data_error("train: selection left no records");
    auto [train_cohort, test_cohort] = split_cohort(selected, cfg.select);

    // Statistics come from the training split only.
    const AgeStats age_stats = compute_age_stats(train_cohort.records);
    VolumeStats volume_stats{0.0, 1.0};
    if (with_volumes) {
        std::vector<const Vol*> vols;
        for (const auto& r : train_cohort.records) vols.push_back(&r.volume);
        volume_stats = compute_volume_stats(vols);
    }
    const PreparedCohort prepared =
        prepare_cohort(train_cohort, age_stats, volume_stats, with_volumes, cfg.select.rfs_cap);

    auto [params, history] = train_variant(cfg.run.variant, cfg.model, prepared, cfg.train);

    fs::create_directories(paths.variant_dir);
    save_checkpoint(paths.checkpoint().string(), params);

    write_history_csv(paths.history().string(), history);

    {
        Json train_ids = Json::array(), test_ids = Json::array();
        for (const auto& r : train_cohort.records) train_ids.push_back(r.id);
        for (const auto& r : test_cohort.records) test_ids.push_back(r.id);
        write_json(paths.split(), Json{{"train", train_ids}, {"test", test_ids}});
    }

    {
        const Baselines baselines = compute_baselines(prepared);
        Json fm = Json::array();
        for (double v : baselines.feature_means) fm.push_back(v);
        write_json(paths.prep(), Json{{"age_mu", age_stats.mu},
                                      {"age_sigma", age_stats.sigma},
                                      {"volume_mean", volume_stats.mean},
                                      {"volume_sd", volume_stats.sd},
                                      {"feature_means", fm},
                                      {"fill_intensity", baselines.fill_intensity},
                                      {"has_volume_baseline", with_volumes}});
        if (with_volumes)
            write_volume(paths.baseline_volume().string(), baselines.volume_mean);
    }

    write_meta(paths.train_meta(), "train", cfg);
    std::cout << "[train] " << paths.tag << ": " << train_cohort.records.size() << " train / "
              << test_cohort.records.size() << " test, final loss "
              << history.epochs.back().loss << "\n";
}

// Threshold selection runs on the training split only; asking for the test
// split is a leakage bug and is rejected.
inline void run_sweep(const RunConfig& cfg, const std::string& split_name = "train") {
    using namespace pipe_detail;
    if (split_name != "train")
        throw argument_error("sweep: threshold selection must use the train split");
    log_stage("sweep", cfg);
    const PipelinePaths paths = PipelinePaths::of(cfg);
    check_meta(paths.train_meta(), cfg, kTrainSections, "train");

    const FusionModelParams params = load_checkpoint(paths.checkpoint().string());
    const bool with_volumes = params.config.has_vision();
    const LoadedSplit split = load_split(cfg, paths, with_volumes);
    const PrepArtifacts prep = load_prep(paths, false);
    const PreparedCohort train_set =
        prepare_subset(split, split.train_idx, prep, with_volumes, cfg.select.rfs_cap);

    std::vector<double> values;
    std::vector<int> labels;
    for (const auto& rec : train_set.records) {
        labels.push_back(rec.src->relapse ? 1 : 0);
        if (cfg.run.task == Task::classify)
            values.push_back(forward(params, rec.volume, rec.features).output);
        else
            values.push_back(predicted_rfs_days(params, rec, train_set.rfs_cap));
    }

    const ThresholdDomain domain = cfg.run.task == Task::classify
                                       ? ThresholdDomain::theta_unit_interval
                                       : ThresholdDomain::kappa_days;
    const KappaBounds bounds{cfg.select.kappa_low, cfg.select.kappa_high};
    const ThresholdReport rep = sweep_threshold(values, labels, cfg.run.beta, domain, bounds);

    {
        std::ofstream os(paths.sweep_curve());
        os << "threshold,precision,recall,f_beta\n";
        for (std::size_t i = 0; i < rep.grid.size(); ++i)
            os << detail::fmt_double(rep.grid[i]) << ',' << detail::fmt_double(rep.precision[i])
               << ',' << detail::fmt_double(rep.recall[i]) << ','
               << detail::fmt_double(rep.scores[i]) << "\n";
    }
    write_json(paths.threshold(),
               Json{{"beta", rep.beta},
                    {"domain", domain == ThresholdDomain::theta_unit_interval ? "theta" : "kappa"},
                    {"chosen", rep.chosen},
                    {"f_beta_at_chosen", rep.scores[rep.chosen_index]},
                    {"split", "train"}});
    write_meta(paths.threshold_meta(), "sweep", cfg);
    std::cout << "[sweep] " << paths.tag << ": chosen threshold "
              << detail::fmt_double(rep.chosen) << " (F_beta "
              << detail::fmt_double(rep.scores[rep.chosen_index]) << ")\n";
}

inline EvalReport run_eval(const RunConfig& cfg) {
    using namespace pipe_detail;
    log_stage("eval", cfg);
    const PipelinePaths paths = PipelinePaths::of(cfg);
    check_meta(paths.train_meta(), cfg, kTrainSections, "train");
    check_meta(paths.threshold_meta(), cfg, kTrainSections, "sweep");

    const FusionModelParams params = load_checkpoint(paths.checkpoint().string());
    const bool with_volumes = params.config.has_vision();
    const LoadedSplit split = load_split(cfg, paths, with_volumes);
    const PrepArtifacts prep = load_prep(paths, false);
    const PreparedCohort test_set =
        prepare_subset(split, split.test_idx, prep, with_volumes, cfg.select.rfs_cap);

    const Json threshold = read_json(paths.threshold(), "sweep");
    const double chosen = threshold.at("chosen").get<double>();

    EvalReport rep;
    if (cfg.run.task == Task::classify) {
        rep = evaluate_classifier(params, test_set, chosen);
    } else {
        const KappaBounds bounds{cfg.select.kappa_low, cfg.select.kappa_high};
        rep = evaluate_regressor(params, test_set, chosen, bounds);
    }
    fs::create_directories(paths.report_dir);
    write_eval_report(paths.eval_report().string(), rep);
    write_meta(paths.eval_meta(), "eval", cfg);
    std::cout << "[eval] " << paths.tag << ": auc " << detail::fmt_double(rep.auc) << ", f1 "
              << detail::fmt_double(rep.f1) << "\n";
    return rep;
}

inline void run_explain(const RunConfig& cfg, std::size_t max_saliency_records = 8) {
    using namespace pipe_detail;
    log_stage("explain", cfg);
    const PipelinePaths paths = PipelinePaths::of(cfg);
    check_meta(paths.train_meta(), cfg, kTrainSections, "train");
    check_meta(paths.threshold_meta(), cfg, kTrainSections, "sweep");

    const FusionModelParams params = load_checkpoint(paths.checkpoint().string());
    const bool with_volumes = params.config.has_vision();
    const LoadedSplit split = load_split(cfg, paths, with_volumes);
    const PrepArtifacts prep = load_prep(paths, with_volumes);
    const PreparedCohort test_set =
        prepare_subset(split, split.test_idx, prep, with_volumes, cfg.select.rfs_cap);

    const ContributionReport contrib = modality_contribution(params, test_set, prep.baselines);
    fs::create_directories(paths.report_dir);
    {
        std::ofstream os(paths.contribution());
        os << "attribute,absolute\n";
        for (std::size_t a = 0; a < kAllAttributes.size(); ++a)
            os << to_string(kAllAttributes[a]) << ',' << detail::fmt_double(contrib.absolute[a])
               << "\n";
        os << "vision_total," << detail::fmt_double(contrib.vision_total) << "\n";
        os << "tabular_total," << detail::fmt_double(contrib.tabular_total) << "\n";
        os << "collapse_flag," << (contrib.collapse_flag ? 1 : 0) << "\n";
    }
    {
        std::ofstream os(paths.contribution_relative());
        os << "attribute,relative\n";
        for (std::size_t a = 0; a < kAllAttributes.size(); ++a) {
            os << to_string(kAllAttributes[a]) << ',';
            if (contrib.relative[a]) os << detail::fmt_double(*contrib.relative[a]);
            else os << '-';
            os << "\n";
        }
    }

    if (with_volumes) {
        const Json threshold = read_json(paths.threshold(), "sweep");
        const double chosen = threshold.at("chosen").get<double>();
        fs::create_directories(paths.saliency_dir());
        std::size_t written = 0;
        for (const auto& rec : test_set.records) {
            if (written >= max_saliency_records) break;
            if (!rec.src->relapse) continue;
            const bool predicted_relapse =
                cfg.run.task == Task::classify
                    ? forward(params, rec.volume, rec.features).output > chosen
                    : predicted_rfs_days(params, rec, test_set.rfs_cap) <= chosen;
            if (!predicted_relapse) continue; // true positives only
            const SaliencyVolume sal = occlusion_saliency(params, rec, cfg.occlusion,
                                                          prep.baselines.fill_intensity,
                                                          test_set.rfs_cap);
            const std::string base = (paths.saliency_dir() / rec.src->id).string();
            write_volume(base + "_saliency.vol", sal.grid);
            for (int axis = 0; axis < 3; ++axis) {
                std::size_t rows, cols;
                auto vol_px = mid_slice_scaled(rec.volume, axis, &rows, &cols);
                write_pgm(base + "_vol_axis" + std::to_string(axis) + ".pgm", vol_px, rows, cols);
                auto sal_px = mid_slice_scaled(sal.grid, axis, &rows, &cols);
                write_pgm(base + "_sal_axis" + std::to_string(axis) + ".pgm", sal_px, rows, cols);
            }
            ++written;
        }
        std::cout << "[explain] " << paths.tag << ": wrote saliency for " << written
                  << " true-positive records\n";
    }
    write_meta(paths.explain_meta(), "explain", cfg);
    std::cout << "[explain] " << paths.tag << ": vision_total "
              << detail::fmt_double(contrib.vision_total) << ", tabular_total "
              << detail::fmt_double(contrib.tabular_total) << "\n";
}

// Consolidates every evaluation and contribution artifact found in
// report_dir into per-task tables. All inputs must share the current
// config's synth/select/model/train hashes (variants naturally differ in
// the run section).
inline void run_report(const RunConfig& cfg) {
    using namespace pipe_detail;
    log_stage("report", cfg);
    const PipelinePaths paths = PipelinePaths::of(cfg);
    const std::vector<std::string> variants{"tabular_only", "vision_only", "multimodal"};
    const std::vector<std::string> tasks{"classify", "regress"};

    fs::create_directories(paths.report_dir);
    for (const auto& task : tasks) {
        std::map<std::string, EvalReport> found;
        for (const auto& variant : variants) {
            const fs::path report = paths.report_dir / ("eval_" + task + "_" + variant + ".txt");
            const fs::path meta = paths.report_dir / ("eval_" + task + "_" + variant + ".meta.json");
            if (!fs::exists(report)) continue;
            check_meta(meta, cfg, kSharedSections, "eval");
            found[variant] = read_eval_report(report.string());
        }
        if (found.empty()) continue;

        const fs::path table = paths.report_dir / ("table_" + task + ".csv");
        std::ofstream os(table);
        os << "metric";
        for (const auto& v : variants) os << ',' << v;
        os << "\n";
        std::vector<std::pair<std::string, std::function<std::optional<double>(const EvalReport&)>>>
            rows;
        if (task == "regress") {
            rows.push_back({"c_index", [](const EvalReport& r) { return r.c_index; }});
            rows.push_back(
                {"c_index_relapses", [](const EvalReport& r) { return r.c_index_relapses; }});
        }
        rows.push_back({"auc", [](const EvalReport& r) { return std::optional<double>(r.auc); }});
        rows.push_back({"f1", [](const EvalReport& r) { return std::optional<double>(r.f1); }});
        rows.push_back(
            {"sensitivity", [](const EvalReport& r) { return std::optional<double>(r.sensitivity); }});
        rows.push_back(
            {"specificity", [](const EvalReport& r) { return std::optional<double>(r.specificity); }});
        rows.push_back(
            {"threshold", [](const EvalReport& r) { return std::optional<double>(r.threshold_used); }});
        for (const auto& [name, getter] : rows) {
            os << name;
            for (const auto& v : variants) {
                os << ',';
                const auto it = found.find(v);
                if (it == found.end()) os << '-';
                else {
                    const auto value = getter(it->second);
                    if (value) os << detail::fmt_double(*value);
                    else os << '-';
                }
            }
            os << "\n";
        }

        // Table of attribute contributions, absolute and relative files.
        for (const bool relative : {false, true}) {
            std::map<std::string, std::map<std::string, std::string>> contrib;
            for (const auto& variant : variants) {
                const std::string stem = std::string(relative ? "contribution_relative_" : "contribution_") +
                                         task + "_" + variant + ".csv";
                const fs::path file = paths.report_dir / stem;
                if (!fs::exists(file)) continue;
                const fs::path meta =
                    paths.report_dir / ("explain_" + task + "_" + variant + ".meta.json");
                check_meta(meta, cfg, kSharedSections, "explain");
                std::ifstream is(file);
                std::string line;
                std::getline(is, line); // header
                while (std::getline(is, line)) {
                    const auto fields = detail::split_csv_line(line);
                    if (fields.size() == 2) contrib[variant][fields[0]] = fields[1];
                }
            }
            if (contrib.empty()) continue;
            const fs::path out = paths.report_dir /
                                 ("table_contribution_" + task + (relative ? "_relative" : "_absolute") + ".csv");
            std::ofstream cs(out);
            cs << "variant,volume,age,gender,chd,pad\n";
            for (const auto& variant : variants) {
                const auto it = contrib.find(variant);
                if (it == contrib.end()) continue;
                cs << variant;
                for (const char* attr : {"volume", "age", "gender", "chd", "pad"}) {
                    cs << ',';
                    const auto f = it->second.find(attr);
                    cs << (f == it->second.end() ? "-" : f->second);
                }
                cs << "\n";
            }
        }
    }
    std::cout << "[report] consolidated tables in " << paths.report_dir << "\n";
}

}  // namespace relapse
