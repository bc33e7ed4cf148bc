#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <fstream>

#include "relapse/errors.hpp"
#include "relapse/model.hpp"
#include "relapse/preprocess.hpp"
#include "relapse/rng.hpp"
#include "relapse/text.hpp"

namespace relapse {

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 16;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    Task task = Task::classify;

    void validate() const {
        if (epochs == 0) throw config_error("train.epochs must be > 0");
        if (batch_size == 0) throw config_error("train.batch_size must be > 0");
        if (!(learning_rate > 0.0)) throw config_error("train.learning_rate must be > 0");
        if (momentum < 0.0 || momentum >= 1.0)
            throw config_error("train.momentum must be in [0,1)");
    }
};

struct EpochStats {
    double loss = 0.0;
    std::optional<double> imputed_rfs_value;                 // days, regress only
    std::optional<double> mean_predicted_rfs_known_relapses; // days, regress only
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
};

// A cohort record carrying model-ready inputs (encoded features, normalized
// volume). The source record keeps labels and targets.
struct PreparedRecord {
    const PatientRecord* src = nullptr;
    Vol volume; // normalized; empty when volumes were skipped
    FeatureVector features;
};

struct PreparedCohort {
    std::vector<PreparedRecord> records;
    AgeStats age_stats;
    VolumeStats volume_stats;
    double rfs_cap = kRfsCapDays;
    std::shared_ptr<const Cohort> source; // set when this cohort owns its records
};

// Encodes features with the supplied training statistics and normalizes
// volumes. Statistics must come from the training split; applying them here
// never recomputes them. The records borrow from `cohort`, which must outlive
// the result; the rvalue overload below takes ownership instead.
inline PreparedCohort prepare_cohort(const Cohort& cohort, const AgeStats& age_stats,
                                     const VolumeStats& volume_stats, bool with_volumes = true,
                                     double rfs_cap = kRfsCapDays) {
    PreparedCohort out;
    out.age_stats = age_stats;
    out.volume_stats = volume_stats;
    out.rfs_cap = rfs_cap;
    out.records.reserve(cohort.records.size());
    for (const auto& rec : cohort.records) {
        PreparedRecord pr;
        pr.src = &rec;
        pr.features = encode_tabular(rec, age_stats);
        if (with_volumes) pr.volume = normalize_volume(rec.volume, volume_stats);
        out.records.push_back(std::move(pr));
    }
    return out;
}

inline PreparedCohort prepare_cohort(Cohort&& cohort, const AgeStats& age_stats,
                                     const VolumeStats& volume_stats, bool with_volumes = true,
                                     double rfs_cap = kRfsCapDays) {
    auto owned = std::make_shared<const Cohort>(std::move(cohort));
    PreparedCohort out = prepare_cohort(*owned, age_stats, volume_stats, with_volumes, rfs_cap);
    out.source = owned;
    return out;
}

// Predicted RFS in days, clamped to the reportable range [0, rfs_cap].
inline double predicted_rfs_days(const FusionModelParams& params, const PreparedRecord& rec,
                                 double rfs_cap) {
    const double raw = forward(params, rec.volume, rec.features).raw;
    return std::clamp(raw * rfs_cap, 0.0, rfs_cap);
}

// The per-epoch regression target for relapse patients with unknown RFS: the
// mean predicted RFS over relapse patients with known ground truth. With no
// such patients in the split the value falls back to half of kappa_low.
inline double impute_unknown_rfs(const std::vector<double>& predicted_rfs_known_relapses,
                                 double kappa_low = kKappaLowDays) {
    if (predicted_rfs_known_relapses.empty()) {
        std::cerr << "impute_unknown_rfs: no known-RFS relapses in train split, "
                     "falling back to kappa_low/2\n";
        return 0.5 * kappa_low;
    }
    double sum = 0.0;
    for (double v : predicted_rfs_known_relapses) sum += v;
    return sum / static_cast<double>(predicted_rfs_known_relapses.size());
}

// Minibatch SGD with momentum. Regression refreshes the imputed target of
// unknown-RFS relapse records at each epoch start; epoch 0 seeds it with the
// mean known ground-truth relapse RFS. Shuffling, batching and gradient
// reduction all run in a fixed order, so a fixed seed reproduces the run
// bit for bit.
inline std::pair<FusionModelParams, TrainHistory> train(FusionModelParams params,
                                                        const PreparedCohort& data,
                                                        const TrainConfig& config) {
    config.validate();
    if (data.records.empty()) throw data_error("train: empty cohort");
    if (params.config.task != config.task)
        throw config_error("train: model task differs from train task");

    const std::size_t n = data.records.size();
    std::vector<TrainSample> samples(n);
    std::vector<std::size_t> known_relapse, unknown_relapse;
    for (std::size_t i = 0; i < n; ++i) {
        const PatientRecord& src = *data.records[i].src;
        TrainSample& s = samples[i];
        s.id = src.id;
        s.volume = params.config.has_vision() ? &data.records[i].volume : nullptr;
        s.features = data.records[i].features;
        if (config.task == Task::classify) {
            s.target = src.relapse ? 1.0 : 0.0;
        } else if (src.rfs_days) {
            s.target = *src.rfs_days / data.rfs_cap;
            if (src.relapse) known_relapse.push_back(i);
        } else if (src.relapse) {
            unknown_relapse.push_back(i); // target assigned per epoch
        } else {
            throw data_error("train: non-relapse record " + src.id + " lacks an RFS target");
        }
    }

    Rng shuffle_rng(config.seed);
    std::vector<double> velocity(params.values.size(), 0.0);
    TrainHistory history;
    history.epochs.reserve(config.epochs);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        EpochStats stats;

        if (config.task == Task::regress) {
            std::vector<double> preds;
            preds.reserve(known_relapse.size());
            for (std::size_t i : known_relapse)
                preds.push_back(predicted_rfs_days(params, data.records[i], data.rfs_cap));
            if (!preds.empty())
                stats.mean_predicted_rfs_known_relapses = impute_unknown_rfs(preds);

            double imputed;
            if (epoch == 0) {
                std::vector<double> gt;
                gt.reserve(known_relapse.size());
                for (std::size_t i : known_relapse) gt.push_back(*data.records[i].src->rfs_days);
                imputed = impute_unknown_rfs(gt);
            } else {
                imputed = impute_unknown_rfs(preds);
            }
            stats.imputed_rfs_value = imputed;
            for (std::size_t i : unknown_relapse) samples[i].target = imputed / data.rfs_cap;
        }

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t stop = std::min(n, start + config.batch_size);
            std::vector<TrainSample> batch;
            batch.reserve(stop - start);
            for (std::size_t t = start; t < stop; ++t) batch.push_back(samples[order[t]]);
            LossGrad lg;
            try {
                lg = loss_and_grad(params, batch);
            } catch (const numeric_error& e) {
                throw numeric_error(std::string(e.what()) + " at epoch " +
                                    std::to_string(epoch));
            }
            epoch_loss += lg.loss * static_cast<double>(batch.size());
            for (std::size_t i = 0; i < params.values.size(); ++i) {
                velocity[i] = config.momentum * velocity[i] - config.learning_rate * lg.grad[i];
                params.values[i] += velocity[i];
            }
        }
        stats.loss = epoch_loss / static_cast<double>(n);
        if (!std::isfinite(stats.loss))
            throw numeric_error("train: non-finite loss at epoch " + std::to_string(epoch));
        history.epochs.push_back(stats);
    }
    return {std::move(params), std::move(history)};
}

// History CSV, the source data for convergence plots. Regression-only
// columns stay empty for classification runs.
inline void write_history_csv(const std::string& path, const TrainHistory& history) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot write history csv: " + path);
    os << "epoch,loss,imputed_rfs_value,mean_predicted_rfs_known_relapses\n";
    for (std::size_t e = 0; e < history.epochs.size(); ++e) {
        const EpochStats& s = history.epochs[e];
        os << e << ',' << detail::fmt_double(s.loss) << ',';
        if (s.imputed_rfs_value) os << detail::fmt_double(*s.imputed_rfs_value);
        os << ',';
        if (s.mean_predicted_rfs_known_relapses)
            os << detail::fmt_double(*s.mean_predicted_rfs_known_relapses);
        os << "\n";
    }
}

// Convenience wrapper selecting the modality variant before training.
inline std::pair<FusionModelParams, TrainHistory> train_variant(Modality modality,
                                                                ModelConfig model_config,
                                                                const PreparedCohort& data,
                                                                const TrainConfig& config) {
    model_config.modality = modality;
    model_config.task = config.task;
    return train(init_model(model_config), data, config);
}

}  // namespace relapse
