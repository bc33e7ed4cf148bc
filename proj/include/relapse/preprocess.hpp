#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <utility>
#include <vector>

#include "relapse/errors.hpp"
#include "relapse/rng.hpp"
#include "relapse/synth.hpp"

namespace relapse {

struct AgeStats {
    double mu = 0.0;    // years
    double sigma = 1.0; // years, sample SD (N-1 denominator)
};

// Tabular input to the model: [age_z, gender pair, chd, pad].
// The gender pair follows the encoding male = [1,0], female = [0,1].
struct FeatureVector {
    std::array<double, 5> values{};

    double age_z() const { return values[0]; }
    double chd() const { return values[3]; }
    double pad() const { return values[4]; }

    static constexpr std::size_t kDim = 5;
};

struct SelectionConfig {
    double kappa_low = kKappaLowDays;
    double kappa_high = kKappaHighDays;
    double rfs_cap = kRfsCapDays;
    // cap: clamp long non-relapse RFS to rfs_cap; exclude: drop those records.
    bool cap_excludes = false;
    double split_ratio = 0.8;
    std::uint64_t split_seed = 0;

    void validate() const {
        if (!(kappa_low < kappa_high))
            throw config_error("select.kappa_low must be < select.kappa_high");
        if (!(kappa_high <= rfs_cap))
            throw config_error("select.kappa_high must be <= select.rfs_cap");
        if (!(split_ratio > 0.0 && split_ratio < 1.0))
            throw config_error("select.split_ratio must be in (0,1)");
    }
};

// Sample mean and SD (N-1 denominator) of the training ages.
inline AgeStats compute_age_stats(const std::vector<PatientRecord>& train_records) {
    const std::size_t n = train_records.size();
    if (n < 2) throw stats_error("compute_age_stats: needs at least 2 records");
    double sum = 0.0;
    for (const auto& r : train_records) sum += r.age;
    const double mu = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& r : train_records) {
        const double d = r.age - mu;
        ss += d * d;
    }
    const double var = ss / static_cast<double>(n - 1);
    if (var == 0.0) throw stats_error("compute_age_stats: zero age variance");
    return AgeStats{mu, std::sqrt(var)};
}

inline FeatureVector encode_tabular(const PatientRecord& record, const AgeStats& stats) {
    if (!(stats.sigma > 0.0)) throw stats_error("encode_tabular: sigma must be > 0");
    FeatureVector f;
    f.values[0] = (record.age - stats.mu) / stats.sigma;
    f.values[1] = record.gender == Gender::male ? 1.0 : 0.0;
    f.values[2] = record.gender == Gender::male ? 0.0 : 1.0;
    f.values[3] = record.chd ? 1.0 : 0.0;
    f.values[4] = record.pad ? 1.0 : 0.0;
    return f;
}

// Cohort selection: relapse records stay when their RFS (or, if the RFS is
// unknown, its recorded upper bound) lies below kappa_low; non-relapse
// records stay when their RFS exceeds kappa_high, with follow-up capped at
// rfs_cap. Everything else is dropped.
inline Cohort select_cohort(const std::vector<PatientRecord>& records,
                            const SelectionConfig& config) {
    config.validate();
    Cohort out;
    out.provenance = Provenance::external;
    for (const auto& rec : records) {
        if (rec.relapse) {
            if (rec.rfs_days) {
                if (*rec.rfs_days < config.kappa_low) out.records.push_back(rec);
            } else if (rec.max_possible_rfs_days &&
                       *rec.max_possible_rfs_days < config.kappa_low) {
                out.records.push_back(rec);
            }
        } else {
            if (!rec.rfs_days) continue;
            if (*rec.rfs_days <= config.kappa_high) continue;
            if (*rec.rfs_days > config.rfs_cap && config.cap_excludes) continue;
            out.records.push_back(rec);
            out.records.back().rfs_days = std::min(*rec.rfs_days, config.rfs_cap);
        }
    }
    return out;
}

// Stratified train/test split on the relapse flag, deterministic in
// split_seed. Strata with fewer than 2 members go entirely to train.
inline std::pair<Cohort, Cohort> split_cohort(const Cohort& cohort,
                                              const SelectionConfig& config) {
    config.validate();
    if (cohort.records.empty()) throw data_error("split_cohort: empty cohort");

    std::vector<std::size_t> strata[2];
    for (std::size_t i = 0; i < cohort.records.size(); ++i)
        strata[cohort.records[i].relapse ? 1 : 0].push_back(i);

    Rng rng(config.split_seed);
    std::vector<bool> in_train(cohort.records.size(), false);
    for (auto& stratum : strata) {
        if (stratum.empty()) continue;
        if (stratum.size() < 2) {
            std::cerr << "split_cohort: stratum with a single member assigned to train\n";
            in_train[stratum[0]] = true;
            continue;
        }
        rng.shuffle(stratum);
        const std::size_t n_train = static_cast<std::size_t>(
            std::floor(config.split_ratio * static_cast<double>(stratum.size()) + 0.5));
        for (std::size_t j = 0; j < n_train && j < stratum.size(); ++j)
            in_train[stratum[j]] = true;
    }

    Cohort train, test;
    train.provenance = test.provenance = cohort.provenance;
    train.generator_config = test.generator_config = cohort.generator_config;
    for (std::size_t i = 0; i < cohort.records.size(); ++i)
        (in_train[i] ? train : test).records.push_back(cohort.records[i]);
    return {std::move(train), std::move(test)};
}

struct VolumeStats {
    double mean = 0.0;
    double sd = 1.0;
};

// Global intensity statistics over all voxels of the given (training) volumes.
inline VolumeStats compute_volume_stats(const std::vector<const Vol*>& volumes) {
    std::size_t n = 0;
    double sum = 0.0;
    for (const Vol* v : volumes) {
        for (double x : v->data) sum += x;
        n += v->size();
    }
    if (n == 0) throw stats_error("compute_volume_stats: no voxels");
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const Vol* v : volumes)
        for (double x : v->data) ss += (x - mean) * (x - mean);
    return VolumeStats{mean, std::sqrt(ss / static_cast<double>(n))};
}

inline Vol normalize_volume(const Vol& volume, const VolumeStats& stats) {
    if (!(stats.sd > 0.0)) throw stats_error("normalize_volume: sd must be > 0");
    Vol out(volume.dims);
    for (std::size_t i = 0; i < volume.data.size(); ++i)
        out.data[i] = (volume.data[i] - stats.mean) / stats.sd;
    return out;
}

}  // namespace relapse
