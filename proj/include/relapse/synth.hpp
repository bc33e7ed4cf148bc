#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "relapse/errors.hpp"
#include "relapse/rng.hpp"
#include "relapse/vol.hpp"

namespace relapse {

// Cohort selection bounds in days. Every relapse RFS lies below kKappaLowDays,
// every retained non-relapse RFS above kKappaHighDays, and follow-up is
// capped at kRfsCapDays.
constexpr double kKappaLowDays = 1642.0;
constexpr double kKappaHighDays = 1825.0;
constexpr double kRfsCapDays = 2555.0;

enum class Gender { female, male };

// Generative weights of the latent risk score. Attributes are standardized
// (age z-scored, binaries centered at their prevalence) before weighting;
// `lesion` weights an independent standard-normal latent that also drives
// the planted lesion's image intensity.
struct RiskWeights {
    double age_z = 0.7;
    double gender = 0.5;
    double chd = 0.8;
    double pad = 0.8;
    double lesion = 1.2;
};

struct SynthConfig {
    std::size_t n_patients = 100;
    Dims3 volume_shape{24, 24, 24};
    RiskWeights risk_weights;
    double lesion_intensity_scale = 1.0;
    double volume_noise_sd = 0.02;
    double rfs_scale = 2555.0;   // days
    double rfs_noise_sd = 120.0; // days
    double frac_unknown_rfs = 0.2;
    // Attribute marginals; defaults follow the cohort statistics the
    // generator is parameterized against.
    double age_mu = 69.10;
    double age_sd = 10.18;
    double p_male = 0.664;
    double p_chd = 0.252;
    double p_pad = 0.218;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_patients == 0) throw config_error("synth.n_patients must be > 0");
        for (auto d : volume_shape)
            if (d < 8) throw config_error("synth.volume_shape axes must be >= 8");
        if (frac_unknown_rfs < 0.0 || frac_unknown_rfs > 1.0)
            throw config_error("synth.frac_unknown_rfs must be in [0,1]");
        if (rfs_scale <= 0.0) throw config_error("synth.rfs_scale must be > 0");
        if (rfs_noise_sd < 0.0) throw config_error("synth.rfs_noise_sd must be >= 0");
        if (volume_noise_sd < 0.0) throw config_error("synth.volume_noise_sd must be >= 0");
        if (age_sd <= 0.0) throw config_error("synth.age_sd must be > 0");
        for (double p : {p_male, p_chd, p_pad})
            if (p < 0.0 || p > 1.0) throw config_error("synth prevalences must be in [0,1]");
        if (lesion_intensity_scale < 0.0)
            throw config_error("synth.lesion_intensity_scale must be >= 0");
    }
};

struct PatientRecord {
    std::string id;
    Vol volume;
    double age = 0.0; // years
    Gender gender = Gender::female;
    bool chd = false;
    bool pad = false;
    bool relapse = false;
    std::optional<double> rfs_days;
    std::optional<double> max_possible_rfs_days;
    std::optional<Mask> lesion_mask;   // synthetic ground truth only
    std::optional<double> latent_risk; // synthetic ground truth only
};

enum class Provenance { synthetic, external };

struct Cohort {
    std::vector<PatientRecord> records;
    Provenance provenance = Provenance::synthetic;
    std::optional<SynthConfig> generator_config;
};

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// RFS decreases affinely in risk, with additive noise, clamped to
// [1, kRfsCapDays].
inline double rfs_from_risk(double risk, const SynthConfig& config, Rng& rng) {
    double rfs = config.rfs_scale * (1.0 - risk);
    if (config.rfs_noise_sd > 0.0) rfs += rng.normal(0.0, config.rfs_noise_sd);
    return std::clamp(rfs, 1.0, kRfsCapDays);
}

namespace phantom {

// Geometry of the synthetic scan, in fractions of the volume extent or in
// voxels. The lesion's lateral semi-axes stay inside the vessel radius so
// lesion voxels sit on vessel intensity.
constexpr double kBackgroundBase = 0.05;
constexpr double kBackgroundSlope = 0.05;
constexpr double kHeadIntensity = 0.30;
constexpr double kVesselIntensity = 0.50;
constexpr double kVesselRadius = 2.6;   // voxels
constexpr double kLesionSemiAxial = 2.8; // voxels, along axis 0
constexpr double kLesionSemiLateral = 1.9;
constexpr double kLesionBandLo = 0.25; // fraction of axis 0
constexpr double kLesionBandHi = 0.60;

}  // namespace phantom

// Builds one synthetic scan: smooth background, ellipsoidal head, a vessel
// tube along axis 0, and an ellipsoidal lesion on the tube whose added
// intensity is lesion_intensity_scale * risk. The lesion center is drawn
// uniformly within a fixed band of the tube.
inline std::pair<Vol, Mask> synth_volume(double risk, const SynthConfig& config, Rng& rng) {
    if (risk < 0.0 || risk > 1.0) throw argument_error("synth_volume: risk must be in [0,1]");
    const Dims3 d = config.volume_shape;
    const double n0 = static_cast<double>(d[0]);
    const double n1 = static_cast<double>(d[1]);
    const double n2 = static_cast<double>(d[2]);

    const double head_c0 = 0.70 * n0, head_c1 = 0.5 * n1, head_c2 = 0.5 * n2;
    const double head_a0 = 0.28 * n0, head_a1 = 0.38 * n1, head_a2 = 0.38 * n2;
    const double vessel_c1 = 0.5 * n1, vessel_c2 = 0.5 * n2;

    const double lesion_c0 =
        rng.uniform(phantom::kLesionBandLo * n0, phantom::kLesionBandHi * n0);
    const double lesion_add = config.lesion_intensity_scale * risk;

    Vol vol(d);
    Mask mask(d);
    for (std::size_t i = 0; i < d[0]; ++i) {
        const double fi = static_cast<double>(i);
        const double bg = phantom::kBackgroundBase +
                          phantom::kBackgroundSlope * fi / std::max(1.0, n0 - 1.0);
        for (std::size_t j = 0; j < d[1]; ++j) {
            const double fj = static_cast<double>(j);
            for (std::size_t k = 0; k < d[2]; ++k) {
                const double fk = static_cast<double>(k);
                double v = bg;

                const double h0 = (fi - head_c0) / head_a0;
                const double h1 = (fj - head_c1) / head_a1;
                const double h2 = (fk - head_c2) / head_a2;
                if (h0 * h0 + h1 * h1 + h2 * h2 <= 1.0) v += phantom::kHeadIntensity;

                const double r1 = fj - vessel_c1;
                const double r2 = fk - vessel_c2;
                if (r1 * r1 + r2 * r2 <= phantom::kVesselRadius * phantom::kVesselRadius)
                    v += phantom::kVesselIntensity;

                const double l0 = (fi - lesion_c0) / phantom::kLesionSemiAxial;
                const double l1 = (fj - vessel_c1) / phantom::kLesionSemiLateral;
                const double l2 = (fk - vessel_c2) / phantom::kLesionSemiLateral;
                if (l0 * l0 + l1 * l1 + l2 * l2 <= 1.0) {
                    v += lesion_add;
                    mask.at(i, j, k) = 1;
                }
                if (config.volume_noise_sd > 0.0) v += rng.normal(0.0, config.volume_noise_sd);
                vol.at(i, j, k) = v;
            }
        }
    }
    return {std::move(vol), std::move(mask)};
}

// Deterministic synthetic cohort. Each patient draws from an independent
// substream of the seed, so generation order cannot change the result;
// assembly is in patient-index order.
inline Cohort synth_cohort(const SynthConfig& config) {
    config.validate();
    Cohort cohort;
    cohort.provenance = Provenance::synthetic;
    cohort.generator_config = config;
    cohort.records.reserve(config.n_patients);

    for (std::size_t p = 0; p < config.n_patients; ++p) {
        Rng rng = Rng::substream(config.seed, p);
        PatientRecord rec;
        {
            char buf[16];
            std::snprintf(buf, sizeof buf, "p%05zu", p);
            rec.id = buf;
        }
        rec.age = std::clamp(rng.normal(config.age_mu, config.age_sd), 30.0, 95.0);
        rec.gender = rng.bernoulli(config.p_male) ? Gender::male : Gender::female;
        rec.chd = rng.bernoulli(config.p_chd);
        rec.pad = rng.bernoulli(config.p_pad);
        const double lesion_latent = rng.normal(0.0, 1.0);

        const RiskWeights& w = config.risk_weights;
        const double z = w.age_z * (rec.age - config.age_mu) / config.age_sd +
                         w.gender * ((rec.gender == Gender::male ? 1.0 : 0.0) - config.p_male) +
                         w.chd * ((rec.chd ? 1.0 : 0.0) - config.p_chd) +
                         w.pad * ((rec.pad ? 1.0 : 0.0) - config.p_pad) +
                         w.lesion * lesion_latent;
        const double risk = logistic(z);
        rec.latent_risk = risk;

        rec.rfs_days = rfs_from_risk(risk, config, rng);
        rec.relapse = *rec.rfs_days < kKappaLowDays;

        auto [vol, mask] = synth_volume(risk, config, rng);
        rec.volume = std::move(vol);
        rec.lesion_mask = std::move(mask);
        cohort.records.push_back(std::move(rec));
    }

    // Hide the RFS of a share of relapse patients. Their recorded upper
    // bound stays below kappa_low so cohort selection keeps them.
    std::vector<std::size_t> relapse_idx;
    for (std::size_t i = 0; i < cohort.records.size(); ++i)
        if (cohort.records[i].relapse) relapse_idx.push_back(i);
    const std::size_t n_hide = static_cast<std::size_t>(
        std::llround(config.frac_unknown_rfs * static_cast<double>(relapse_idx.size())));
    Rng hide_rng = Rng::substream(config.seed, config.n_patients);
    hide_rng.shuffle(relapse_idx);
    for (std::size_t h = 0; h < n_hide; ++h) {
        PatientRecord& rec = cohort.records[relapse_idx[h]];
        const double rfs = *rec.rfs_days;
        double bound = std::min(rfs + hide_rng.uniform(1.0, 400.0), kKappaLowDays - 0.5);
        if (bound < rfs) bound = 0.5 * (rfs + kKappaLowDays);
        rec.max_possible_rfs_days = bound;
        rec.rfs_days.reset();
    }
    return cohort;
}

}  // namespace relapse
