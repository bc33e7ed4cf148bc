#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "relapse/errors.hpp"
#include "relapse/model.hpp"
#include "relapse/train.hpp"
#include "relapse/vol.hpp"

namespace relapse {

// Ablatable input attributes, one per tabular column plus the whole volume.
enum class Attribute { volume, age, gender, chd, pad };

inline const char* to_string(Attribute a) {
    switch (a) {
        case Attribute::volume: return "volume";
        case Attribute::age: return "age";
        case Attribute::gender: return "gender";
        case Attribute::chd: return "chd";
        case Attribute::pad: return "pad";
    }
    return "?";
}

constexpr std::array<Attribute, 5> kAllAttributes{Attribute::volume, Attribute::age,
                                                  Attribute::gender, Attribute::chd,
                                                  Attribute::pad};

// Training-set marginal baselines used as ablation replacements. The volume
// baseline is the voxelwise mean training volume; a constant-intensity fill
// would itself be far off the data manifold and register as signal where
// there is none. Feature baselines are the training means (exact 0 for the
// z-scored age).
struct Baselines {
    Vol volume_mean;
    double fill_intensity = 0.0; // mean voxel intensity, occlusion patch fill
    std::array<double, FeatureVector::kDim> feature_means{};
};

inline Baselines compute_baselines(const PreparedCohort& train) {
    if (train.records.empty()) throw data_error("compute_baselines: empty training cohort");
    Baselines b;
    const bool with_volumes = train.records.front().volume.size() > 0;
    if (with_volumes) {
        b.volume_mean = Vol(train.records.front().volume.dims);
        double total = 0.0;
        for (const auto& rec : train.records) {
            if (rec.volume.dims != b.volume_mean.dims)
                throw shape_error("compute_baselines: inconsistent volume shapes");
            for (std::size_t i = 0; i < rec.volume.data.size(); ++i)
                b.volume_mean.data[i] += rec.volume.data[i];
        }
        const double inv = 1.0 / static_cast<double>(train.records.size());
        for (double& x : b.volume_mean.data) {
            x *= inv;
            total += x;
        }
        b.fill_intensity = total / static_cast<double>(b.volume_mean.size());
    }
    const double inv = 1.0 / static_cast<double>(train.records.size());
    for (const auto& rec : train.records)
        for (std::size_t i = 0; i < FeatureVector::kDim; ++i)
            b.feature_means[i] += rec.features.values[i] * inv;
    b.feature_means[0] = 0.0; // age baseline is the z-score mean by definition
    return b;
}

// Replaces one attribute by its training baseline, leaving the rest alone.
inline std::pair<Vol, FeatureVector> ablate_attribute(const Vol& volume,
                                                      const FeatureVector& features,
                                                      Attribute attribute,
                                                      const Baselines& baselines) {
    Vol v = volume;
    FeatureVector f = features;
    switch (attribute) {
        case Attribute::volume:
            if (baselines.volume_mean.size() == 0)
                throw argument_error("ablate_attribute: baselines carry no volume mean");
            v = baselines.volume_mean;
            break;
        case Attribute::age: f.values[0] = baselines.feature_means[0]; break;
        case Attribute::gender:
            f.values[1] = baselines.feature_means[1];
            f.values[2] = baselines.feature_means[2];
            break;
        case Attribute::chd: f.values[3] = baselines.feature_means[3]; break;
        case Attribute::pad: f.values[4] = baselines.feature_means[4]; break;
        default: throw argument_error("ablate_attribute: unknown attribute");
    }
    return {std::move(v), std::move(f)};
}

// Attribute importances. `absolute` is normalized over all attributes (sums
// to 1), `relative` within each modality (sums to 1 per active modality;
// empty for a modality the model never reads).
struct ContributionReport {
    std::array<double, 5> absolute{}; // order of kAllAttributes
    std::array<std::optional<double>, 5> relative{};
    double vision_total = 0.0;
    double tabular_total = 0.0;
    bool collapse_flag = false; // min modality total < 0.05
};

namespace detail {

// Model output the contribution metric differentiates: the pre-threshold
// classifier score or the de-normalized (unclamped) predicted RFS.
inline double interpret_output(const FusionModelParams& params, const Vol& volume,
                               const FeatureVector& features, double rfs_cap) {
    const ForwardResult r = forward(params, volume, features);
    return params.config.task == Task::classify ? r.output : r.raw * rfs_cap;
}

}  // namespace detail

// Mean absolute output change under ablation, normalized per the report
// contract. Attributes outside the model graph change nothing and score an
// exact 0.
inline ContributionReport modality_contribution(const FusionModelParams& params,
                                                const PreparedCohort& eval_cohort,
                                                const Baselines& baselines) {
    if (eval_cohort.records.empty())
        throw data_error("modality_contribution: empty evaluation cohort");

    std::array<double, 5> u{};
    for (const auto& rec : eval_cohort.records) {
        const double base =
            detail::interpret_output(params, rec.volume, rec.features, eval_cohort.rfs_cap);
        for (std::size_t a = 0; a < kAllAttributes.size(); ++a) {
            const Attribute attr = kAllAttributes[a];
            if (attr == Attribute::volume && !params.config.has_vision())
                continue; // output cannot depend on the volume; u stays 0
            if (attr != Attribute::volume && !params.config.has_tabular()) continue;
            auto [av, af] = ablate_attribute(rec.volume, rec.features, attr, baselines);
            const double out =
                detail::interpret_output(params, av, af, eval_cohort.rfs_cap);
            u[a] += std::abs(out - base);
        }
    }
    const double inv = 1.0 / static_cast<double>(eval_cohort.records.size());
    for (double& x : u) x *= inv;

    const double total = std::accumulate(u.begin(), u.end(), 0.0);
    if (total == 0.0)
        throw metric_error("modality_contribution: constant model, contributions undefined");

    ContributionReport rep;
    for (std::size_t a = 0; a < u.size(); ++a) rep.absolute[a] = u[a] / total;
    rep.vision_total = rep.absolute[0];
    rep.tabular_total = rep.absolute[1] + rep.absolute[2] + rep.absolute[3] + rep.absolute[4];

    const double u_vision = u[0];
    const double u_tabular = u[1] + u[2] + u[3] + u[4];
    if (u_vision > 0.0) rep.relative[0] = u[0] / u_vision;
    if (u_tabular > 0.0)
        for (std::size_t a = 1; a < 5; ++a) rep.relative[a] = u[a] / u_tabular;
    rep.collapse_flag = std::min(rep.vision_total, rep.tabular_total) < 0.05;
    return rep;
}

struct OcclusionConfig {
    std::uint32_t patch = 6;
    std::uint32_t stride = 3;
    enum class Fill { train_mean_intensity, zero };
    Fill fill = Fill::train_mean_intensity;

    void validate(const Dims3& volume_shape) const {
        const std::uint32_t min_side =
            std::min({volume_shape[0], volume_shape[1], volume_shape[2]});
        if (patch == 0 || patch > min_side)
            throw config_error("occlusion.patch must be in (0, min volume side]");
        if (stride == 0 || stride > patch)
            throw config_error("occlusion.stride must be in (0, patch]");
    }
};

inline const char* to_string(OcclusionConfig::Fill f) {
    return f == OcclusionConfig::Fill::zero ? "zero" : "train_mean_intensity";
}

struct SaliencyVolume {
    Vol grid; // per-voxel importance in [0,1]
    OcclusionConfig config;
};

// Occlusion sensitivity core: slide a patch^3 cube with the given stride
// (clipped at the boundary, never wrapped), measure |score(occluded) -
// score(base)| per placement, average over the placements covering each voxel
// and normalize by the global max.
template <typename ScoreFn>
SaliencyVolume occlusion_saliency_fn(ScoreFn&& score, const Vol& volume,
                                     const OcclusionConfig& config, double fill_value) {
    config.validate(volume.dims);
    const Dims3 d = volume.dims;
    const double base = score(volume);

    Vol sum(d), count(d);
    auto starts = [&](std::uint32_t dim) {
        std::vector<std::size_t> s;
        for (std::size_t x = 0; x < dim; x += config.stride) s.push_back(x);
        return s;
    };
    const auto s0 = starts(d[0]), s1 = starts(d[1]), s2 = starts(d[2]);

    Vol occluded = volume;
    for (std::size_t a : s0)
        for (std::size_t b : s1)
            for (std::size_t c : s2) {
                const std::size_t e0 = std::min<std::size_t>(a + config.patch, d[0]);
                const std::size_t e1 = std::min<std::size_t>(b + config.patch, d[1]);
                const std::size_t e2 = std::min<std::size_t>(c + config.patch, d[2]);
                for (std::size_t i = a; i < e0; ++i)
                    for (std::size_t j = b; j < e1; ++j)
                        for (std::size_t k = c; k < e2; ++k) occluded.at(i, j, k) = fill_value;

                const double delta = std::abs(score(occluded) - base);
                for (std::size_t i = a; i < e0; ++i)
                    for (std::size_t j = b; j < e1; ++j)
                        for (std::size_t k = c; k < e2; ++k) {
                            sum.at(i, j, k) += delta;
                            count.at(i, j, k) += 1.0;
                            occluded.at(i, j, k) = volume.at(i, j, k);
                        }
            }

    SaliencyVolume sal;
    sal.config = config;
    sal.grid = Vol(d);
    double max_raw = 0.0;
    for (std::size_t t = 0; t < sal.grid.data.size(); ++t) {
        const double raw = count.data[t] > 0.0 ? sum.data[t] / count.data[t] : 0.0;
        sal.grid.data[t] = raw;
        max_raw = std::max(max_raw, raw);
    }
    if (max_raw < 1e-9) {
        std::fill(sal.grid.data.begin(), sal.grid.data.end(), 0.0);
    } else {
        for (double& x : sal.grid.data) x /= max_raw;
    }
    return sal;
}

// Model-backed occlusion map. A model that never reads the volume yields the
// all-zero map.
inline SaliencyVolume occlusion_saliency(const FusionModelParams& params,
                                         const PreparedRecord& record,
                                         const OcclusionConfig& config, double fill_intensity,
                                         double rfs_cap = kRfsCapDays) {
    const double fill = config.fill == OcclusionConfig::Fill::zero ? 0.0 : fill_intensity;
    return occlusion_saliency_fn(
        [&](const Vol& v) {
            return detail::interpret_output(params, v, record.features, rfs_cap);
        },
        record.volume, config, fill);
}

// Binarizes the saliency map at its top `top_fraction` voxels (ties broken
// by scan order) and intersects with the ground-truth mask. `hit` is true
// when the first maximal-saliency voxel lies inside the mask.
inline std::pair<double, bool> saliency_hit(const SaliencyVolume& saliency, const Mask& mask,
                                            double top_fraction) {
    if (saliency.grid.dims != mask.dims)
        throw shape_error("saliency_hit: saliency and mask shapes differ");
    if (!(top_fraction > 0.0 && top_fraction < 1.0))
        throw argument_error("saliency_hit: top_fraction must be in (0,1)");
    const std::size_t n = saliency.grid.data.size();
    std::size_t mask_count = mask.count();
    if (mask_count == 0) throw argument_error("saliency_hit: empty mask");

    const std::size_t k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(top_fraction * static_cast<double>(n))));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (saliency.grid.data[a] != saliency.grid.data[b])
                              return saliency.grid.data[a] > saliency.grid.data[b];
                          return a < b;
                      });

    std::size_t inter = 0;
    for (std::size_t t = 0; t < k; ++t) inter += (mask.data[order[t]] != 0);
    const std::size_t uni = k + mask_count - inter;
    const double iou = static_cast<double>(inter) / static_cast<double>(uni);

    std::size_t argmax = 0;
    for (std::size_t t = 1; t < n; ++t)
        if (saliency.grid.data[t] > saliency.grid.data[argmax]) argmax = t;
    return {iou, mask.data[argmax] != 0};
}

}  // namespace relapse
