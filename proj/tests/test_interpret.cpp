#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "relapse/interpret.hpp"
#include "relapse/preprocess.hpp"
#include "relapse/rng.hpp"
#include "relapse/synth.hpp"
#include "relapse/train.hpp"

using namespace relapse;
using Catch::Matchers::WithinAbs;

namespace {

PreparedCohort tiny_prepared(std::uint64_t seed, bool with_volumes, std::size_t n = 10) {
    SynthConfig sc;
    sc.n_patients = n;
    sc.volume_shape = {8, 8, 8};
    sc.seed = seed;
    Cohort cohort = synth_cohort(sc);
    const AgeStats age_stats = compute_age_stats(cohort.records);
    VolumeStats vs{0.0, 1.0};
    if (with_volumes) {
        std::vector<const Vol*> vols;
        for (const auto& r : cohort.records) vols.push_back(&r.volume);
        vs = compute_volume_stats(vols);
    }
    return prepare_cohort(std::move(cohort), age_stats, vs, with_volumes);
}

ModelConfig tiny_model(Modality m) {
    ModelConfig mc;
    mc.vision_channels = {2, 3};
    mc.vision_embed_dim = 4;
    mc.tabular_hidden = {5};
    mc.tabular_embed_dim = 3;
    mc.fusion_hidden = {4};
    mc.input_shape = {8, 8, 8};
    mc.modality = m;
    return mc;
}

}  // namespace

TEST_CASE("baselines are training-set means") {
    std::vector<PatientRecord> records(1000);
    for (std::size_t i = 0; i < records.size(); ++i) {
        PatientRecord& r = records[i];
        r.id = "b" + std::to_string(i);
        r.age = 60.0 + static_cast<double>(i % 20);
        r.gender = i < 664 ? Gender::male : Gender::female;
        r.chd = i < 252;
        r.pad = i < 218;
    }
    Cohort cohort;
    cohort.records = records;
    const AgeStats stats = compute_age_stats(cohort.records);
    const PreparedCohort data = prepare_cohort(cohort, stats, VolumeStats{0.0, 1.0}, false);
    const Baselines b = compute_baselines(data);
    REQUIRE(b.feature_means[0] == 0.0);
    REQUIRE_THAT(b.feature_means[1], WithinAbs(0.664, 1e-12)); // male slot
    REQUIRE_THAT(b.feature_means[2], WithinAbs(0.336, 1e-12)); // female slot
    REQUIRE_THAT(b.feature_means[3], WithinAbs(0.252, 1e-12));
    REQUIRE_THAT(b.feature_means[4], WithinAbs(0.218, 1e-12));
}

TEST_CASE("ablation replaces exactly the named attribute") {
    Baselines b;
    b.volume_mean = Vol({4, 4, 4}, 0.25);
    b.feature_means = {0.0, 0.664, 0.336, 0.252, 0.218};

    Vol v({4, 4, 4}, 1.0);
    FeatureVector f;
    f.values = {1.3, 1.0, 0.0, 1.0, 0.0};

    auto [va, fa] = ablate_attribute(v, f, Attribute::age, b);
    REQUIRE(fa.values[0] == 0.0);
    REQUIRE(fa.values[1] == 1.0);
    REQUIRE(va.data == v.data);

    auto [vg, fg] = ablate_attribute(v, f, Attribute::gender, b);
    REQUIRE(fg.values[1] == 0.664);
    REQUIRE(fg.values[2] == 0.336);
    REQUIRE(fg.values[0] == 1.3);

    auto [vv, fv] = ablate_attribute(v, f, Attribute::volume, b);
    REQUIRE(vv.data == b.volume_mean.data);
    REQUIRE(fv.values == f.values);

    auto [vc, fc] = ablate_attribute(v, f, Attribute::chd, b);
    REQUIRE(fc.values[3] == 0.252);
    auto [vp, fp] = ablate_attribute(v, f, Attribute::pad, b);
    REQUIRE(fp.values[4] == 0.218);
}

TEST_CASE("volume ablation cannot change a tabular_only model") {
    const PreparedCohort data = tiny_prepared(1, true);
    const Baselines b = compute_baselines(data);
    const FusionModelParams p = init_model(tiny_model(Modality::tabular_only));
    const auto& rec = data.records[0];
    auto [va, fa] = ablate_attribute(rec.volume, rec.features, Attribute::volume, b);
    REQUIRE(forward(p, va, fa).raw == forward(p, rec.volume, rec.features).raw);
}

TEST_CASE("contribution normalizations hold to 1e-9") {
    const PreparedCohort data = tiny_prepared(2, true);
    const Baselines b = compute_baselines(data);
    const FusionModelParams p = init_model(tiny_model(Modality::multimodal));
    const ContributionReport rep = modality_contribution(p, data, b);

    double total = 0.0;
    for (double a : rep.absolute) total += a;
    REQUIRE_THAT(total, WithinAbs(1.0, 1e-9));
    REQUIRE_THAT(rep.vision_total + rep.tabular_total, WithinAbs(1.0, 1e-9));

    REQUIRE(rep.relative[0].has_value());
    REQUIRE_THAT(*rep.relative[0], WithinAbs(1.0, 1e-9));
    double tab_rel = 0.0;
    for (std::size_t a = 1; a < 5; ++a) {
        REQUIRE(rep.relative[a].has_value());
        tab_rel += *rep.relative[a];
    }
    REQUIRE_THAT(tab_rel, WithinAbs(1.0, 1e-9));
}

TEST_CASE("single-modality variants report exactly 1.00 for their modality") {
    const PreparedCohort data = tiny_prepared(3, true);
    const Baselines b = compute_baselines(data);

    const FusionModelParams vision = init_model(tiny_model(Modality::vision_only));
    const ContributionReport vr = modality_contribution(vision, data, b);
    REQUIRE(vr.absolute[0] == 1.0);
    REQUIRE(vr.vision_total == 1.0);
    REQUIRE(vr.tabular_total == 0.0);
    REQUIRE(*vr.relative[0] == 1.0);
    for (std::size_t a = 1; a < 5; ++a) {
        REQUIRE(vr.absolute[a] == 0.0); // excised attributes score exactly zero
        REQUIRE_FALSE(vr.relative[a].has_value());
    }

    const FusionModelParams tabular = init_model(tiny_model(Modality::tabular_only));
    const ContributionReport tr = modality_contribution(tabular, data, b);
    REQUIRE(tr.absolute[0] == 0.0);
    REQUIRE_THAT(tr.tabular_total, WithinAbs(1.0, 1e-9));
    REQUIRE(tr.collapse_flag); // one modality at zero is the degenerate flag case
}

TEST_CASE("a constant model has undefined contributions") {
    const PreparedCohort data = tiny_prepared(4, true);
    const Baselines b = compute_baselines(data);
    FusionModelParams p = init_model(tiny_model(Modality::multimodal));
    std::fill(p.values.begin(), p.values.end(), 0.0);
    REQUIRE_THROWS_AS(modality_contribution(p, data, b), metric_error);
}

TEST_CASE("occlusion saliency of a volume-blind model is the zero map") {
    const PreparedCohort data = tiny_prepared(5, true);
    const FusionModelParams p = init_model(tiny_model(Modality::tabular_only));
    OcclusionConfig oc;
    oc.patch = 4;
    oc.stride = 2;
    const SaliencyVolume sal = occlusion_saliency(p, data.records[0], oc, 0.0);
    for (double x : sal.grid.data) REQUIRE(x == 0.0);
}

TEST_CASE("occlusion saliency localizes an analytic region model") {
    // score = mean intensity over R; the volume is 1 on R and 0 elsewhere.
    const Dims3 dims{16, 16, 16};
    Vol volume(dims);
    Mask region(dims);
    for (std::size_t i = 6; i < 10; ++i)
        for (std::size_t j = 6; j < 10; ++j)
            for (std::size_t k = 6; k < 10; ++k) {
                volume.at(i, j, k) = 1.0;
                region.at(i, j, k) = 1;
            }
    auto score = [&](const Vol& v) {
        double s = 0.0;
        for (std::size_t i = 6; i < 10; ++i)
            for (std::size_t j = 6; j < 10; ++j)
                for (std::size_t k = 6; k < 10; ++k) s += v.at(i, j, k);
        return s / 64.0;
    };
    OcclusionConfig oc;
    oc.patch = 4;
    oc.stride = 2;
    const SaliencyVolume sal = occlusion_saliency_fn(score, volume, oc, 0.0);

    // the maximum sits inside R
    std::size_t argmax = 0;
    for (std::size_t t = 1; t < sal.grid.data.size(); ++t)
        if (sal.grid.data[t] > sal.grid.data[argmax]) argmax = t;
    REQUIRE(region.data[argmax] == 1);

    // voxels no placement shares with R stay at zero
    for (std::size_t i = 0; i < dims[0]; ++i)
        for (std::size_t j = 0; j < dims[1]; ++j)
            for (std::size_t k = 0; k < dims[2]; ++k) {
                const bool far = i + oc.patch < 6 || i > 10 + oc.patch || j + oc.patch < 6 ||
                                 j > 10 + oc.patch || k + oc.patch < 6 || k > 10 + oc.patch;
                if (far) REQUIRE(sal.grid.at(i, j, k) == 0.0);
            }
    // and the mask voxels dominate any far-away voxel
    double min_in_region = 1.0;
    for (std::size_t t = 0; t < region.data.size(); ++t)
        if (region.data[t]) min_in_region = std::min(min_in_region, sal.grid.data[t]);
    REQUIRE(min_in_region > 0.5);
}

TEST_CASE("occlusion saliency is deterministic") {
    const PreparedCohort data = tiny_prepared(6, true);
    const FusionModelParams p = init_model(tiny_model(Modality::multimodal));
    OcclusionConfig oc;
    oc.patch = 4;
    oc.stride = 2;
    const SaliencyVolume a = occlusion_saliency(p, data.records[0], oc, 0.0);
    const SaliencyVolume b = occlusion_saliency(p, data.records[0], oc, 0.0);
    REQUIRE(a.grid.data == b.grid.data);
    for (double x : a.grid.data) {
        REQUIRE(x >= 0.0);
        REQUIRE(x <= 1.0);
    }
}

TEST_CASE("occlusion config invariants") {
    OcclusionConfig oc;
    oc.patch = 0;
    REQUIRE_THROWS_AS(oc.validate({8, 8, 8}), config_error);
    oc.patch = 12;
    REQUIRE_THROWS_AS(oc.validate({8, 8, 8}), config_error);
    oc.patch = 6;
    oc.stride = 7;
    REQUIRE_THROWS_AS(oc.validate({8, 8, 8}), config_error);
}

TEST_CASE("saliency_hit on exact and disjoint maps") {
    const Dims3 dims{10, 10, 10};
    Mask mask(dims);
    SaliencyVolume sal;
    sal.grid = Vol(dims);
    for (std::size_t t = 0; t < 20; ++t) {
        mask.data[t] = 1;
        sal.grid.data[t] = 1.0;
    }
    const double density = 20.0 / 1000.0;
    auto [iou, hit] = saliency_hit(sal, mask, density);
    REQUIRE(iou == 1.0);
    REQUIRE(hit);

    SaliencyVolume disjoint;
    disjoint.grid = Vol(dims);
    for (std::size_t t = 500; t < 520; ++t) disjoint.grid.data[t] = 1.0;
    auto [iou2, hit2] = saliency_hit(disjoint, mask, density);
    REQUIRE(iou2 == 0.0);
    REQUIRE_FALSE(hit2);

    REQUIRE_THROWS_AS(saliency_hit(sal, Mask(dims), 0.02), argument_error);
    REQUIRE_THROWS_AS(saliency_hit(sal, mask, 0.0), argument_error);
    Mask wrong({8, 8, 8});
    REQUIRE_THROWS_AS(saliency_hit(sal, wrong, 0.02), shape_error);
}

TEST_CASE("random saliency gives a small IoU baseline") {
    const Dims3 dims{24, 24, 24};
    Rng rng(123);
    Mask mask(dims);
    std::size_t planted = 0;
    while (planted < 276) { // ~2% of 13824
        const std::size_t t = rng.below(mask.data.size());
        if (!mask.data[t]) {
            mask.data[t] = 1;
            ++planted;
        }
    }
    double total = 0.0;
    const int reps = 30;
    for (int r = 0; r < reps; ++r) {
        SaliencyVolume sal;
        sal.grid = Vol(dims);
        for (double& x : sal.grid.data) x = rng.uniform01();
        total += saliency_hit(sal, mask, 0.02).first;
    }
    const double mean_iou = total / reps;
    REQUIRE(mean_iou < 0.03);
    REQUIRE(mean_iou > 0.001);
}

TEST_CASE("planted tabular signal dominates contributions after training") {
    SynthConfig sc;
    sc.n_patients = 60;
    sc.volume_shape = {8, 8, 8};
    sc.risk_weights = RiskWeights{1.2, 1.0, 1.5, 1.5, 0.0}; // nothing on the lesion
    sc.lesion_intensity_scale = 0.0;                        // volume carries no signal
    sc.rfs_noise_sd = 0.0;
    sc.seed = 31;
    Cohort cohort = synth_cohort(sc);
    const AgeStats age_stats = compute_age_stats(cohort.records);
    std::vector<const Vol*> vols;
    for (const auto& r : cohort.records) vols.push_back(&r.volume);
    const VolumeStats vstats = compute_volume_stats(vols);
    const PreparedCohort data = prepare_cohort(std::move(cohort), age_stats, vstats, true);

    ModelConfig mc = tiny_model(Modality::multimodal);
    mc.task = Task::regress;
    TrainConfig tc;
    tc.task = Task::regress;
    tc.epochs = 40;
    tc.batch_size = 16;
    tc.learning_rate = 0.05;
    tc.seed = 8;
    auto [params, history] = train(init_model(mc), data, tc);

    const Baselines b = compute_baselines(data);
    const ContributionReport rep = modality_contribution(params, data, b);
    REQUIRE(rep.tabular_total >= 0.8);
}
