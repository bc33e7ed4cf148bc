#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "relapse/preprocess.hpp"
#include "relapse/rng.hpp"
#include "relapse/synth.hpp"

using namespace relapse;

namespace {

PatientRecord make_record(std::string id, bool relapse, std::optional<double> rfs,
                          std::optional<double> max_possible = std::nullopt) {
    PatientRecord r;
    r.id = std::move(id);
    r.age = 70.0;
    r.relapse = relapse;
    r.rfs_days = rfs;
    r.max_possible_rfs_days = max_possible;
    return r;
}

}  // namespace

TEST_CASE("age statistics use the sample standard deviation") {
    std::vector<PatientRecord> recs;
    for (double age : {60.0, 70.0, 80.0}) {
        PatientRecord r;
        r.age = age;
        recs.push_back(r);
    }
    const AgeStats s = compute_age_stats(recs);
    REQUIRE(s.mu == 70.0);
    REQUIRE(s.sigma == 10.0);
}

TEST_CASE("degenerate age statistics are rejected") {
    std::vector<PatientRecord> recs(2);
    recs[0].age = recs[1].age = 69.10;
    REQUIRE_THROWS_AS(compute_age_stats(recs), stats_error);
    recs.resize(1);
    REQUIRE_THROWS_AS(compute_age_stats(recs), stats_error);
}

TEST_CASE("tabular encoding matches the documented layout") {
    const AgeStats stats{69.10, 10.18};
    PatientRecord r;
    r.age = 69.10;
    r.gender = Gender::male;
    r.chd = true;
    r.pad = false;

    const FeatureVector f = encode_tabular(r, stats);
    REQUIRE(f.values[0] == 0.0);
    // male encodes as [1,0], CHD-only as [1,0]
    REQUIRE(f.values[1] == 1.0);
    REQUIRE(f.values[2] == 0.0);
    REQUIRE(f.values[3] == 1.0);
    REQUIRE(f.values[4] == 0.0);

    r.age = 79.28;
    REQUIRE_THAT(encode_tabular(r, stats).values[0],
                 Catch::Matchers::WithinAbs(1.0, 1e-12));

    r.gender = Gender::female;
    const FeatureVector g = encode_tabular(r, stats);
    REQUIRE(g.values[1] == 0.0);
    REQUIRE(g.values[2] == 1.0);
}

TEST_CASE("tabular encoding is injective on the categorical attributes") {
    const AgeStats stats{69.10, 10.18};
    std::set<std::array<double, 4>> seen;
    for (Gender g : {Gender::female, Gender::male})
        for (bool chd : {false, true})
            for (bool pad : {false, true}) {
                PatientRecord r;
                r.age = 69.10;
                r.gender = g;
                r.chd = chd;
                r.pad = pad;
                const FeatureVector f = encode_tabular(r, stats);
                seen.insert({f.values[1], f.values[2], f.values[3], f.values[4]});
            }
    REQUIRE(seen.size() == 8);
}

TEST_CASE("cohort selection implements the kappa rules") {
    const SelectionConfig cfg;
    std::vector<PatientRecord> recs;
    recs.push_back(make_record("drop_relapse_late", true, 1700.0));  // 1700 > kappa_low
    recs.push_back(make_record("keep_relapse", true, 1000.0));
    recs.push_back(make_record("drop_relapse_boundary", true, 1642.0)); // strict <
    recs.push_back(make_record("keep_unknown", true, std::nullopt, 1500.0));
    recs.push_back(make_record("drop_unknown", true, std::nullopt, 1700.0));
    recs.push_back(make_record("drop_unknown_boundary", true, std::nullopt, 1642.0));
    recs.push_back(make_record("keep_nonrelapse_capped", false, 2600.0));
    recs.push_back(make_record("keep_nonrelapse", false, 1900.0));
    recs.push_back(make_record("drop_nonrelapse_mid", false, 1700.0));
    recs.push_back(make_record("drop_nonrelapse_boundary", false, 1825.0)); // strict >
    recs.push_back(make_record("drop_nonrelapse_unknown", false, std::nullopt, 2600.0));

    const Cohort out = select_cohort(recs, cfg);
    std::set<std::string> kept;
    for (const auto& r : out.records) kept.insert(r.id);
    REQUIRE(kept ==
            std::set<std::string>{"keep_relapse", "keep_unknown", "keep_nonrelapse_capped",
                                  "keep_nonrelapse"});
    for (const auto& r : out.records)
        if (r.id == "keep_nonrelapse_capped") REQUIRE(*r.rfs_days == 2555.0);
}

TEST_CASE("selection rule holds on randomized records") {
    const SelectionConfig cfg;
    Rng rng(99);
    std::vector<PatientRecord> recs;
    for (int i = 0; i < 400; ++i) {
        const bool relapse = rng.bernoulli(0.4);
        const bool unknown = relapse && rng.bernoulli(0.3);
        const double rfs = rng.uniform(1.0, 3000.0);
        PatientRecord r = make_record("r" + std::to_string(i), relapse,
                                      unknown ? std::nullopt : std::optional<double>(rfs),
                                      unknown ? std::optional<double>(rng.uniform(1.0, 3000.0))
                                              : std::nullopt);
        recs.push_back(r);
    }
    const Cohort out = select_cohort(recs, cfg);
    double max_relapse = 0.0, min_nonrelapse = 1e18;
    for (const auto& r : out.records) {
        if (r.relapse) {
            if (r.rfs_days) {
                REQUIRE(*r.rfs_days < cfg.kappa_low);
                max_relapse = std::max(max_relapse, *r.rfs_days);
            } else {
                REQUIRE(*r.max_possible_rfs_days < cfg.kappa_low);
            }
        } else {
            REQUIRE(*r.rfs_days > cfg.kappa_high);
            REQUIRE(*r.rfs_days <= cfg.rfs_cap);
            min_nonrelapse = std::min(min_nonrelapse, *r.rfs_days);
        }
    }
    REQUIRE(max_relapse < cfg.kappa_low);
    REQUIRE(cfg.kappa_high < min_nonrelapse);

    // kept set matches an independent statement of the rule
    std::set<std::string> kept;
    for (const auto& r : out.records) kept.insert(r.id);
    for (const auto& r : recs) {
        bool expect;
        if (r.relapse)
            expect = r.rfs_days ? *r.rfs_days < cfg.kappa_low
                                : *r.max_possible_rfs_days < cfg.kappa_low;
        else
            expect = r.rfs_days && *r.rfs_days > cfg.kappa_high;
        REQUIRE(kept.count(r.id) == (expect ? 1u : 0u));
    }
}

TEST_CASE("stratified split reproduces the 80:20 shape") {
    SelectionConfig cfg;
    cfg.split_seed = 5;
    Cohort cohort;
    for (int i = 0; i < 119; ++i)
        cohort.records.push_back(
            make_record("p" + std::to_string(i), i < 41, i < 41 ? 800.0 : 2000.0));
    auto [train, test] = split_cohort(cohort, cfg);
    REQUIRE(train.records.size() == 95);
    REQUIRE(test.records.size() == 24);

    auto [train2, test2] = split_cohort(cohort, cfg);
    REQUIRE(train2.records.size() == train.records.size());
    for (std::size_t i = 0; i < train.records.size(); ++i)
        REQUIRE(train2.records[i].id == train.records[i].id);
}

TEST_CASE("small stratified split keeps per-stratum proportions") {
    SelectionConfig cfg;
    cfg.split_seed = 1;
    Cohort cohort;
    for (int i = 0; i < 10; ++i)
        cohort.records.push_back(
            make_record("p" + std::to_string(i), i < 4, i < 4 ? 800.0 : 2000.0));
    auto [train, test] = split_cohort(cohort, cfg);
    std::size_t train_relapse = 0;
    for (const auto& r : train.records) train_relapse += r.relapse;
    REQUIRE((train_relapse == 3 || train_relapse == 4));
    REQUIRE(train.records.size() + test.records.size() == 10);
}

TEST_CASE("single-member strata go to train") {
    SelectionConfig cfg;
    Cohort cohort;
    cohort.records.push_back(make_record("lone_relapse", true, 800.0));
    cohort.records.push_back(make_record("n1", false, 2000.0));
    cohort.records.push_back(make_record("n2", false, 2100.0));
    cohort.records.push_back(make_record("n3", false, 2200.0));
    auto [train, test] = split_cohort(cohort, cfg);
    bool in_train = false;
    for (const auto& r : train.records) in_train |= (r.id == "lone_relapse");
    REQUIRE(in_train);
}

TEST_CASE("volume normalization") {
    Vol v({2, 2, 2});
    v.data = {0, 2, 0, 2, 0, 2, 0, 2};
    const Vol out = normalize_volume(v, VolumeStats{1.0, 1.0});
    for (std::size_t i = 0; i < out.data.size(); ++i)
        REQUIRE(out.data[i] == (v.data[i] == 0.0 ? -1.0 : 1.0));

    Vol c({2, 2, 2}, 3.0);
    const Vol z = normalize_volume(c, VolumeStats{3.0, 2.0});
    for (double x : z.data) REQUIRE(x == 0.0);

    const Vol ident = normalize_volume(v, VolumeStats{0.0, 1.0});
    REQUIRE(ident.data == v.data);

    REQUIRE_THROWS_AS(normalize_volume(v, VolumeStats{1.0, 0.0}), stats_error);
}

TEST_CASE("volume statistics come from the supplied volumes only") {
    Vol a({2, 2, 2}, 1.0), b({2, 2, 2}, 3.0);
    const VolumeStats s = compute_volume_stats({&a, &b});
    REQUIRE(s.mean == 2.0);
    REQUIRE(s.sd == 1.0);
}

TEST_CASE("selection config invariants") {
    SelectionConfig cfg;
    cfg.kappa_low = 1900.0;
    REQUIRE_THROWS_AS(cfg.validate(), config_error);
    cfg = SelectionConfig{};
    cfg.split_ratio = 1.0;
    REQUIRE_THROWS_AS(cfg.validate(), config_error);
}
