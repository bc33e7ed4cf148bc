#pragma once
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "relapse/errors.hpp"
#include "relapse/synth.hpp"
#include "relapse/text.hpp"

namespace relapse {

inline const char* kManifestHeader =
    "id,age,gender,chd,pad,relapse,rfs_days,max_possible_rfs_days";

// Writes manifest.csv plus per-patient volume files under volumes/ and,
// when ground-truth masks exist, mask files under masks/.
inline void save_cohort(const std::string& dir, const Cohort& cohort) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "volumes");
    bool any_mask = false;
    for (const auto& r : cohort.records)
        if (r.lesion_mask) any_mask = true;
    if (any_mask) fs::create_directories(fs::path(dir) / "masks");

    std::ofstream os(fs::path(dir) / "manifest.csv");
    if (!os) throw io_error("cannot write manifest in " + dir);
    os << kManifestHeader << "\n";
    for (const auto& r : cohort.records) {
        os << r.id << ',' << detail::fmt_double(r.age) << ','
           << (r.gender == Gender::male ? "male" : "female") << ',' << (r.chd ? 1 : 0) << ','
           << (r.pad ? 1 : 0) << ',' << (r.relapse ? 1 : 0) << ',';
        if (r.rfs_days) os << detail::fmt_double(*r.rfs_days);
        os << ',';
        if (r.max_possible_rfs_days) os << detail::fmt_double(*r.max_possible_rfs_days);
        os << "\n";
        write_volume((fs::path(dir) / "volumes" / (r.id + ".vol")).string(), r.volume);
        if (r.lesion_mask)
            write_mask((fs::path(dir) / "masks" / (r.id + ".msk")).string(), *r.lesion_mask);
    }
}

inline void validate_cohort(const Cohort& cohort) {
    std::vector<std::string> ids;
    for (const auto& r : cohort.records) ids.push_back(r.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        throw data_error("cohort: duplicate patient id");
    for (const auto& r : cohort.records) {
        if (r.relapse && r.rfs_days && !(*r.rfs_days > 0.0))
            throw data_error("cohort: relapse record " + r.id + " has non-positive rfs");
        if (!r.rfs_days && !r.max_possible_rfs_days)
            throw data_error("cohort: record " + r.id +
                             " lacks both rfs_days and max_possible_rfs_days");
        if (r.lesion_mask && r.lesion_mask->dims != r.volume.dims)
            throw data_error("cohort: record " + r.id + " mask shape differs from volume");
    }
}

inline Cohort load_cohort(const std::string& dir, bool load_volumes = true,
                          bool load_masks = false) {
    namespace fs = std::filesystem;
    std::ifstream is(fs::path(dir) / "manifest.csv");
    if (!is) throw io_error("cannot open manifest in " + dir);
    std::string line;
    if (!std::getline(is, line)) throw io_error("empty manifest in " + dir);

    Cohort cohort;
    cohort.provenance = Provenance::external;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != 8)
            throw io_error("manifest line " + std::to_string(lineno) + ": expected 8 fields");
        PatientRecord r;
        r.id = f[0];
        r.age = std::strtod(f[1].c_str(), nullptr);
        if (f[2] == "male") r.gender = Gender::male;
        else if (f[2] == "female") r.gender = Gender::female;
        else throw io_error("manifest line " + std::to_string(lineno) + ": bad gender " + f[2]);
        r.chd = f[3] == "1";
        r.pad = f[4] == "1";
        r.relapse = f[5] == "1";
        if (!f[6].empty()) r.rfs_days = std::strtod(f[6].c_str(), nullptr);
        if (!f[7].empty()) r.max_possible_rfs_days = std::strtod(f[7].c_str(), nullptr);
        if (load_volumes)
            r.volume = read_volume((fs::path(dir) / "volumes" / (r.id + ".vol")).string());
        if (load_masks) {
            const auto mp = fs::path(dir) / "masks" / (r.id + ".msk");
            if (fs::exists(mp)) {
                r.lesion_mask = read_mask(mp.string());
                cohort.provenance = Provenance::synthetic;
            }
        }
        cohort.records.push_back(std::move(r));
    }
    validate_cohort(cohort);
    return cohort;
}

}  // namespace relapse
