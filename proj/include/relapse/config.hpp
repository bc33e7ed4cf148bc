#pragma once
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "relapse/errors.hpp"
#include "relapse/interpret.hpp"
#include "relapse/model.hpp"
#include "relapse/preprocess.hpp"
#include "relapse/synth.hpp"
#include "relapse/train.hpp"

namespace relapse {

using Json = nlohmann::json;

struct PathsConfig {
    std::string data_dir = "data";
    std::string model_dir = "models";
    std::string report_dir = "reports";
};

// Variant/task selection and the sweep's beta; kept apart from the model
// section so the same architecture hash covers all variants of a run.
struct RunSection {
    Modality variant = Modality::multimodal;
    Task task = Task::classify;
    double beta = 1.0;
};

struct RunConfig {
    SynthConfig synth;
    SelectionConfig select;
    ModelConfig model;
    TrainConfig train;
    OcclusionConfig occlusion;
    PathsConfig paths;
    RunSection run;

    // Propagates the run-level variant/task into the model and trainer and
    // validates every section invariant.
    void finalize() {
        model.modality = run.variant;
        model.task = run.task;
        train.task = run.task;
        if (run.beta < 0.0) throw config_error("run.beta must be >= 0");
        synth.validate();
        select.validate();
        model.validate();
        train.validate();
        occlusion.validate(synth.volume_shape);
        if (model.input_shape != synth.volume_shape)
            throw config_error("model.input_shape must equal synth.volume_shape");
    }
};

namespace cfg_detail {

inline void expect_keys(const Json& obj, const std::string& section,
                        std::initializer_list<const char*> keys) {
    if (!obj.is_object()) throw config_error("config section '" + section + "' must be an object");
    for (const auto& [key, _] : obj.items()) {
        bool known = false;
        for (const char* k : keys)
            if (key == k) known = true;
        if (!known)
            throw config_error("unknown config key '" +
                               (section.empty() ? key : section + "." + key) + "'");
    }
}

inline double num(const Json& v, const std::string& what) {
    if (!v.is_number()) throw config_error("config key '" + what + "' must be a number");
    return v.get<double>();
}

inline std::uint64_t uint(const Json& v, const std::string& what) {
    if (!v.is_number_unsigned() && !v.is_number_integer())
        throw config_error("config key '" + what + "' must be an integer");
    return v.get<std::uint64_t>();
}

inline bool boolean(const Json& v, const std::string& what) {
    if (!v.is_boolean()) throw config_error("config key '" + what + "' must be a boolean");
    return v.get<bool>();
}

inline std::string str(const Json& v, const std::string& what) {
    if (!v.is_string()) throw config_error("config key '" + what + "' must be a string");
    return v.get<std::string>();
}

inline Task parse_task(const std::string& s, const std::string& what) {
    if (s == "classify") return Task::classify;
    if (s == "regress") return Task::regress;
    throw config_error("config key '" + what + "': unknown task '" + s + "'");
}

inline Modality parse_modality(const std::string& s, const std::string& what) {
    if (s == "tabular_only") return Modality::tabular_only;
    if (s == "vision_only") return Modality::vision_only;
    if (s == "multimodal") return Modality::multimodal;
    throw config_error("config key '" + what + "': unknown variant '" + s + "'");
}

inline Activation parse_activation(const std::string& s, const std::string& what) {
    if (s == "relu") return Activation::relu;
    if (s == "gelu") return Activation::gelu;
    throw config_error("config key '" + what + "': unknown activation '" + s + "'");
}

inline OcclusionConfig::Fill parse_fill(const std::string& s, const std::string& what) {
    if (s == "train_mean_intensity") return OcclusionConfig::Fill::train_mean_intensity;
    if (s == "zero") return OcclusionConfig::Fill::zero;
    throw config_error("config key '" + what + "': unknown fill '" + s + "'");
}

inline Dims3 parse_dims(const Json& v, const std::string& what) {
    if (!v.is_array() || v.size() != 3)
        throw config_error("config key '" + what + "' must be an array of 3 integers");
    Dims3 d;
    for (std::size_t i = 0; i < 3; ++i) d[i] = static_cast<std::uint32_t>(uint(v[i], what));
    return d;
}

inline std::vector<int> parse_widths(const Json& v, const std::string& what) {
    if (!v.is_array()) throw config_error("config key '" + what + "' must be an array");
    std::vector<int> out;
    for (const auto& x : v) out.push_back(static_cast<int>(uint(x, what)));
    return out;
}

}  // namespace cfg_detail

inline void from_json_section(const Json& j, SynthConfig& c) {
    using namespace cfg_detail;
    expect_keys(j, "synth",
                {"n_patients", "volume_shape", "risk_weights", "lesion_intensity_scale",
                 "volume_noise_sd", "rfs_scale", "rfs_noise_sd", "frac_unknown_rfs", "age_mu",
                 "age_sd", "p_male", "p_chd", "p_pad", "seed"});
    if (j.contains("n_patients"))
        c.n_patients = static_cast<std::size_t>(uint(j["n_patients"], "synth.n_patients"));
    if (j.contains("volume_shape")) c.volume_shape = parse_dims(j["volume_shape"], "synth.volume_shape");
    if (j.contains("risk_weights")) {
        const Json& w = j["risk_weights"];
        expect_keys(w, "synth.risk_weights", {"age_z", "gender", "chd", "pad", "lesion"});
        if (w.contains("age_z")) c.risk_weights.age_z = num(w["age_z"], "synth.risk_weights.age_z");
        if (w.contains("gender")) c.risk_weights.gender = num(w["gender"], "synth.risk_weights.gender");
        if (w.contains("chd")) c.risk_weights.chd = num(w["chd"], "synth.risk_weights.chd");
        if (w.contains("pad")) c.risk_weights.pad = num(w["pad"], "synth.risk_weights.pad");
        if (w.contains("lesion")) c.risk_weights.lesion = num(w["lesion"], "synth.risk_weights.lesion");
    }
    if (j.contains("lesion_intensity_scale"))
        c.lesion_intensity_scale = num(j["lesion_intensity_scale"], "synth.lesion_intensity_scale");
    if (j.contains("volume_noise_sd")) c.volume_noise_sd = num(j["volume_noise_sd"], "synth.volume_noise_sd");
    if (j.contains("rfs_scale")) c.rfs_scale = num(j["rfs_scale"], "synth.rfs_scale");
    if (j.contains("rfs_noise_sd")) c.rfs_noise_sd = num(j["rfs_noise_sd"], "synth.rfs_noise_sd");
    if (j.contains("frac_unknown_rfs")) c.frac_unknown_rfs = num(j["frac_unknown_rfs"], "synth.frac_unknown_rfs");
    if (j.contains("age_mu")) c.age_mu = num(j["age_mu"], "synth.age_mu");
    if (j.contains("age_sd")) c.age_sd = num(j["age_sd"], "synth.age_sd");
    if (j.contains("p_male")) c.p_male = num(j["p_male"], "synth.p_male");
    if (j.contains("p_chd")) c.p_chd = num(j["p_chd"], "synth.p_chd");
    if (j.contains("p_pad")) c.p_pad = num(j["p_pad"], "synth.p_pad");
    if (j.contains("seed")) c.seed = uint(j["seed"], "synth.seed");
}

inline Json to_json_section(const SynthConfig& c) {
    Json w{{"age_z", c.risk_weights.age_z},
           {"gender", c.risk_weights.gender},
           {"chd", c.risk_weights.chd},
           {"pad", c.risk_weights.pad},
           {"lesion", c.risk_weights.lesion}};
    return Json{{"n_patients", c.n_patients},
                {"volume_shape", {c.volume_shape[0], c.volume_shape[1], c.volume_shape[2]}},
                {"risk_weights", w},
                {"lesion_intensity_scale", c.lesion_intensity_scale},
                {"volume_noise_sd", c.volume_noise_sd},
                {"rfs_scale", c.rfs_scale},
                {"rfs_noise_sd", c.rfs_noise_sd},
                {"frac_unknown_rfs", c.frac_unknown_rfs},
                {"age_mu", c.age_mu},
                {"age_sd", c.age_sd},
                {"p_male", c.p_male},
                {"p_chd", c.p_chd},
                {"p_pad", c.p_pad},
                {"seed", c.seed}};
}

inline void from_json_section(const Json& j, SelectionConfig& c) {
    using namespace cfg_detail;
    expect_keys(j, "select",
                {"kappa_low", "kappa_high", "rfs_cap", "cap_excludes", "split_ratio", "split_seed"});
    if (j.contains("kappa_low")) c.kappa_low = num(j["kappa_low"], "select.kappa_low");
    if (j.contains("kappa_high")) c.kappa_high = num(j["kappa_high"], "select.kappa_high");
    if (j.contains("rfs_cap")) c.rfs_cap = num(j["rfs_cap"], "select.rfs_cap");
    if (j.contains("cap_excludes")) c.cap_excludes = boolean(j["cap_excludes"], "select.cap_excludes");
    if (j.contains("split_ratio")) c.split_ratio = num(j["split_ratio"], "select.split_ratio");
    if (j.contains("split_seed")) c.split_seed = uint(j["split_seed"], "select.split_seed");
}

inline Json to_json_section(const SelectionConfig& c) {
    return Json{{"kappa_low", c.kappa_low},   {"kappa_high", c.kappa_high},
                {"rfs_cap", c.rfs_cap},       {"cap_excludes", c.cap_excludes},
                {"split_ratio", c.split_ratio}, {"split_seed", c.split_seed}};
}

inline void from_json_section(const Json& j, ModelConfig& c) {
    using namespace cfg_detail;
    expect_keys(j, "model",
                {"vision_channels", "blocks_per_stage", "vision_embed_dim", "tabular_hidden",
                 "tabular_embed_dim", "fusion_hidden", "vision_activation", "tabular_activation",
                 "fusion_activation", "input_shape", "init_seed"});
    if (j.contains("vision_channels")) c.vision_channels = parse_widths(j["vision_channels"], "model.vision_channels");
    if (j.contains("blocks_per_stage"))
        c.blocks_per_stage = static_cast<int>(uint(j["blocks_per_stage"], "model.blocks_per_stage"));
    if (j.contains("vision_embed_dim"))
        c.vision_embed_dim = static_cast<int>(uint(j["vision_embed_dim"], "model.vision_embed_dim"));
    if (j.contains("tabular_hidden")) c.tabular_hidden = parse_widths(j["tabular_hidden"], "model.tabular_hidden");
    if (j.contains("tabular_embed_dim"))
        c.tabular_embed_dim = static_cast<int>(uint(j["tabular_embed_dim"], "model.tabular_embed_dim"));
    if (j.contains("fusion_hidden")) c.fusion_hidden = parse_widths(j["fusion_hidden"], "model.fusion_hidden");
    if (j.contains("vision_activation"))
        c.vision_activation = parse_activation(str(j["vision_activation"], "model.vision_activation"), "model.vision_activation");
    if (j.contains("tabular_activation"))
        c.tabular_activation = parse_activation(str(j["tabular_activation"], "model.tabular_activation"), "model.tabular_activation");
    if (j.contains("fusion_activation"))
        c.fusion_activation = parse_activation(str(j["fusion_activation"], "model.fusion_activation"), "model.fusion_activation");
    if (j.contains("input_shape")) c.input_shape = parse_dims(j["input_shape"], "model.input_shape");
    if (j.contains("init_seed")) c.init_seed = uint(j["init_seed"], "model.init_seed");
}

inline Json to_json_section(const ModelConfig& c) {
    return Json{{"vision_channels", c.vision_channels},
                {"blocks_per_stage", c.blocks_per_stage},
                {"vision_embed_dim", c.vision_embed_dim},
                {"tabular_hidden", c.tabular_hidden},
                {"tabular_embed_dim", c.tabular_embed_dim},
                {"fusion_hidden", c.fusion_hidden},
                {"vision_activation", to_string(c.vision_activation)},
                {"tabular_activation", to_string(c.tabular_activation)},
                {"fusion_activation", to_string(c.fusion_activation)},
                {"input_shape", {c.input_shape[0], c.input_shape[1], c.input_shape[2]}},
                {"init_seed", c.init_seed}};
}

// The full model serialization (variant and task included) for checkpoints.
inline Json model_to_checkpoint_json(const ModelConfig& c) {
    Json j = to_json_section(c);
    j["task"] = to_string(c.task);
    j["modality"] = to_string(c.modality);
    return j;
}

inline ModelConfig model_from_checkpoint_json(const Json& j) {
    using namespace cfg_detail;
    ModelConfig c;
    Json arch = j;
    arch.erase("task");
    arch.erase("modality");
    from_json_section(arch, c);
    c.task = parse_task(str(j.at("task"), "checkpoint.task"), "checkpoint.task");
    c.modality = parse_modality(str(j.at("modality"), "checkpoint.modality"), "checkpoint.modality");
    return c;
}

inline void from_json_section(const Json& j, TrainConfig& c) {
    using namespace cfg_detail;
    expect_keys(j, "train", {"epochs", "batch_size", "learning_rate", "momentum", "seed"});
    if (j.contains("epochs")) c.epochs = static_cast<std::size_t>(uint(j["epochs"], "train.epochs"));
    if (j.contains("batch_size"))
        c.batch_size = static_cast<std::size_t>(uint(j["batch_size"], "train.batch_size"));
    if (j.contains("learning_rate")) c.learning_rate = num(j["learning_rate"], "train.learning_rate");
    if (j.contains("momentum")) c.momentum = num(j["momentum"], "train.momentum");
    if (j.contains("seed")) c.seed = uint(j["seed"], "train.seed");
}

inline Json to_json_section(const TrainConfig& c) {
    return Json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"momentum", c.momentum},
                {"seed", c.seed}};
}

inline void from_json_section(const Json& j, OcclusionConfig& c) {
    using namespace cfg_detail;
    expect_keys(j, "occlusion", {"patch", "stride", "fill"});
    if (j.contains("patch")) c.patch = static_cast<std::uint32_t>(uint(j["patch"], "occlusion.patch"));
    if (j.contains("stride")) c.stride = static_cast<std::uint32_t>(uint(j["stride"], "occlusion.stride"));
    if (j.contains("fill")) c.fill = parse_fill(str(j["fill"], "occlusion.fill"), "occlusion.fill");
}

inline Json to_json_section(const OcclusionConfig& c) {
    return Json{{"patch", c.patch}, {"stride", c.stride}, {"fill", to_string(c.fill)}};
}

inline void from_json_section(const Json& j, PathsConfig& c) {
    using namespace cfg_detail;
    expect_keys(j, "paths", {"data_dir", "model_dir", "report_dir"});
    if (j.contains("data_dir")) c.data_dir = str(j["data_dir"], "paths.data_dir");
    if (j.contains("model_dir")) c.model_dir = str(j["model_dir"], "paths.model_dir");
    if (j.contains("report_dir")) c.report_dir = str(j["report_dir"], "paths.report_dir");
}

inline Json to_json_section(const PathsConfig& c) {
    return Json{{"data_dir", c.data_dir}, {"model_dir", c.model_dir}, {"report_dir", c.report_dir}};
}

inline void from_json_section(const Json& j, RunSection& c) {
    using namespace cfg_detail;
    expect_keys(j, "run", {"variant", "task", "beta"});
    if (j.contains("variant")) c.variant = parse_modality(str(j["variant"], "run.variant"), "run.variant");
    if (j.contains("task")) c.task = parse_task(str(j["task"], "run.task"), "run.task");
    if (j.contains("beta")) c.beta = num(j["beta"], "run.beta");
}

inline Json to_json_section(const RunSection& c) {
    return Json{{"variant", to_string(c.variant)}, {"task", to_string(c.task)}, {"beta", c.beta}};
}

inline RunConfig config_from_json(const Json& j) {
    cfg_detail::expect_keys(j, "",
                            {"synth", "select", "model", "train", "occlusion", "paths", "run"});
    RunConfig c;
    if (j.contains("synth")) from_json_section(j["synth"], c.synth);
    if (j.contains("select")) from_json_section(j["select"], c.select);
    if (j.contains("model")) from_json_section(j["model"], c.model);
    if (j.contains("train")) from_json_section(j["train"], c.train);
    if (j.contains("occlusion")) from_json_section(j["occlusion"], c.occlusion);
    if (j.contains("paths")) from_json_section(j["paths"], c.paths);
    if (j.contains("run")) from_json_section(j["run"], c.run);
    c.finalize();
    return c;
}

// Canonical form: sections in fixed order, keys sorted by the JSON library.
inline Json config_to_json(const RunConfig& c) {
    return Json{{"synth", to_json_section(c.synth)},
                {"select", to_json_section(c.select)},
                {"model", to_json_section(c.model)},
                {"train", to_json_section(c.train)},
                {"occlusion", to_json_section(c.occlusion)},
                {"paths", to_json_section(c.paths)},
                {"run", to_json_section(c.run)}};
}

// Applies one `--set section.key=value` override onto the raw JSON tree.
inline void apply_override(Json& root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw config_error("override must have the form section.key=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);

    Json* node = &root;
    std::size_t begin = 0;
    while (true) {
        const std::size_t dot = path.find('.', begin);
        const std::string part = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
        if (part.empty()) throw config_error("bad override path: " + path);
        if (dot == std::string::npos) {
            Json parsed = Json::parse(value, nullptr, false);
            (*node)[part] = parsed.is_discarded() ? Json(value) : parsed;
            return;
        }
        node = &(*node)[part];
        begin = dot + 1;
    }
}

inline RunConfig parse_config(const std::string& path,
                              const std::vector<std::string>& overrides = {}) {
    std::ifstream is(path);
    if (!is) throw config_error("cannot open config file: " + path);
    Json j;
    try {
        j = Json::parse(is);
    } catch (const Json::parse_error& e) {
        throw config_error("config parse error in " + path + ": " + e.what());
    }
    for (const auto& ov : overrides) apply_override(j, ov);
    return config_from_json(j);
}

// FNV-1a 64-bit over the canonical section dump; stable across runs.
inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Per-section config hashes. Paths never participate (artifacts may move);
// the run section is hashed separately so cross-variant consolidation can
// check only the shared sections.
struct SectionHashes {
    std::string synth, select, model, train, occlusion, run;

    static SectionHashes of(const RunConfig& c) {
        SectionHashes h;
        h.synth = fnv1a_hex(to_json_section(c.synth).dump());
        h.select = fnv1a_hex(to_json_section(c.select).dump());
        h.model = fnv1a_hex(to_json_section(c.model).dump());
        h.train = fnv1a_hex(to_json_section(c.train).dump());
        h.occlusion = fnv1a_hex(to_json_section(c.occlusion).dump());
        h.run = fnv1a_hex(to_json_section(c.run).dump());
        return h;
    }

    Json to_json() const {
        return Json{{"synth", synth}, {"select", select},       {"model", model},
                    {"train", train}, {"occlusion", occlusion}, {"run", run}};
    }
};

}  // namespace relapse
