#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "relapse/config.hpp"

using namespace relapse;
namespace fs = std::filesystem;

namespace {

const char* cli_path() { return RELAPSE_CLI_PATH; }

int run_cli(const std::string& args) {
    const fs::path log = fs::temp_directory_path() / "relapse_cli_test.log";
    const std::string cmd =
        std::string(cli_path()) + " " + args + " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (status != 0) {
        std::ifstream is(log);
        std::ostringstream ss;
        ss << is.rdbuf();
        UNSCOPED_INFO("cli output:\n" << ss.str());
    }
    return status;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

struct Workspace {
    fs::path root;

    explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / name) {
        fs::remove_all(root);
        fs::create_directories(root);
        Json cfg{
            {"synth",
             {{"n_patients", 36},
              {"volume_shape", {8, 8, 8}},
              {"frac_unknown_rfs", 0.2},
              {"rfs_noise_sd", 150.0},
              {"seed", 5}}},
            {"model",
             {{"vision_channels", {2, 3}},
              {"vision_embed_dim", 4},
              {"tabular_hidden", {6}},
              {"tabular_embed_dim", 3},
              {"fusion_hidden", {4}},
              {"input_shape", {8, 8, 8}}}},
            {"train", {{"epochs", 2}, {"batch_size", 8}, {"learning_rate", 0.01}, {"seed", 3}}},
            {"occlusion", {{"patch", 4}, {"stride", 2}}},
            {"paths",
             {{"data_dir", (root / "data").string()},
              {"model_dir", (root / "models").string()},
              {"report_dir", (root / "reports").string()}}}};
        std::ofstream os(root / "config.json");
        os << cfg.dump(2);
    }
    ~Workspace() { fs::remove_all(root); }

    std::string cfg() const { return "--config " + (root / "config.json").string(); }
};

}  // namespace

TEST_CASE("full pipeline runs end to end and is reproducible") {
    Workspace ws("relapse_pipeline_e2e");

    REQUIRE(run_cli("synth " + ws.cfg()) == 0);
    REQUIRE(fs::exists(ws.root / "data" / "manifest.csv"));
    REQUIRE(fs::exists(ws.root / "data" / "volumes" / "p00000.vol"));

    for (const std::string stage : {"train", "sweep", "eval", "explain"}) {
        INFO("stage " << stage << " classify");
        REQUIRE(run_cli(stage + " " + ws.cfg() + " --task classify --variant multimodal") == 0);
    }
    for (const std::string stage : {"train", "sweep", "eval"}) {
        INFO("stage " << stage << " tabular classify");
        REQUIRE(run_cli(stage + " " + ws.cfg() + " --task classify --variant tabular_only") == 0);
    }
    for (const std::string stage : {"train", "sweep", "eval", "explain"}) {
        INFO("stage " << stage << " regress");
        REQUIRE(run_cli(stage + " " + ws.cfg() + " --task regress --variant multimodal") == 0);
    }
    REQUIRE(run_cli("report " + ws.cfg()) == 0);

    const fs::path reports = ws.root / "reports";
    REQUIRE(fs::exists(reports / "eval_classify_multimodal.txt"));
    REQUIRE(fs::exists(reports / "eval_regress_multimodal.txt"));
    REQUIRE(fs::exists(reports / "table_classify.csv"));
    REQUIRE(fs::exists(reports / "table_regress.csv"));
    REQUIRE(fs::exists(reports / "table_contribution_classify_absolute.csv"));
    REQUIRE(fs::exists(reports / "contribution_regress_multimodal.csv"));

    const fs::path models = ws.root / "models";
    REQUIRE(fs::exists(models / "classify_multimodal" / "model.ckpt"));
    REQUIRE(fs::exists(models / "classify_multimodal" / "history.csv"));
    REQUIRE(fs::exists(models / "regress_multimodal" / "sweep_curve.csv"));

    // regression history carries the imputation columns
    {
        std::ifstream is(models / "regress_multimodal" / "history.csv");
        std::string header, row;
        std::getline(is, header);
        REQUIRE(header == "epoch,loss,imputed_rfs_value,mean_predicted_rfs_known_relapses");
        std::getline(is, row);
        REQUIRE(std::count(row.begin(), row.end(), ',') == 3);
        REQUIRE(row.back() != ','); // imputation fields populated for regress
    }

    // saliency artifacts for at least the PGM panels of one record, when TPs exist
    // (not guaranteed on a 2-epoch model; directory must exist either way)
    REQUIRE(fs::exists(reports / "saliency_regress_multimodal"));

    // byte-identical reruns
    const std::string eval_regress = slurp(reports / "eval_regress_multimodal.txt");
    const std::string history = slurp(models / "regress_multimodal" / "history.csv");
    const std::string curve = slurp(models / "regress_multimodal" / "sweep_curve.csv");
    const std::string table = slurp(reports / "table_regress.csv");

    for (const std::string stage : {"train", "sweep", "eval"})
        REQUIRE(run_cli(stage + " " + ws.cfg() + " --task regress --variant multimodal") == 0);
    REQUIRE(run_cli("report " + ws.cfg()) == 0);

    REQUIRE(slurp(reports / "eval_regress_multimodal.txt") == eval_regress);
    REQUIRE(slurp(models / "regress_multimodal" / "history.csv") == history);
    REQUIRE(slurp(models / "regress_multimodal" / "sweep_curve.csv") == curve);
    REQUIRE(slurp(reports / "table_regress.csv") == table);
}

TEST_CASE("eval before sweep fails with a prerequisite error") {
    Workspace ws("relapse_pipeline_prereq");
    REQUIRE(run_cli("synth " + ws.cfg()) == 0);
    REQUIRE(run_cli("train " + ws.cfg()) == 0);
    REQUIRE(run_cli("eval " + ws.cfg()) != 0);
    REQUIRE(run_cli("sweep " + ws.cfg()) == 0);
    REQUIRE(run_cli("eval " + ws.cfg()) == 0);
}

TEST_CASE("train before synth fails") {
    Workspace ws("relapse_pipeline_nodata");
    REQUIRE(run_cli("train " + ws.cfg()) != 0);
}

TEST_CASE("sweep refuses the test split") {
    Workspace ws("relapse_pipeline_leak");
    REQUIRE(run_cli("synth " + ws.cfg()) == 0);
    REQUIRE(run_cli("train " + ws.cfg()) == 0);
    REQUIRE(run_cli("sweep " + ws.cfg() + " --split test") != 0);
    REQUIRE(run_cli("sweep " + ws.cfg() + " --split train") == 0);
}

TEST_CASE("config hash mismatches across stages are rejected") {
    Workspace ws("relapse_pipeline_hash");
    REQUIRE(run_cli("synth " + ws.cfg()) == 0);
    // the cohort on disk was produced by a different synth config
    REQUIRE(run_cli("train " + ws.cfg() + " --seed-synth 77") != 0);
    REQUIRE(run_cli("train " + ws.cfg()) == 0);
    REQUIRE(run_cli("sweep " + ws.cfg()) == 0);
    // threshold chosen under beta=1 cannot feed a beta=2 evaluation run
    REQUIRE(run_cli("eval " + ws.cfg() + " --beta 2") != 0);
    REQUIRE(run_cli("eval " + ws.cfg()) == 0);
}

TEST_CASE("unknown config keys abort any stage") {
    Workspace ws("relapse_pipeline_badkey");
    REQUIRE(run_cli("synth " + ws.cfg() + " --set synth.kapa_low=1") != 0);
}
