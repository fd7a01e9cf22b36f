#include <gtest/gtest.h>

#include <cstdio>
#include <sys/wait.h>

#include "support.hpp"

using namespace ddaig;
using namespace testing_support;

namespace {

struct CliRun {
    int status = -1;
    std::string output;  // stdout and stderr
};

CliRun run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + DDAIG_CLI_PATH + std::string(" ") + args + " 2>&1";
    CliRun r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
    const int st = pclose(p);
    r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

const char* kRunConfig = R"({"train": {"batch_size": 8, "max_iters": 6, "warmup_iters": 2,
  "classifier": {"conv_channels": 4, "num_conv_blocks": 2},
  "dotnet": {"base_channels": 4, "num_res_blocks": 1, "stn_channels": 4}},
 "eval": {"seeds": [0, 1]}})";

// One generated dataset and run config shared by every test in this file.
struct Workspace {
    fs::path dir, data, config;
    Workspace() {
        dir = temp_dir("cli");
        data = dir / "data";
        config = dir / "run.json";
        write_text_file(dir / "spec.json", R"({"images_per_class_per_domain": 4, "image_shape": [3, 16, 16]})");
        write_text_file(config, kRunConfig);
        const CliRun r = run("generate-data --spec " + (dir / "spec.json").string() + " --out " + data.string() +
                          " --seed 21");
        if (r.status != 0) throw Error("generate-data failed: " + r.output);
    }
    std::string data_cfg() const { return " --data " + data.string() + " --config " + config.string(); }
};

const Workspace& ws() {
    static const Workspace w;
    return w;
}

}  // namespace

TEST(Cli, GenerateDataPrintsCountsAndRecordsSeedOverride) {
    const auto m = json::parse(read_text_file(ws().data / "manifest.json"));
    EXPECT_EQ(m.at("seed"), 21);
    const CliRun again = run("generate-data --out " + ws().data.string());
    EXPECT_NE(again.status, 0);
    const auto dir = temp_dir("cli_gen");
    const CliRun r = run("generate-data --spec " + (ws().dir / "spec.json").string() + " --out " + (dir / "d").string());
    EXPECT_EQ(r.status, 0) << r.output;
    EXPECT_NE(r.output.find("train: 120 images (clean 30"), std::string::npos) << r.output;
}

TEST(Cli, TrainWritesCheckpointsLossLogAndConfigEcho) {
    const auto out = temp_dir("cli_train");
    const CliRun r = run("train --method ddaig --holdout clean --lambda 0.7 --max-iters 12 --out " + out.string() + ws().data_cfg());
    ASSERT_EQ(r.status, 0) << r.output;
    EXPECT_TRUE(fs::exists(out / "checkpoints" / "final.ckpt"));
    EXPECT_TRUE(fs::exists(out / "checkpoints" / "epoch_001.ckpt"));
    const auto echo = json::parse(read_text_file(out / "train_config.json"));
    EXPECT_EQ(echo.at("train").at("lambda"), 0.7);
    EXPECT_EQ(echo.at("held_out"), "clean");
    std::ifstream log(out / "logs" / "loss.jsonl");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(log, line)) {
        EXPECT_TRUE(json::parse(line).contains("J_L"));
        ++lines;
    }
    EXPECT_EQ(lines, 12u);
}

TEST(Cli, TrainedCheckpointMatchesInProcessTraining) {
    const auto out = temp_dir("cli_same");
    ASSERT_EQ(run("train --method crossgrad --holdout patches --seed 4 --out " + out.string() + ws().data_cfg()).status,
              0);
    auto cfg = train_config_from_json(json::parse(kRunConfig).at("train"));
    cfg.seed = 4;
    const auto view = make_source_view(load_image_folder(ws().data), "patches");
    auto res = train<float>(view.sources, Method::crossgrad, cfg);
    EXPECT_EQ(load_checkpoint(out / "checkpoints" / "final.ckpt").tensors, res.trainer.checkpoint().tensors);
}

TEST(Cli, DataRootFallsBackToEnvironment) {
    const auto out = temp_dir("cli_env");
    const CliRun r = run("train --method vanilla --holdout clutter --config " + ws().config.string() + " --out " +
                          out.string(),
                      "DDAIG_DATA_ROOT=" + ws().data.string());
    EXPECT_EQ(r.status, 0) << r.output;
    const CliRun none = run("train --method vanilla --out " + out.string(), "DDAIG_DATA_ROOT=");
    EXPECT_NE(none.status, 0);
    EXPECT_NE(none.output.find("DDAIG_DATA_ROOT"), std::string::npos);
}

TEST(Cli, BadInputsExitNonzeroWithAMessage) {
    const auto out = temp_dir("cli_bad");
    const CliRun holdout = run("train --holdout mars --out " + out.string() + ws().data_cfg());
    EXPECT_NE(holdout.status, 0);
    EXPECT_NE(holdout.output.find("mars"), std::string::npos);
    write_text_file(out / "typo.json", R"({"train": {"lamda": 0.3}})");
    const CliRun typo = run("train --data " + ws().data.string() + " --config " + (out / "typo.json").string() +
                         " --out " + out.string());
    EXPECT_NE(typo.status, 0);
    EXPECT_NE(typo.output.find("lamda"), std::string::npos);
    EXPECT_NE(run("train --method sgd --out " + out.string() + ws().data_cfg()).status, 0);
    EXPECT_NE(run("eval --suite nope --out " + out.string() + ws().data_cfg()).status, 0);
    const CliRun missing = run("eval --checkpoint " + (out / "none.ckpt").string() + " --out " + out.string() +
                            " --data " + ws().data.string());
    EXPECT_NE(missing.status, 0);
    EXPECT_NE(missing.output.find("does not exist"), std::string::npos);
}

TEST(Cli, DivergedTrainingExitsNonzero) {
    const auto out = temp_dir("cli_diverge");
    const CliRun r = run("train --method vanilla --holdout clean --eta 1e30 --out " + out.string() + ws().data_cfg());
    EXPECT_NE(r.status, 0);
    EXPECT_TRUE(fs::exists(out / "logs" / "loss.jsonl"));
}

TEST(Cli, EvalSuiteWritesJsonAndTextReports) {
    const auto out = temp_dir("cli_eval");
    const CliRun r = run("eval --suite lambda-sweep --lambdas 0.5 --jobs 2 --out " + out.string() + ws().data_cfg());
    ASSERT_EQ(r.status, 0) << r.output;
    EXPECT_NE(r.output.find("lambda=0.5"), std::string::npos) << r.output;
    const auto rep = json::parse(read_text_file(out / "reports" / "lambda-sweep.json"));
    EXPECT_EQ(rep.at("rows").size(), 2u);
    EXPECT_EQ(rep.at("config").at("seeds"), json::array({0, 1}));
    EXPECT_NE(r.output.find(read_text_file(out / "reports" / "lambda-sweep.txt")), std::string::npos);
}

TEST(Cli, EvalOfACheckpointScoresItsHeldOutDomain) {
    const auto out = temp_dir("cli_ckeval");
    ASSERT_EQ(run("train --method vanilla --holdout texture --out " + out.string() + ws().data_cfg()).status, 0);
    const CliRun r = run("eval --checkpoint " + (out / "checkpoints" / "final.ckpt").string() + " --angles 0,30 --data " +
                      ws().data.string() + " --out " + out.string());
    ASSERT_EQ(r.status, 0) << r.output;
    const auto rep = json::parse(read_text_file(out / "reports" / "checkpoint_eval.json"));
    EXPECT_EQ(rep.at("held_out_domain"), "texture");
    EXPECT_EQ(rep.at("results").size(), 2u);
}

TEST(Cli, ExportsNeedTheRightKindOfCheckpoint) {
    const auto out = temp_dir("cli_export");
    ASSERT_EQ(run("train --method ddaig --holdout clean --out " + out.string() + ws().data_cfg()).status, 0);
    const std::string ck = " --checkpoint " + (out / "checkpoints" / "final.ckpt").string() + " --data " +
                           ws().data.string() + " --out " + out.string();
    const CliRun tri = run("export --kind triptych --n 3" + ck);
    ASSERT_EQ(tri.status, 0) << tri.output;
    EXPECT_TRUE(fs::exists(out / "viz" / "triptych" / "triptych_0002.png"));
    EXPECT_TRUE(fs::exists(out / "viz" / "export_triptych_config.json"));
    ASSERT_EQ(run("export --kind features" + ck).status, 0);
    EXPECT_TRUE(fs::exists(out / "viz" / "features.csv"));
    const CliRun stn = run("export --kind stn" + ck);
    EXPECT_NE(stn.status, 0);
    EXPECT_NE(stn.output.find("--stn"), std::string::npos) << stn.output;
}
