#include "test_util.hpp"
#include "vpgo/config.hpp"
#include "vpgo/data.hpp"
#include "vpgo/training.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace vpgo;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args, const fs::path& dir) {
    const auto log = dir / "cli_output.txt";
    const auto cmd = std::string(VPGO_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

config::Json read_json(const fs::path& p) {
    std::ifstream in(p);
    return config::Json::parse(in);
}

void write_tiny_config(const fs::path& path, int steps) {
    config::ExperimentConfig c;
    c.model = test::tiny_config();
    c.train.context = 2;
    c.train.horizon = 3;
    c.train.batch_size = 2;
    c.train.steps = steps;
    c.train.lr = 1e-3;
    std::ofstream out(path);
    out << config::to_json(c).dump(2);
}

}  // namespace

TEST(Cli, VersionAndUsageErrors) {
    const auto dir = test::temp_dir("cli_usage");
    const auto v = run("--version", dir);
    EXPECT_EQ(v.code, 0);
    EXPECT_NE(v.out.find("0."), std::string::npos);
    EXPECT_EQ(run("", dir).code, 2);
    EXPECT_EQ(run("gen-data", dir).code, 2);
    EXPECT_EQ(run("gen-data --out-dir x --grasp-success-prob 2", dir).code, 2);
    EXPECT_EQ(run("nonsense", dir).code, 2);
}

TEST(Cli, GenDataWritesTrajectoriesAndManifest) {
    const auto dir = test::temp_dir("cli_gen");
    const auto r = run("gen-data --seed 4 --n-traj 3 --frames 9 --out-dir " + (dir / "d").string(), dir);
    ASSERT_EQ(r.code, 0) << r.out;
    const auto loaded = data::load_directory(dir / "d");
    ASSERT_EQ(loaded.size(), 3u);
    EXPECT_EQ(loaded[0].length(), 9);
    const auto expected = data::generate_synthetic(4, 3, 9, data::SceneConfig{});
    EXPECT_TRUE(torch::equal(loaded[2].frames, expected[2].frames));
    const auto m = read_json(dir / "d" / "manifest.json");
    EXPECT_EQ(m["command"], "gen-data");
    EXPECT_EQ(m["seed"], 4);
    EXPECT_TRUE(m.contains("version"));
    EXPECT_TRUE(m.contains("argv"));
}

TEST(Cli, DecomposePrintsFivePhases) {
    const auto dir = test::temp_dir("cli_decompose");
    const auto r = run("decompose --grasp 0.3,0.1,0.02 --drop -0.2,0.15,0.02 --manifest " +
                           (dir / "m.json").string(),
                       dir);
    ASSERT_EQ(r.code, 0) << r.out;
    for (const char* phase : {"ApproachTop", "DescendAndClose", "Lift", "Transport", "OpenAndDrop"}) {
        EXPECT_NE(r.out.find(phase), std::string::npos) << phase;
    }
    EXPECT_TRUE(fs::exists(dir / "m.json"));
    const auto bad = run("decompose --grasp 0.3,0.1 --drop 0,0,0", dir);
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.out.find("--grasp"), std::string::npos);
    EXPECT_EQ(run("decompose --grasp 0,0,0.3 --drop 0,0,0 --top 0.25", dir).code, 1);
}

TEST(Cli, ConfigErrorsExitWithTwoAndNameTheKey) {
    const auto dir = test::temp_dir("cli_config");
    ASSERT_EQ(run("gen-data --n-traj 2 --frames 6 --out-dir " + (dir / "d").string(), dir).code, 0);
    std::ofstream(dir / "bad.json") << R"({"model": {"latent_channels": 0}})";
    const auto r = run("train --config " + (dir / "bad.json").string() + " --data-dir " + (dir / "d").string() +
                           " --out-dir " + (dir / "o").string(),
                       dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("model.latent_channels"), std::string::npos) << r.out;
    const auto missing = run("train --out-dir " + (dir / "o2").string() + " --data-dir " + (dir / "nope").string(), dir);
    EXPECT_EQ(missing.code, 2);
    EXPECT_NE(missing.out.find("--data-dir"), std::string::npos);
}

TEST(Cli, TrainEvalPredictAndFineTune) {
    const auto dir = test::temp_dir("cli_pipeline");
    ASSERT_EQ(run("gen-data --seed 1 --n-traj 2 --frames 6 --out-dir " + (dir / "a").string(), dir).code, 0);
    ASSERT_EQ(run("gen-data --seed 2 --n-traj 2 --frames 6 --out-dir " + (dir / "b").string(), dir).code, 0);
    write_tiny_config(dir / "c.json", 3);

    auto r = run("train --config " + (dir / "c.json").string() + " --data-dir " + (dir / "a").string() +
                     " --out-dir " + (dir / "run").string(),
                 dir);
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint.h5"));
    EXPECT_TRUE(fs::exists(dir / "run" / "loss.csv"));
    EXPECT_EQ(read_json(dir / "run" / "manifest.json")["command"], "train");
    EXPECT_EQ(read_json(dir / "run" / "config.json")["train"]["steps"], 3);

    r = run("eval --checkpoint " + (dir / "run" / "checkpoint.h5").string() + " --data-dir " + (dir / "b").string() +
                " --n-samples 2 --horizon 3 --report-out " + (dir / "eval" / "report.json").string(),
            dir);
    ASSERT_EQ(r.code, 0) << r.out;
    const auto report = read_json(dir / "eval" / "report.json");
    EXPECT_EQ(report["protocol"]["n_samples"], 2);
    EXPECT_TRUE(fs::exists(dir / "eval" / "report.manifest.json"));
    EXPECT_TRUE(fs::exists(dir / "eval" / "report.timesteps.csv"));

    r = run("predict --checkpoint " + (dir / "run" / "checkpoint.h5").string() + " --trajectory " +
                (dir / "b" / "traj_00000.h5").string() + " --n-samples 2 --horizon 3 --out-dir " +
                (dir / "pred").string(),
            dir);
    ASSERT_EQ(r.code, 0) << r.out;
    const auto sample = data::load_trajectory(dir / "pred" / "sample_0001.h5");
    EXPECT_EQ(sample.length(), 5);

    r = run("train --config " + (dir / "c.json").string() + " --data-dir " + (dir / "b").string() +
                " --init-checkpoint " + (dir / "run" / "checkpoint.h5").string() + " --out-dir " +
                (dir / "ft").string() + " --steps 1",
            dir);
    ASSERT_EQ(r.code, 0) << r.out;
    auto donor = training::load_model(dir / "run" / "checkpoint.h5");
    std::ostringstream hex;
    hex << std::hex << training::parameter_checksum(donor);
    EXPECT_NE(r.out.find("start checksum " + hex.str()), std::string::npos) << r.out;
}
