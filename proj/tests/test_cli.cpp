#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <sys/wait.h>

#include "siammot/config.hpp"
#include "siammot/mot_io.hpp"

namespace fs = std::filesystem;
using namespace siammot;

namespace {

class CliTest : public ::testing::Test {
protected:
    fs::path dir;

    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("siammot_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        write("small.json", R"({"scenario": {"preset": "mixed", "frames": 20, "n_objects": 4}, "matcher": "kalman"})");
    }
    void TearDown() override { fs::remove_all(dir); }

    void write(const std::string& name, const std::string& text) const { std::ofstream(dir / name) << text; }

    static std::string read(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        return s.str();
    }

    int run(const std::string& args) const {
        const std::string cmd = std::string(SIAMMOT_CLI_PATH) + " " + args + " > " + (dir / "stdout.txt").string() +
                                " 2> " + (dir / "stderr.txt").string();
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string cfg() const { return (dir / "small.json").string(); }
    std::string stderr_text() const { return read(dir / "stderr.txt"); }
};

}  // namespace

TEST_F(CliTest, SimulateIsByteIdenticalAcrossRuns) {
    ASSERT_EQ(run("simulate --config " + cfg() + " --seed 4 --out " + (dir / "a").string()), 0);
    ASSERT_EQ(run("simulate --config " + cfg() + " --seed 4 --out " + (dir / "b").string()), 0);
    for (const char* f : {"gt.txt", "det.txt", "config.json", "frames/000001.pgm", "frames/000020.pgm"})
        EXPECT_EQ(read(dir / "a" / f), read(dir / "b" / f)) << f;
    EXPECT_FALSE(fs::exists(dir / "a" / "frames" / "000021.pgm"));
    ASSERT_EQ(run("simulate --config " + cfg() + " --seed 5 --out " + (dir / "c").string()), 0);
    EXPECT_NE(read(dir / "a" / "gt.txt"), read(dir / "c" / "gt.txt"));
}

TEST_F(CliTest, OutputsCarryConfigHashAndSeed) {
    ASSERT_EQ(run("simulate --config " + cfg() + " --seed 4 --no-frames --out " + (dir / "a").string()), 0);
    const std::string gt = read(dir / "a" / "gt.txt");
    EXPECT_EQ(gt.rfind("# siammot config_hash=", 0), 0u);
    EXPECT_NE(gt.find("seed=4"), std::string::npos);
    const json side = json::parse(read(dir / "a" / "config.json"));
    EXPECT_EQ(side["seed"], 4);
    EXPECT_NE(gt.find(side["config_hash"].get<std::string>()), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "a" / "frames"));
}

TEST_F(CliTest, TrackWritesResultsAndTiming) {
    ASSERT_EQ(run("track --config " + cfg() + " --seed 1 --out " + (dir / "t").string()), 0);
    const json j = json::parse(read(dir / "t" / "run.json"));
    EXPECT_GT(j["timing"]["fps"].get<double>(), 0.0);
    EXPECT_EQ(j["frames"], 20);
    EXPECT_TRUE(j["metrics"].contains("mota"));
    EXPECT_FALSE(load_mot_file((dir / "t" / "results.txt").string()).empty());
}

TEST_F(CliTest, EvalOfGtAgainstItselfIsPerfect) {
    ASSERT_EQ(run("simulate --config " + cfg() + " --no-frames --out " + (dir / "s").string()), 0);
    const std::string gt = (dir / "s" / "gt.txt").string();
    ASSERT_EQ(run("eval " + gt + " " + gt + " --out " + (dir / "e").string()), 0);
    const json r = json::parse(read(dir / "e" / "report.json"))["report"];
    EXPECT_DOUBLE_EQ(r["mota"].get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(r["idf1"].get<double>(), 1.0);
    EXPECT_TRUE(fs::exists(dir / "e" / "report.csv"));
}

TEST_F(CliTest, MalformedMotFileIsADataErrorWithLineNumber) {
    write("bad.txt", "1,1,0,0,5,5\n2,1,0,0,-5,5\n");
    const std::string bad = (dir / "bad.txt").string();
    EXPECT_EQ(run("eval " + bad + " " + bad + " --out " + (dir / "e").string()), 2);
    EXPECT_NE(stderr_text().find("bad.txt:2"), std::string::npos);
}

TEST_F(CliTest, InvalidConfigIsADataErrorNamingTheField) {
    write("bad.json", R"({"tracker": {"tua": 3}})");
    EXPECT_EQ(run("track --config " + (dir / "bad.json").string()), 2);
    EXPECT_NE(stderr_text().find("tracker.tua"), std::string::npos);
    EXPECT_EQ(run("simulate --preset rainy --out " + (dir / "x").string()), 2);
    EXPECT_NE(stderr_text().find("scenario.preset"), std::string::npos);
}

TEST_F(CliTest, UsageErrorsExitOne) {
    EXPECT_EQ(run(""), 1);
    EXPECT_EQ(run("frobnicate"), 1);
    EXPECT_EQ(run("track --seed notanumber"), 1);
    EXPECT_EQ(run("eval onlyone.txt"), 1);
    EXPECT_EQ(run("--help"), 0);
}

TEST_F(CliTest, UnknownAblationSuiteIsRejected) {
    EXPECT_EQ(run("ablate gamma --config " + cfg()), 2);
    EXPECT_NE(stderr_text().find("suite"), std::string::npos);
}

TEST_F(CliTest, GradcheckPassesAndCatchesAnInjectedFault) {
    EXPECT_EQ(run("gradcheck --trials 10 --out " + (dir / "g").string()), 0);
    EXPECT_NE(read(dir / "g" / "gradcheck.csv").find("focal"), std::string::npos);
    EXPECT_EQ(run("gradcheck --trials 10 --inject-fault"), 2);
    EXPECT_NE(read(dir / "stdout.txt").find("injected_fault,10,"), std::string::npos);
}
