#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include "mpf/experiment.hpp"
#include "mpf/scenario.hpp"

using namespace mpf;
namespace fs = std::filesystem;

namespace {

const std::string kScenarios = MPF_SCENARIO_DIR;
const std::string kCli = MPF_CLI_PATH;

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("mpf_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(d);
    return d;
}

int run_cli(const std::string& args, std::string* out = nullptr) {
    const fs::path log = fs::temp_directory_path() / ("mpf_cli_" + std::to_string(::getpid()) + ".log");
    const int raw = std::system((kCli + " " + args + " > " + log.string() + " 2>&1").c_str());
    if (out) {
        std::ifstream in(log);
        std::stringstream buf;
        buf << in.rdbuf();
        *out = buf.str();
    }
    fs::remove(log);
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

}  // namespace

TEST(Scenario, ShippedScenariosParseAndRoundTrip) {
    for (const auto& entry : fs::directory_iterator(kScenarios)) {
        if (entry.path().extension() != ".json") continue;
        const Scenario s = parse_scenario(entry.path().string());
        const Scenario back = parse_scenario_text(serialize_scenario(s));
        EXPECT_TRUE(back == s) << entry.path();
    }
}

TEST(Scenario, MinimalScenarioMaterializesDefaults) {
    const Scenario s = parse_scenario(kScenarios + "/minimal.json");
    EXPECT_EQ(s.basis.size(), 2u);
    EXPECT_EQ(s.basis[0].mean, -1.0);
    EXPECT_EQ(s.basis[1].mean, 1.0);
    EXPECT_EQ(s.theta0.size(), 1u);
    EXPECT_GT(s.horizon, 0.0);
    EXPECT_EQ(s.engines, std::vector<std::string>{"mpf"});
}

TEST(Scenario, ValidationMessagesNameTheField) {
    auto expect_error = [](const std::string& text, const std::string& needle) {
        try {
            parse_scenario_text(text);
            ADD_FAILURE() << "no error for " << text;
        } catch (const ValidationError& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };
    const std::string basis = R"("basis": {"preset": "symmetric-pair", "offset": 1.0, "variance": 1.0})";
    expect_error(R"({"schema_version": 2, )" + basis + "}", "schema_version");
    expect_error(R"({"schema_version": 1, "theta0": [0.3, 0.3], )" + basis + "}", "theta0");
    expect_error(R"({"schema_version": 1, "engines": ["mpf", "telepathy"], )" + basis + "}", "engines[1]");
    expect_error(R"({"schema_version": 1, "preset": "cubic-sensor", "observations": {"sensor": "cubic"},
                     "engines": ["mpf", "kalman"], )" + basis + "}", "kalman");
    expect_error(R"({"schema_version": 1, "unknown_key": 1, )" + basis + "}", "unknown_key");
    expect_error("{\"schema_version\": 1,\n  \"basis\": [", "line 2");
}

TEST(Scenario, ExecutionIsDeterministic) {
    Scenario s = parse_scenario(kScenarios + "/linear-discrete.json");
    s.seeds = {4};
    s.engines = {"mpf", "kalman", "particle"};
    s.particles.count = 2000;
    const RunReport a = execute_scenario(s);
    const RunReport b = execute_scenario(s);
    ASSERT_TRUE(a.all_ok());
    for (const auto& r : a.runs) {
        EXPECT_EQ(trajectory_csv(r.traj), trajectory_csv(b.find(r.engine, r.seed)->traj)) << r.engine;
    }
}

TEST(Scenario, CsvRoundTrip) {
    Scenario s = parse_scenario(kScenarios + "/linear-discrete.json");
    s.seeds = {1};
    s.engines = {"mpf", "kalman"};
    const RunReport rep = execute_scenario(s);
    const fs::path dir = fresh_dir("roundtrip");
    write_report(rep, dir);
    const FilterTrajectory back = read_trajectory_csv(dir / "mpf.csv");
    const FilterTrajectory& orig = rep.find("mpf", 1)->traj;
    ASSERT_EQ(back.size(), orig.size());
    for (std::size_t i = 0; i < orig.size(); ++i) {
        EXPECT_DOUBLE_EQ(back.t[i], orig.t[i]);
        EXPECT_DOUBLE_EQ(back.mean[i], orig.mean[i]);
        EXPECT_DOUBLE_EQ(back.variance[i], orig.variance[i]);
    }
    EXPECT_EQ(slurp(dir / "mpf.csv").substr(0, std::string(kCsvHeader).size()), kCsvHeader);
    fs::remove_all(dir);
}

TEST(Cli, RunWritesOneCsvPerEngineAndCompares) {
    const fs::path dir = fresh_dir("cli_run");
    fs::create_directories(dir);
    write(dir / "s.json", R"({"schema_version": 1, "name": "two", "preset": "linear-ou",
        "observations": {"mode": "discrete", "interval": 0.1, "count": 5},
        "basis": {"preset": "symmetric-pair", "offset": 1.0, "variance": 1.0},
        "engines": ["mpf", "kalman"]})");
    std::string out;
    ASSERT_EQ(run_cli("run " + (dir / "s.json").string() + " -o " + (dir / "out").string(), &out), 0) << out;
    int csvs = 0;
    for (const auto& e : fs::directory_iterator(dir / "out")) {
        const auto name = e.path().filename().string();
        if (e.path().extension() == ".csv" && name != "summary.csv") ++csvs;
    }
    EXPECT_EQ(csvs, 2);
    EXPECT_TRUE(fs::exists(dir / "out" / "summary.csv"));
    EXPECT_TRUE(fs::exists(dir / "out" / "report.json"));
    const std::string first = slurp(dir / "out" / "mpf.csv");
    ASSERT_EQ(run_cli("run " + (dir / "s.json").string() + " -o " + (dir / "again").string()), 0);
    EXPECT_EQ(slurp(dir / "again" / "mpf.csv"), first);

    ASSERT_EQ(run_cli("compare " + (dir / "out").string(), &out), 0) << out;
    EXPECT_NE(out.find("kalman"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "out" / "compare.csv"));
    fs::remove_all(dir);
}

TEST(Cli, CompareOfIdenticalEnginesIsZero) {
    const fs::path dir = fresh_dir("cli_self");
    Scenario s = parse_scenario(kScenarios + "/minimal.json");
    RunReport rep = execute_scenario(s);
    EngineRun copy = rep.runs.front();
    copy.engine = "kalman";
    copy.traj.engine = "kalman";
    rep.runs.push_back(copy);
    write_report(rep, dir);
    const auto cmp = compare_directory(dir);
    ASSERT_EQ(cmp.pairs.size(), 1u);
    EXPECT_EQ(cmp.pairs[0].max_abs_mean, 0.0);
    EXPECT_EQ(cmp.pairs[0].max_abs_variance, 0.0);
    fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
    const fs::path dir = fresh_dir("cli_codes");
    fs::create_directories(dir);
    std::string out;
    EXPECT_EQ(run_cli("run " + (dir / "missing.json").string()), 2);
    write(dir / "bad.json", R"({"schema_version": 1, "theta0": [0.2, 0.2],
        "basis": {"preset": "symmetric-pair", "offset": 1.0, "variance": 1.0}})");
    EXPECT_EQ(run_cli("run " + (dir / "bad.json").string() + " -o " + (dir / "o").string(), &out), 2);
    EXPECT_NE(out.find("theta0"), std::string::npos) << out;
    EXPECT_EQ(run_cli("frobnicate"), 2);
    EXPECT_EQ(run_cli("metrics --coords expectation --point 1,-1"), 2);
    EXPECT_EQ(run_cli("compare " + dir.string()), 2);
    // a manifold exit is a run failure, not a validation error (seed 1 of this scenario leaves the simplex)
    auto j = nlohmann::ordered_json::parse(slurp(kScenarios + "/reference-discrete.json"));
    j["seeds"] = nlohmann::ordered_json::array({1});
    j["engines"] = nlohmann::ordered_json::array({"mpf"});
    write(dir / "exit.json", j.dump());
    EXPECT_EQ(run_cli("run " + (dir / "exit.json").string() + " -o " + (dir / "e").string(), &out), 3) << out;
    EXPECT_TRUE(fs::exists(dir / "e" / "summary.csv"));
    fs::remove_all(dir);
}

TEST(Cli, MetricsPrintsBothCharts) {
    std::string out;
    ASSERT_EQ(run_cli("metrics --coords expectation --point 0.5,2", &out), 0) << out;
    EXPECT_NE(out.find("fisher, canonical"), std::string::npos);
    EXPECT_NE(out.find("l2, expectation"), std::string::npos);
}
