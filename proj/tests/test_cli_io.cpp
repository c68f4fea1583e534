#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "mfgcn/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mfgcn;

namespace {

const fs::path cli = MFGCN_CLI_PATH;
const fs::path configs = MFGCN_CONFIG_DIR;

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("mfgcn_cli_test_" + std::to_string(::getpid())) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

struct RunResult {
    int code;
    std::string err;
};

RunResult run(const std::string& args, const fs::path& out, const std::string& env = "MFG_LOG=quiet") {
    const fs::path err = out / "stderr.txt";
    const std::string cmd = env + " '" + cli.string() + "' " + args + " --output '" + out.string() + "' 2> '" +
                            err.string() + "' > /dev/null";
    const int status = std::system(cmd.c_str());
    std::ifstream in(err);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

json manifest(const fs::path& out) {
    std::ifstream in(out / "manifest.json");
    return json::parse(in);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string first_line(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    return line;
}

io::ConfigFile parse(const std::string& text) {
    std::istringstream in(text);
    return io::ConfigFile::parse(in, "test.cfg");
}

void expect_config_error(const std::string& text, const std::string& fragment) {
    try {
        io::to_run_config(parse(text));
        FAIL() << text;
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::configuration);
        EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
}

}  // namespace

TEST(ConfigFile, SectionsCommentsAndTypes) {
    const io::RunConfig c = io::to_run_config(parse(
        "problem = relativistic  # trailing comment\n"
        "seed = 7\n"
        "; full-line comment\n"
        "[grid]\npoints = 96\n"
        "[tree]\nlevels = 3\nbeta = 0.15\n"
        "[fixpoint]\nmode = fictitious-play\nmax_iters = 12\nrefine_epsilon = false\n"));
    EXPECT_EQ(c.problem.name, "relativistic");
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.problem.grid_points, 96u);
    EXPECT_EQ(c.problem.n_levels, 3u);
    EXPECT_DOUBLE_EQ(c.problem.beta, 0.15);
    EXPECT_EQ(c.fixpoint.mode, FixpointConfig::Mode::fictitious_play);
    EXPECT_EQ(c.fixpoint.max_iters, 12u);
    EXPECT_FALSE(c.fixpoint.refine_epsilon);
}

TEST(ConfigFile, RejectsUnknownDuplicateAndMalformed) {
    expect_config_error("bogus = 1\n", "unknown key 'bogus'");
    expect_config_error("[grid]\nlevels = 3\n", "unknown key 'grid.levels'");
    expect_config_error("seed = 1\nseed = 2\n", "duplicate key");
    expect_config_error("[grid\n", "test.cfg:1");
    expect_config_error("problem\n", "expected 'key = value'");
    expect_config_error("[grid]\npoints = many\n", "grid.points");
    expect_config_error("[tree]\nbeta = nan\n", "tree.beta");
}

TEST(ConfigFile, RangeValidation) {
    expect_config_error("[grid]\npoints = 4\n", "points");
    expect_config_error("[tree]\nlevels = 15\n", "levels");
    expect_config_error("[fixpoint]\nmode = newton\n", "mode");
    expect_config_error("[sweep]\nkind = everything\n", "kind");
}

TEST(Io, NodeIds) {
    EXPECT_EQ(io::node_id(0, 0), 0u);
    EXPECT_EQ(io::node_id(1, 1), 2u);
    EXPECT_EQ(io::node_id(3, 0), 7u);
}

TEST(Io, CsvHeadersAndRows) {
    const fs::path dir = scratch("csv");
    io::write_residual_csv(dir / "r.csv", {0.5, 0.25});
    EXPECT_EQ(slurp(dir / "r.csv"), "iter,residual\n1,0.5\n2,0.25\n");
    {
        io::FieldCsv csv(dir / "f.csv");
        csv.add(0.5, 3, GridField(Grid1D(0.0, 1.0, 8), 2.0));
    }
    std::ifstream in(dir / "f.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "t,node_id,x,value");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 8u);
}

TEST(Io, TreeManifest) {
    const json j = io::tree_manifest(NoiseTree(2, 0.5, 0.1));
    ASSERT_EQ(j["nodes"].size(), 7u);
    EXPECT_EQ(j["nodes"][0]["id"], 0);
    EXPECT_EQ(j["nodes"][6]["parent"], 2);
    EXPECT_EQ(io::number(NAN), "nan");
}

TEST(Cli, CflViolationExitsTwoAndPrintsInequality) {
    const fs::path out = scratch("cfl");
    const RunResult r = run("solve-hjb --config '" + (configs / "cfl_violation.cfg").string() + "'", out);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("dt="), std::string::npos);
    EXPECT_NE(r.err.find("dx^2/(2(sup a+eps)+dx*theta)"), std::string::npos);
    const json m = manifest(out);
    EXPECT_EQ(m["exit_code"], 2);
    EXPECT_EQ(m["error"]["kind"], "configuration");
    EXPECT_EQ(m["error"]["module"], "det-hjb");
}

TEST(Cli, MaxItersOneExitsFourWithOneResidual) {
    const fs::path out = scratch("max1");
    const RunResult r = run("solve-mfg --config '" + (configs / "max_iters_one.cfg").string() + "'", out);
    EXPECT_EQ(r.code, 4);
    const json m = manifest(out);
    EXPECT_EQ(m["status"], "failed");
    EXPECT_EQ(m["error"]["kind"], "non-convergence");
    EXPECT_EQ(m["diagnostics"]["mfg"]["residual_series"].size(), 1u);
    EXPECT_EQ(first_line(out / "residuals.csv"), "iter,residual");
}

TEST(Cli, UnknownKeyAndBadLogLevelExitTwo) {
    const fs::path out = scratch("bad");
    std::ofstream(out / "bad.cfg") << "problem = quadratic\nmystery = 3\n";
    RunResult r = run("solve-hjb --config '" + (out / "bad.cfg").string() + "'", out);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("unknown key 'mystery'"), std::string::npos);
    EXPECT_TRUE(fs::exists(out / "manifest.json"));
    r = run("solve-hjb --config '" + (configs / "quadratic.cfg").string() + "'", out, "MFG_LOG=chatty");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("MFG_LOG"), std::string::npos);
}

TEST(Cli, SolveHjbWritesFieldCsv) {
    const fs::path out = scratch("hjb");
    const RunResult r = run("solve-hjb --config '" + (configs / "quadratic.cfg").string() + "' --seed 99", out);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(first_line(out / "hjb_values.csv"), "t,node_id,x,value");
    const json m = manifest(out);
    EXPECT_EQ(m["config"]["seed"], 99);
    EXPECT_EQ(m["status"], "ok");
    EXPECT_TRUE(m["diagnostics"]["det_hjb"]["structure"]["passed"].get<bool>());
}

TEST(Cli, SolveBshjbIsBitReproducible) {
    const fs::path a = scratch("rep_a"), b = scratch("rep_b");
    const std::string args = "solve-bshjb --config '" + (configs / "separated-gaussian.cfg").string() + "'";
    ASSERT_EQ(run(args, a).code, 0);
    ASSERT_EQ(run(args + " --workers 1", b).code, 0);
    for (const char* f : {"bshjb_values.csv", "bshjb_dM.csv", "tree.json"}) {
        EXPECT_FALSE(slurp(a / f).empty()) << f;
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    }
    const json tree = json::parse(slurp(a / "tree.json"));
    EXPECT_EQ(tree["nodes"].size(), 31u);
}

TEST(Cli, SolveFpReportsMassSeries) {
    const fs::path out = scratch("fp");
    ASSERT_EQ(run("solve-fp --config '" + (configs / "relativistic.cfg").string() + "'", out).code, 0);
    const json m = manifest(out);
    for (const auto& v : m["diagnostics"]["fokker_planck"]["mass_series"]) EXPECT_NEAR(v.get<double>(), 1.0, 1e-10);
    EXPECT_EQ(first_line(out / "fp_density.csv"), "t,node_id,x,value");
}

TEST(Cli, VerifyExitCodeFollowsPassTable) {
    const fs::path out = scratch("verify");
    const RunResult r = run("verify --config '" + (configs / "verify.cfg").string() + "'", out);
    const json m = manifest(out);
    ASSERT_TRUE(m["pass_table"].is_array());
    EXPECT_EQ(m["pass_table"].size(), 18u);
    bool all = true;
    for (const auto& row : m["pass_table"]) all = all && row["passed"].get<bool>();
    EXPECT_EQ(r.code, all ? 0 : 2);
    EXPECT_EQ(first_line(out / "residuals.csv"), "iter,residual");
}
